#include "ticlab/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "ticlab/rng.hpp"

namespace ticlab {

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split: " + s);
}

const std::vector<int>& LabeledDataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train_indices;
    case Split::kValidation: return validation_indices;
    case Split::kTest: return test_indices;
  }
  throw std::invalid_argument("unknown split");
}

void LabeledDataset::validate(int num_classes) const {
  if (features.rows() != static_cast<std::int64_t>(labels.size())) {
    throw std::invalid_argument("feature/label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw std::invalid_argument("label out of range");
    }
  }
  std::vector<int> seen(n(), 0);
  for (const auto* idx : {&train_indices, &validation_indices, &test_indices}) {
    for (int i : *idx) {
      if (i < 0 || i >= n()) throw std::invalid_argument("split index out of range");
      if (seen[i]++) throw std::invalid_argument("splits overlap");
    }
  }
  for (int c : seen) {
    if (!c) throw std::invalid_argument("splits do not cover the dataset");
  }
}

void assign_splits(LabeledDataset& ds, double train_frac, double val_frac,
                   std::uint64_t seed) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0) {
    throw std::invalid_argument("invalid split fractions");
  }
  std::vector<int> order(ds.n());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const int n_train = static_cast<int>(train_frac * ds.n());
  const int n_val = static_cast<int>(val_frac * ds.n());
  ds.train_indices.assign(order.begin(), order.begin() + n_train);
  ds.validation_indices.assign(order.begin() + n_train,
                               order.begin() + n_train + n_val);
  ds.test_indices.assign(order.begin() + n_train + n_val, order.end());
}

double mean_loss_subset(const NetworkSpec& spec, const ParamVector& params,
                        const LabeledDataset& ds,
                        std::span<const int> indices) {
  if (indices.empty()) throw std::invalid_argument("empty index set");
  double sum = 0.0;
  for (int i : indices) sum += loss(spec, params, ds.x(i), ds.labels[i]);
  return sum / static_cast<double>(indices.size());
}

double mean_loss(const NetworkSpec& spec, const ParamVector& params,
                 const LabeledDataset& ds, Split split) {
  const std::vector<int>& idx = ds.split(split);
  if (idx.empty()) throw std::invalid_argument("empty split");
  return mean_loss_subset(spec, params, ds, idx);
}

double accuracy(const NetworkSpec& spec, const ParamVector& params,
                const LabeledDataset& ds, Split split) {
  const std::vector<int>& idx = ds.split(split);
  if (idx.empty()) throw std::invalid_argument("empty split");
  int correct = 0;
  for (int i : idx) {
    Vector logits = forward(spec, params, ds.x(i));
    int arg = 0;
    logits.maxCoeff(&arg);
    if (arg == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

namespace {

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("truncated IDX file: " + path);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

IdxImages load_idx_images(const std::string& path, int pool_factor) {
  if (pool_factor < 1) throw std::invalid_argument("pool_factor must be >= 1");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open IDX file: " + path);
  const std::uint32_t magic = read_be_u32(in, path);
  if (magic != 0x00000803u) {
    throw std::runtime_error("bad IDX image magic in " + path);
  }
  const int count = static_cast<int>(read_be_u32(in, path));
  const int rows = static_cast<int>(read_be_u32(in, path));
  const int cols = static_cast<int>(read_be_u32(in, path));
  if (rows % pool_factor != 0 || cols % pool_factor != 0) {
    throw std::invalid_argument("image sides not divisible by pool_factor");
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(rows) * cols);
  IdxImages images;
  images.count = count;
  images.rows = rows / pool_factor;
  images.cols = cols / pool_factor;
  images.data.resize(count, static_cast<std::int64_t>(images.rows) * images.cols);
  const double cell = static_cast<double>(pool_factor) * pool_factor * 255.0;
  for (int i = 0; i < count; ++i) {
    if (!in.read(reinterpret_cast<char*>(raw.data()),
                 static_cast<std::streamsize>(raw.size()))) {
      throw std::runtime_error("truncated IDX image payload: " + path);
    }
    for (int r = 0; r < images.rows; ++r) {
      for (int c = 0; c < images.cols; ++c) {
        double sum = 0.0;
        for (int dr = 0; dr < pool_factor; ++dr) {
          for (int dc = 0; dc < pool_factor; ++dc) {
            sum += raw[static_cast<std::size_t>(r * pool_factor + dr) * cols +
                       (c * pool_factor + dc)];
          }
        }
        images.data(i, r * images.cols + c) = sum / cell;
      }
    }
  }
  return images;
}

std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open IDX file: " + path);
  const std::uint32_t magic = read_be_u32(in, path);
  if (magic != 0x00000801u) {
    throw std::runtime_error("bad IDX label magic in " + path);
  }
  const int count = static_cast<int>(read_be_u32(in, path));
  std::vector<unsigned char> raw(count);
  if (!in.read(reinterpret_cast<char*>(raw.data()), count)) {
    throw std::runtime_error("truncated IDX label payload: " + path);
  }
  return std::vector<int>(raw.begin(), raw.end());
}

LabeledDataset load_idx_dataset(const std::string& images_path,
                                const std::string& labels_path,
                                int pool_factor, double train_frac,
                                double val_frac, std::uint64_t split_seed) {
  IdxImages images = load_idx_images(images_path, pool_factor);
  std::vector<int> labels = load_idx_labels(labels_path);
  if (static_cast<int>(labels.size()) != images.count) {
    throw std::runtime_error("IDX image/label count mismatch");
  }
  LabeledDataset ds;
  ds.features = std::move(images.data);
  ds.labels = std::move(labels);
  assign_splits(ds, train_frac, val_frac, split_seed);
  return ds;
}

}  // namespace ticlab
