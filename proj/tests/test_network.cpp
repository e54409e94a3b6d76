#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "ticlab/dataset.hpp"
#include "ticlab/network.hpp"
#include "ticlab/rng.hpp"

using namespace ticlab;

namespace {

NetworkSpec make_spec(int in, std::vector<int> hidden, int classes,
                      Activation act, bool skip = false) {
  NetworkSpec spec;
  spec.input_dim = in;
  spec.hidden_widths = std::move(hidden);
  spec.num_classes = classes;
  spec.activation = act;
  spec.skip_connections = skip;
  return spec;
}

}  // namespace

TEST_CASE("spec validation accepts well-formed networks and rejects bad ones") {
  CHECK_NOTHROW(make_spec(3, {4, 4}, 2, Activation::kRelu).validate());
  CHECK_NOTHROW(make_spec(1, {}, 2, Activation::kIdentity).validate());
  CHECK_NOTHROW(make_spec(2, {5, 5, 5}, 3, Activation::kRelu, true).validate());
  CHECK_THROWS_AS(make_spec(0, {4}, 2, Activation::kRelu).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_spec(3, {4}, 1, Activation::kRelu).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_spec(3, {4, 0}, 2, Activation::kRelu).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_spec(3, {4, 5}, 2, Activation::kRelu, true).validate(),
                  std::invalid_argument);
}

TEST_CASE("param_count matches the per-layer formula") {
  CHECK(make_spec(4, {8}, 3, Activation::kRelu).param_count() == 4 * 8 + 8 + 8 * 3 + 3);
  CHECK(make_spec(7, {}, 2, Activation::kIdentity).param_count() == 7 * 2 + 2);
  CHECK(make_spec(2, {3, 5}, 4, Activation::kRelu).param_count() ==
        (2 * 3 + 3) + (3 * 5 + 5) + (5 * 4 + 4));
}

TEST_CASE("layout partitions the flat vector exactly") {
  Rng rng(41);
  for (int rep = 0; rep < 30; ++rep) {
    NetworkSpec spec = oracle::random_spec(rng);
    ParamLayout layout = ParamLayout::for_spec(spec);
    std::int64_t expect = 0;
    for (const LayerSegment& seg : layout.segments) {
      CHECK(seg.weight_offset == expect);
      CHECK(seg.bias_offset == seg.weight_offset + std::int64_t(seg.rows) * seg.cols);
      expect += seg.size();
    }
    CHECK(layout.dim == expect);
    CHECK(layout.dim == spec.param_count());
    CHECK(layout.segments.size() == std::size_t(spec.num_layers()));
  }
}

TEST_CASE("zero parameters produce zero logits") {
  NetworkSpec spec = make_spec(4, {6, 6}, 3, Activation::kRelu);
  ParamVector params = ParamVector::zeros(spec);
  Vector x(4);
  x << 0.3, -1.2, 2.0, 0.7;
  Vector logits = forward(spec, params, x);
  for (int k = 0; k < 3; ++k) CHECK(logits[k] == 0.0);
}

TEST_CASE("identity weight stacks pass the input through") {
  NetworkSpec spec = make_spec(3, {3, 3}, 3, Activation::kIdentity);
  ParamVector params = ParamVector::zeros(spec);
  for (int l = 0; l < spec.num_layers(); ++l) {
    params.weight(l).setIdentity();
  }
  Vector x(3);
  x << -0.5, 1.25, 3.0;
  Vector logits = forward(spec, params, x);
  for (int k = 0; k < 3; ++k) CHECK(logits[k] == doctest::Approx(x[k]).epsilon(1e-15));
}

TEST_CASE("forward matches a plain-loop reference on random networks") {
  Rng rng(1234);
  for (int rep = 0; rep < 40; ++rep) {
    NetworkSpec spec = oracle::random_spec(rng);
    ParamVector params = ParamVector::initialize(spec, rng.next_u64());
    Vector x(spec.input_dim);
    for (int j = 0; j < spec.input_dim; ++j) x[j] = rng.normal();
    Vector got = forward(spec, params, x);
    std::vector<double> want =
        oracle::forward_plain(spec, oracle::to_std(params.values), x.data());
    for (int k = 0; k < spec.num_classes; ++k) {
      CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("identity activation collapses to one affine map") {
  Rng rng(77);
  for (bool skip : {false, true}) {
    NetworkSpec spec = make_spec(4, {4, 4, 4}, 3, Activation::kIdentity, skip);
    ParamVector params = ParamVector::initialize(spec, 99);
    // Fold the layer maps (with optional residual additions) into (A, b).
    Matrix a = Matrix::Identity(4, 4);
    Vector b = Vector::Zero(4);
    for (int l = 0; l < 3; ++l) {
      Matrix w = params.weight(l);
      Vector bias = params.bias(l);
      Matrix a_next = w * a;
      Vector b_next = w * b + bias;
      if (skip && l >= 1) {
        a_next += a;
        b_next += b;
      }
      a = a_next;
      b = b_next;
    }
    Matrix w_out = params.weight(3);
    a = w_out * a;
    b = w_out * b + Vector(params.bias(3));
    for (int rep = 0; rep < 5; ++rep) {
      Vector x(4);
      for (int j = 0; j < 4; ++j) x[j] = rng.normal();
      Vector direct = forward(spec, params, x);
      Vector affine = a * x + b;
      for (int k = 0; k < 3; ++k) {
        CHECK(direct[k] == doctest::Approx(affine[k]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("skip connections change the function only where defined") {
  // One hidden layer: the skip flag must have no effect (no residual pair).
  NetworkSpec with = make_spec(3, {3}, 2, Activation::kRelu, true);
  NetworkSpec without = make_spec(3, {3}, 2, Activation::kRelu, false);
  ParamVector params = ParamVector::initialize(with, 5);
  Rng rng(6);
  Vector x(3);
  for (int j = 0; j < 3; ++j) x[j] = rng.normal();
  Vector a = forward(with, params, x);
  Vector b = forward(without, params, x);
  CHECK((a - b).lpNorm<Eigen::Infinity>() == 0.0);

  // Two hidden layers: the second one gets a residual addition.
  NetworkSpec deep_with = make_spec(3, {3, 3}, 2, Activation::kRelu, true);
  NetworkSpec deep_without = make_spec(3, {3, 3}, 2, Activation::kRelu, false);
  ParamVector deep_params = ParamVector::initialize(deep_with, 5);
  Vector c = forward(deep_with, deep_params, x);
  Vector d = forward(deep_without, deep_params, x);
  CHECK((c - d).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("uniform logits give log K loss") {
  NetworkSpec spec = make_spec(2, {4}, 10, Activation::kRelu);
  ParamVector params = ParamVector::zeros(spec);
  Vector x(2);
  x << 0.4, -0.9;
  for (int label : {0, 3, 9}) {
    CHECK(loss(spec, params, x, label) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }
}

TEST_CASE("extreme logits do not overflow") {
  Vector logits(2);
  logits << 1000.0, 0.0;
  const double near_zero = loss_from_logits(logits, 0);
  CHECK(near_zero >= 0.0);
  CHECK(near_zero <= 1e-300);
  const double huge = loss_from_logits(logits, 1);
  CHECK(std::isfinite(huge));
  CHECK(huge == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("loss matches an extended-precision reference") {
  Vector logits(3);
  logits << 1.0, 2.0, 3.0;
  const double want = static_cast<double>(oracle::loss_plain({1.0, 2.0, 3.0}, 1));
  CHECK(loss_from_logits(logits, 1) == doctest::Approx(want).epsilon(1e-12));
  Rng rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    Vector z(4);
    std::vector<double> zs(4);
    for (int k = 0; k < 4; ++k) {
      zs[k] = rng.uniform(-30.0, 30.0);
      z[k] = zs[k];
    }
    const int label = static_cast<int>(rng.uniform_index(4));
    CHECK(loss_from_logits(z, label) ==
          doctest::Approx(static_cast<double>(oracle::loss_plain(zs, label))).epsilon(1e-12));
    CHECK(loss_from_logits(z, label) >= 0.0);
  }
}

TEST_CASE("mean_loss basics") {
  NetworkSpec spec = make_spec(3, {5}, 3, Activation::kRelu);
  ParamVector params = ParamVector::initialize(spec, 17);
  LabeledDataset one = oracle::random_dataset(spec, 1, 3);
  CHECK(mean_loss(spec, params, one, Split::kTrain) ==
        loss(spec, params, one.x(0), one.labels[0]));

  // Duplicating the single example leaves the mean unchanged.
  LabeledDataset two = oracle::make_dataset(
      {{one.features(0, 0), one.features(0, 1), one.features(0, 2)},
       {one.features(0, 0), one.features(0, 1), one.features(0, 2)}},
      {one.labels[0], one.labels[0]});
  CHECK(std::abs(mean_loss(spec, params, two, Split::kTrain) -
                 mean_loss(spec, params, one, Split::kTrain)) <= 1e-15);
}

TEST_CASE("mean_loss equals the hand-rolled average and is order independent") {
  NetworkSpec spec = make_spec(2, {4, 4}, 2, Activation::kIdentity);
  ParamVector params = ParamVector::initialize(spec, 21);
  LabeledDataset ds = oracle::random_dataset(spec, 5, 11);
  double sum = 0.0;
  for (int i = 0; i < 5; ++i) sum += loss(spec, params, ds.x(i), ds.labels[i]);
  CHECK(mean_loss(spec, params, ds, Split::kTrain) ==
        doctest::Approx(sum / 5.0).epsilon(1e-12));

  std::vector<int> shuffled = {4, 2, 0, 3, 1};
  CHECK(mean_loss_subset(spec, params, ds, shuffled) ==
        doctest::Approx(mean_loss(spec, params, ds, Split::kTrain)).epsilon(1e-12));
}

TEST_CASE("mean_loss rejects an empty split") {
  NetworkSpec spec = make_spec(2, {4}, 2, Activation::kRelu);
  ParamVector params = ParamVector::zeros(spec);
  LabeledDataset ds = oracle::random_dataset(spec, 3, 5);
  CHECK_THROWS_AS(mean_loss(spec, params, ds, Split::kValidation),
                  std::invalid_argument);
}

TEST_CASE("initialization is seeded, zero-biased and correctly scaled") {
  NetworkSpec spec = make_spec(50, {80}, 4, Activation::kRelu);
  const ParamVector a = ParamVector::initialize(spec, 123);
  const ParamVector b = ParamVector::initialize(spec, 123);
  const ParamVector c = ParamVector::initialize(spec, 124);
  CHECK((a.values - b.values).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.values - c.values).lpNorm<Eigen::Infinity>() > 0.0);
  for (int l = 0; l < spec.num_layers(); ++l) {
    CHECK(Vector(a.bias(l)).lpNorm<Eigen::Infinity>() == 0.0);
  }
  // He scaling on the hidden layer: sample std near sqrt(2/50).
  WeightView w = a.weight(0);
  double ss = 0.0;
  for (int r = 0; r < w.rows(); ++r) {
    for (int cidx = 0; cidx < w.cols(); ++cidx) ss += w(r, cidx) * w(r, cidx);
  }
  const double sample_std = std::sqrt(ss / (w.rows() * w.cols()));
  CHECK(sample_std == doctest::Approx(std::sqrt(2.0 / 50)).epsilon(0.15));

  NetworkSpec ident = make_spec(50, {80}, 4, Activation::kIdentity);
  const ParamVector ai = ParamVector::initialize(ident, 123);
  WeightView wi = ai.weight(0);
  double ssi = 0.0;
  for (int r = 0; r < wi.rows(); ++r) {
    for (int cidx = 0; cidx < wi.cols(); ++cidx) ssi += wi(r, cidx) * wi(r, cidx);
  }
  CHECK(std::sqrt(ssi / (wi.rows() * wi.cols())) ==
        doctest::Approx(std::sqrt(1.0 / 50)).epsilon(0.15));
}

TEST_CASE("dataset validation catches malformed splits") {
  NetworkSpec spec = make_spec(2, {3}, 2, Activation::kRelu);
  LabeledDataset ds = oracle::random_dataset(spec, 4, 9);
  ds.validation_indices = {};
  ds.test_indices = {};
  CHECK_NOTHROW(ds.validate(2));

  LabeledDataset overlap = ds;
  overlap.validation_indices = {0};
  CHECK_THROWS_AS(overlap.validate(2), std::invalid_argument);

  LabeledDataset gap = ds;
  gap.train_indices = {0, 1, 2};
  CHECK_THROWS_AS(gap.validate(2), std::invalid_argument);

  LabeledDataset bad_label = ds;
  bad_label.labels[1] = 7;
  CHECK_THROWS_AS(bad_label.validate(2), std::invalid_argument);
}

TEST_CASE("assign_splits is seeded and uses floor fractions") {
  NetworkSpec spec = make_spec(2, {3}, 2, Activation::kRelu);
  LabeledDataset ds = oracle::random_dataset(spec, 100, 31);
  assign_splits(ds, 0.7, 0.15, 42);
  CHECK(ds.train_indices.size() == 70);
  CHECK(ds.validation_indices.size() == 15);
  CHECK(ds.test_indices.size() == 15);
  CHECK_NOTHROW(ds.validate(2));

  LabeledDataset again = ds;
  assign_splits(again, 0.7, 0.15, 42);
  CHECK(again.train_indices == ds.train_indices);
  CHECK(again.validation_indices == ds.validation_indices);

  LabeledDataset other = ds;
  assign_splits(other, 0.7, 0.15, 43);
  CHECK(other.train_indices != ds.train_indices);
}

namespace {

void write_be_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::filesystem::path write_idx_fixture(int count, int rows, int cols) {
  auto dir = std::filesystem::temp_directory_path() / "ticlab_idx_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream img(dir / "images.idx", std::ios::binary);
    write_be_u32(img, 0x00000803u);
    write_be_u32(img, count);
    write_be_u32(img, rows);
    write_be_u32(img, cols);
    for (int i = 0; i < count * rows * cols; ++i) {
      unsigned char byte = static_cast<unsigned char>(i % 256);
      img.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
  {
    std::ofstream lab(dir / "labels.idx", std::ios::binary);
    write_be_u32(lab, 0x00000801u);
    write_be_u32(lab, count);
    for (int i = 0; i < count; ++i) {
      unsigned char byte = static_cast<unsigned char>(i % 3);
      lab.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
  return dir;
}

}  // namespace

TEST_CASE("IDX loader reads, scales and pools") {
  auto dir = write_idx_fixture(4, 4, 4);
  IdxImages images = load_idx_images((dir / "images.idx").string());
  CHECK(images.count == 4);
  CHECK(images.rows == 4);
  CHECK(images.cols == 4);
  CHECK(images.data(0, 0) == doctest::Approx(0.0));
  CHECK(images.data(0, 5) == doctest::Approx(5.0 / 255.0));
  CHECK(images.data(1, 0) == doctest::Approx(16.0 / 255.0));

  IdxImages pooled = load_idx_images((dir / "images.idx").string(), 2);
  CHECK(pooled.rows == 2);
  CHECK(pooled.cols == 2);
  // First 2x2 block of image 0 holds bytes 0, 1, 4, 5.
  CHECK(pooled.data(0, 0) == doctest::Approx((0.0 + 1.0 + 4.0 + 5.0) / (4 * 255.0)));

  std::vector<int> labels = load_idx_labels((dir / "labels.idx").string());
  CHECK(labels == std::vector<int>{0, 1, 2, 0});

  LabeledDataset ds = load_idx_dataset((dir / "images.idx").string(),
                                       (dir / "labels.idx").string(), 2, 0.5,
                                       0.25, 7);
  CHECK(ds.n() == 4);
  CHECK(ds.dim() == 4);
  CHECK(ds.train_indices.size() == 2);
  CHECK(ds.validation_indices.size() == 1);
  CHECK(ds.test_indices.size() == 1);
}

TEST_CASE("IDX loader rejects malformed files") {
  auto dir = write_idx_fixture(2, 4, 4);
  CHECK_THROWS(load_idx_images((dir / "labels.idx").string()));
  CHECK_THROWS(load_idx_labels((dir / "images.idx").string()));
  CHECK_THROWS(load_idx_images((dir / "images.idx").string(), 3));
  CHECK_THROWS(load_idx_images((dir / "missing.idx").string()));

  {
    std::ofstream img(dir / "trunc.idx", std::ios::binary);
    write_be_u32(img, 0x00000803u);
    write_be_u32(img, 2);
    write_be_u32(img, 4);
    write_be_u32(img, 4);
    unsigned char byte = 0;
    img.write(reinterpret_cast<const char*>(&byte), 1);
  }
  CHECK_THROWS(load_idx_images((dir / "trunc.idx").string()));
}
