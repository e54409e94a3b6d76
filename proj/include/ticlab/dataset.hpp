#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ticlab/network.hpp"

namespace ticlab {

enum class Split { kTrain, kValidation, kTest };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

// In-memory classification dataset with disjoint index-based splits.
struct LabeledDataset {
  RowMajorMatrix features;  // n x input_dim, one example per row
  std::vector<int> labels;
  std::vector<int> train_indices;
  std::vector<int> validation_indices;
  std::vector<int> test_indices;

  int n() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  const std::vector<int>& split(Split s) const;

  // Checks label range, index bounds, split disjointness and coverage.
  void validate(int num_classes) const;

  Eigen::Map<const Vector> x(int i) const {
    return Eigen::Map<const Vector>(features.data() +
                                        static_cast<std::int64_t>(i) *
                                            features.cols(),
                                    features.cols());
  }
};

// Seeded 0..n-1 permutation split into train/validation/test by fractions
// (train and validation counts are floored, test takes the remainder).
void assign_splits(LabeledDataset& ds, double train_frac, double val_frac,
                   std::uint64_t seed);

// Mean loss over an explicit index set, summed in the given order.
double mean_loss_subset(const NetworkSpec& spec, const ParamVector& params,
                        const LabeledDataset& ds, std::span<const int> indices);

// Mean loss over a split, summed in the split's stored index order.
// Throws std::invalid_argument on an empty split.
double mean_loss(const NetworkSpec& spec, const ParamVector& params,
                 const LabeledDataset& ds, Split split);

// Fraction of argmax-correct predictions over a split.
double accuracy(const NetworkSpec& spec, const ParamVector& params,
                const LabeledDataset& ds, Split split);

// IDX (big-endian) loaders. Image payloads are unsigned bytes scaled to
// [0, 1]; pool_factor > 1 applies integer-factor average pooling and
// requires both image sides to be divisible by the factor.
struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  RowMajorMatrix data;  // count x (rows*cols)
};

IdxImages load_idx_images(const std::string& path, int pool_factor = 1);
std::vector<int> load_idx_labels(const std::string& path);

LabeledDataset load_idx_dataset(const std::string& images_path,
                                const std::string& labels_path,
                                int pool_factor, double train_frac,
                                double val_frac, std::uint64_t split_seed);

}  // namespace ticlab
