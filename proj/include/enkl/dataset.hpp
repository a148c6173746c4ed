#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "enkl/ensemble.hpp"

namespace enkl {

// Row-per-sample inputs and targets with optional train/test split tags.
struct Dataset {
  Matrix inputs;   // samples x input_dim
  Matrix targets;  // samples x output_dim
  std::vector<int> train_indices;
  std::vector<int> test_indices;

  Eigen::Index size() const { return inputs.rows(); }
  void validate() const;

  Matrix train_inputs() const;
  Matrix train_targets() const;
  Matrix test_inputs() const;
  Matrix test_targets() const;
};

// Per-column z-score statistics taken from the train split.
struct Standardizer {
  Vector input_mean, input_std;
  Vector target_mean, target_std;
};

// Seeded uniform shuffle, first (1 - test_fraction) of the permutation is
// the train split.
void split_dataset(Dataset& d, double test_fraction, std::uint64_t seed);

// z-scores inputs and targets in place using train-split statistics.
// Zero-variance columns are left unscaled.
Standardizer standardize(Dataset& d);

// CSV with a header row; the named column becomes the (single) target and
// every other column a feature, in header order.
Dataset ingest_csv(const std::string& path, const std::string& target_column);

// Big-endian IDX image/label pair; pixels scaled to [0,1], labels one-hot
// of width 10. limit <= 0 loads every record.
Dataset ingest_idx(const std::string& images_path,
                   const std::string& labels_path, int limit);

}  // namespace enkl
