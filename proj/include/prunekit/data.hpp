#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prunekit/forward.hpp"

namespace prunekit {

enum class DatasetRole { train, test };

// Samples column-wise (features is d x n), labels in {0, 1}.
struct Dataset {
  Eigen::MatrixXd features;
  Eigen::VectorXd labels;
  DatasetRole role = DatasetRole::train;
  std::string provenance;

  Index size() const { return features.cols(); }
  Index dim() const { return features.rows(); }
  double positive_fraction() const { return labels.mean(); }

  template <typename Scalar>
  Batch<Scalar> batch() const {
    return {features.cast<Scalar>(), labels.cast<Scalar>()};
  }
};

// Each class is a mixture of `clusters` unit-variance Gaussians. Cluster k of
// the two classes shares an anchor and the two means sit `difficulty` apart
// (in units of the within-class SD) along a cluster-specific direction, so the
// optimal decision boundary is piecewise linear.
struct SynthConfig {
  Index n_train = 50000;
  Index n_test = 10000;
  Index feature_dim = 64;
  double pos_balance_train = 0.753;
  double pos_balance_test = 0.799;
  double difficulty = 3.0;
  Index clusters = 8;
  double anchor_spread = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
};

std::pair<Dataset, Dataset> synth_generate(const SynthConfig& config);

// Header row of column names, one of which is "label"; every other column is a
// feature. Errors cite the 1-based line number.
Dataset load_csv(const std::string& path, DatasetRole role = DatasetRole::train);
void save_csv(const std::string& path, const Dataset& data);

// Seeded sample of `count` distinct rows.
std::vector<Index> resample_indices(Index n, Index count, std::uint64_t seed);
Dataset resample(const Dataset& data, Index count, std::uint64_t seed);

}  // namespace prunekit
