#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "peac/data.hpp"
#include "peac/image.hpp"
#include "peac/model.hpp"

namespace peac {

/// Mean-pooled token features of every image, resized to the encoder crop
/// side. One row per image. Parameters are only read.
Matrix extract_features(const EncoderConfig& config, const ParamSet& params, std::span<const Image> images);
Matrix extract_features(const EncoderConfig& config, const ParamSet& params, const Dataset& data);

struct ProbeOptions {
  double test_fraction = 0.2;
  double l2 = 1e-3;
  double learning_rate = 0.5;
  int iterations = 500;
};

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<double> per_class;  ///< accuracy per class id (NaN when a class has no eval samples)
  int n_eval = 0;
  int n_train = 0;
  std::uint64_t seed = 0;
  std::string checkpoint;
};

/// Multinomial logistic regression on standardized features.
///
/// Identical feature rows are grouped and each group goes wholly to train or
/// eval; groups are split per class (by the label of their first member) with
/// `test_fraction` of each class's groups, rounded up, held out. Throws
/// ConfigError with fewer than 2 classes or fewer than 10 samples in a class.
ProbeResult linear_probe(const Matrix& features, std::span<const int> labels, std::uint64_t seed,
                         const ProbeOptions& options = {});

/// One JSON object.
std::string to_json(const ProbeResult& result);

}  // namespace peac
