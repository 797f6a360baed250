#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "ope/core.hpp"
#include "ope/linmodel.hpp"
#include "ope/policies.hpp"

namespace ope {

struct LabeledExample {
  std::vector<double> features;
  int label = 0;
};

struct ClassificationData {
  std::vector<LabeledExample> examples;
  int num_classes = 0;
  int dim = 0;
};

// Numeric feature columns followed by an integer label column. A header row is
// skipped if its first field is not numeric. Labels must be 0..l-1.
ClassificationData load_classification_csv(const std::filesystem::path& path);

// Isotropic Gaussian blobs around random centers in [-1, 1]^dim.
ClassificationData make_blobs(int num_classes, int dim, int count, double spread, std::uint64_t seed);

// Shuffled split; the first part holds round(train_fraction * m) examples.
std::pair<ClassificationData, ClassificationData> split_classification(const ClassificationData& data,
                                                                       double train_fraction, std::uint64_t seed);

// One (x, a, 1{a = y}, pi(a|x)) sample per example, x as a continuous state.
std::vector<Step> classification_to_bandit(std::span<const LabeledExample> examples, const Policy& policy, Rng& rng);

// Exact value of pi_e on the examples: sum_x pi_e(y_x | x) / m.
double classification_value(std::span<const LabeledExample> examples, const Policy& pi_e);

struct LogisticConfig {
  double l2 = 1e-4;
  GdConfig gd{2000, 1e-6};
};

// Multinomial logistic regression on standardized features by gradient descent.
std::shared_ptr<LinearClassifierPolicy> train_logistic(std::span<const LabeledExample> examples, int num_classes,
                                                       const LogisticConfig& config = {});

}  // namespace ope
