#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ope/envs.hpp"
#include "ope/estimators.hpp"
#include "ope/linmodel.hpp"
#include "ope/trajectory_io.hpp"

namespace ope {

// Key-value experiment description. One "key = value" per line, '#' starts a
// comment, list values are comma separated. See README for the schema.
struct ExperimentConfig {
  std::string env = "model-fail";  // environment id, or "bandit"
  std::string behavior = "behavior";
  std::string evaluation = "evaluation";
  std::string features = "default";
  int train_size = 64;
  std::vector<int> sizes{32, 64, 128, 256, 512};
  std::vector<EstimatorId> estimators{EstimatorId::DM, EstimatorId::IS, EstimatorId::DR, EstimatorId::MRDR,
                                      EstimatorId::DR0};
  int replicates = 100;
  double gamma = 1.0;
  std::uint64_t seed = 1;
  std::optional<TruthMethod> truth;  // default: exact DP when tabular, Monte Carlo otherwise
  long truth_episodes = 1000000;
  std::string truth_cache;  // directory for cached Monte Carlo truths; empty disables caching
  double significance_level = 0.95;
  int threads = 0;  // 0: one per hardware thread

  // Bandit experiments: rows are behavior policies applied to the test split.
  std::string dataset;  // CSV path, or "blobs:classes:dim:count:spread"
  std::vector<std::string> behaviors;
  double train_fraction = 0.5;  // share of examples used to train the base classifier

  bool is_bandit() const { return env == "bandit"; }
  void validate() const;  // throws InvalidInput
};

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical key-value rendering; parse_config(render_config(c)) == c.
std::string render_config(const ExperimentConfig& config);
Json config_to_json(const ExperimentConfig& config);
// 64-bit FNV-1a of the canonical rendering, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// "default", "tabular", "mountaincar:PB:VB:HB", "cartpole:B:HB".
FeatureMapPtr make_features(std::string_view spec, const Environment& env);

// Fits the model an estimator family reads. MRDR kinds warm-start from dm,
// which is fitted here when not supplied.
LinearQModel fit_model(ModelKind kind, const Dataset& data, const Policy& pi_e, const Policy& pi_b,
                       FeatureMapPtr features, const LinearQModel* dm = nullptr);

struct ExperimentResult {
  std::string config_hash;
  Json config;
  double truth = 0.0;
  double truth_standard_error = 0.0;
  TruthMethod truth_method = TruthMethod::ExactDP;
  std::string row_kind;  // "sample_size" or "behavior"
  std::vector<std::string> rows;
  std::vector<EstimatorId> estimators;
  std::vector<std::vector<double>> rmse;                    // [estimator][row]
  std::vector<std::vector<std::vector<double>>> estimates;  // [estimator][row][replicate]
  std::vector<bool> significance;                           // [row], MRDR beats DR
  bool significance_tested = false;
  std::vector<std::uint64_t> replicate_seeds;
  std::vector<int> used_replicates;
  std::vector<std::string> warnings;

  Json to_json() const;
};

// sqrt(sum_j (est_j - truth)^2 / N)
double rmse(std::span<const double> estimates, double truth);

// Paired two-sided t-test on the squared errors: true iff errors_a has the
// smaller mean square and p < 1 - level. Zero-variance differences count as
// significant when the constant difference favors a.
bool significance_test(std::span<const double> errors_a, std::span<const double> errors_b, double level = 0.95);

ExperimentResult run_experiment(const ExperimentConfig& config);

std::string render_markdown(const ExperimentResult& result);
std::string render_csv(const ExperimentResult& result);
// result.json, result.csv, result.md, and run_info.json (the only file with a timestamp).
void write_result(const ExperimentResult& result, const std::filesystem::path& dir);

}  // namespace ope
