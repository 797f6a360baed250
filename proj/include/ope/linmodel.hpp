#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ope/core.hpp"
#include "ope/trajectory_io.hpp"

namespace ope {

struct SparseEntry {
  int index;
  double value;
};
using SparseVector = std::vector<SparseEntry>;

class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual int dim() const = 0;
  virtual int action_count() const = 0;
  // Overwrites out with the non-zero entries of phi(x, a). The absorbing state maps to zero.
  virtual void sparse_phi(const State& x, Action a, SparseVector& out) const = 0;
  virtual Json descriptor() const = 0;

  Eigen::VectorXd phi(const State& x, Action a) const;
};

using FeatureMapPtr = std::shared_ptr<const FeatureMap>;

// One-hot over (state id, action); kappa = num_states * num_actions.
FeatureMapPtr tabular_features(int num_states, int num_actions);

// Grid tile coding over the leading state features, one block per action and
// per horizon bin. Values outside [low, high] land in the boundary bin; bins are
// half-open so a value on a boundary goes to the upper bin.
struct TileSpec {
  std::vector<double> lows;
  std::vector<double> highs;
  std::vector<int> bins;
  int num_actions = 1;
  int horizon_bins = 1;
  int horizon = 1;
  int time_index = -1;  // position of the step counter in the state vector
};
FeatureMapPtr tile_features(TileSpec spec);

// Tiles over (position, velocity) with the step index at feature 2.
FeatureMapPtr mountaincar_features(int position_bins, int velocity_bins, int horizon_bins, int num_actions);
// Tiles over (position, angle, velocity, angular velocity) with the step index at feature 4.
FeatureMapPtr cartpole_features(int bins_per_dim, int horizon_bins);

// one-hot(a) (x) [x, 1]; used for bandits with real-valued contexts.
FeatureMapPtr action_linear_features(int context_dim, int num_actions);

FeatureMapPtr feature_map_from_descriptor(const Json& descriptor);

class LinearQModel {
 public:
  LinearQModel(FeatureMapPtr features, Eigen::VectorXd beta);

  double q(const State& x, Action a) const;
  double v(const State& x, const Policy& pi) const;
  const Eigen::VectorXd& beta() const { return beta_; }
  const FeatureMap& features() const { return *features_; }
  const FeatureMapPtr& features_ptr() const { return features_; }
  LinearQModel with_beta(Eigen::VectorXd beta) const { return LinearQModel(features_, std::move(beta)); }

 private:
  FeatureMapPtr features_;
  Eigen::VectorXd beta_;
};

Json model_to_json(const LinearQModel& model);
LinearQModel model_from_json(const Json& j);
void save_model(const std::filesystem::path& path, const LinearQModel& model);
LinearQModel load_model(const std::filesystem::path& path);

struct WlsRow {
  SparseVector phi;
  double target;
  double weight;
};

// argmin_beta sum_i w_i (y_i - phi_i . beta)^2 + ridge * |beta|^2
struct WlsProblem {
  int dim = 0;
  std::vector<WlsRow> rows;
  double ridge = 0.0;

  explicit WlsProblem(int kappa = 0) : dim(kappa) {}
  void add_row(SparseVector phi, double target, double weight);
  void add_row(const Eigen::VectorXd& phi, double target, double weight);
  double objective(const Eigen::VectorXd& beta, Eigen::VectorXd* grad = nullptr) const;
};

inline constexpr double kDefaultRidge = 1e-8;

// Normal equations (Phi^T W Phi + ridge I) beta = Phi^T W y via sparse LDL^T.
// Throws SingularSystemError on a rank-deficient system, DegenerateWeightsError if no weight is positive.
Eigen::VectorXd wls_solve(const WlsProblem& problem);
// wls_solve, retrying once with kDefaultRidge when ridge is zero and the system is singular.
Eigen::VectorXd wls_solve_or_ridge(const WlsProblem& problem);

// J(beta) = beta^T A beta - 2 b^T beta + c with A symmetric PSD.
struct QuadraticObjective {
  Eigen::SparseMatrix<double> A;
  Eigen::VectorXd b;
  double c = 0.0;

  double value(const Eigen::VectorXd& beta, Eigen::VectorXd* grad = nullptr) const;
  // Solves A beta = b (plus ridge on the diagonal); same singularity rules as wls_solve.
  Eigen::VectorXd minimizer(double ridge = 0.0) const;
};

// Sums of weighted outer products. Accumulates densely for moderate kappa
// (rows with many non-zeros would otherwise explode the triplet count) and as
// triplets beyond that.
class GramAccumulator {
 public:
  explicit GramAccumulator(int dim);
  // += w * u v^T
  void add_outer(const SparseVector& u, const SparseVector& v, double w);
  void add_diagonal(double value);
  Eigen::SparseMatrix<double> matrix() const;

 private:
  static constexpr int kDenseLimit = 4096;
  int dim_;
  Eigen::MatrixXd dense_;
  std::vector<Eigen::Triplet<double>> triplets_;
};

// Sparse LDL^T solve of a symmetric PSD system. With require_full_rank, tiny
// pivots (relative to the largest) raise SingularSystemError; otherwise only
// non-positive pivots do.
Eigen::VectorXd solve_spd(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b,
                          bool require_full_rank = true);

using Objective = std::function<double(const Eigen::VectorXd& beta, Eigen::VectorXd* grad)>;

struct GdConfig {
  int max_iters = 5000;
  double grad_tol = 1e-6;  // on the infinity norm of the gradient
  double initial_step = 1.0;
  double shrink = 0.5;  // backtracking factor
  double armijo = 1e-4;
  int max_backtracks = 60;
};

struct GdResult {
  Eigen::VectorXd beta;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Full-batch gradient descent. Step sizes start from the Barzilai-Borwein
// estimate and are cut back until a non-monotone Armijo condition holds
// (measured against the largest of the last 10 values). Returns the best
// iterate seen. Throws DivergenceError if the objective exceeds 1e12 or turns non-finite.
GdResult gd_minimize(const Objective& objective, Eigen::VectorXd beta0, const GdConfig& config = {});

Eigen::VectorXd finite_difference_gradient(const Objective& objective, const Eigen::VectorXd& beta, double h = 1e-5);
// |g - g_fd|_inf / max(|g|_inf, |g_fd|_inf)
double gradient_relative_error(const Objective& objective, const Eigen::VectorXd& beta, double h = 1e-5);

}  // namespace ope
