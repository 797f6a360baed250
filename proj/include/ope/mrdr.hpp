#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ope/core.hpp"
#include "ope/fit_dm.hpp"
#include "ope/linmodel.hpp"
#include "ope/policies.hpp"

namespace ope {

// diag(1/pi_b(a|x)) - e e^T over the listed actions.
struct OmegaMatrix {
  std::vector<Action> support;
  Eigen::MatrixXd m;
};

// Full action set; throws ZeroProbabilityError if pi_b(a|x) = 0 for some a.
OmegaMatrix omega_matrix(const Policy& pi_b, const State& x);
// Restricted to {a : pi_b(a|x) > 0}. Throws ZeroProbabilityError if pi_e puts mass outside it.
OmegaMatrix omega_on_support(const Policy& pi_b, const Policy& pi_e, const State& x);

// q(x,a,r)[a'] = pi_e(a'|x) Q(x,a') - 1{a'=a} r
Eigen::VectorXd q_vector(const State& x, Action a, double r, const LinearQModel& model, const Policy& pi_e);

struct ObjectiveValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

// J_n = (1/n) sum_i omega_i q_i^T Omega(x_i) q_i
ObjectiveValue mrdr_objective_bandit(std::span<const Step> samples, const LinearQModel& model, const Policy& pi_e,
                                     const Policy& pi_b);
// J_n = (1/n) sum_i sum_t gamma^{2t} omega_{0:t-1}^2 rho_t q(x_t, a_t, Rbar_t)^T Omega(x_t) q(...)
ObjectiveValue mrdr_objective_rl(const Dataset& data, const LinearQModel& model, const Policy& pi_e,
                                 const Policy& pi_b);

// The RL objective expanded as beta^T A beta - 2 b^T beta + c (exact for linear models).
QuadraticObjective mrdr_quadratic(const Dataset& data, const Policy& pi_e, const Policy& pi_b,
                                  const FeatureMap& features);

// MRDR0: (1/n) sum_i DR_i(beta)^2 written as a WLS problem. DR_i(beta) = c_i - g_i . beta.
WlsProblem mrdr0_problem(const Dataset& data, const Policy& pi_e, const Policy& pi_b, const FeatureMap& features);

enum class MrdrMode { MRDR0, MRDR };

struct MrdrFitConfig {
  MrdrMode mode = MrdrMode::MRDR;
  Solver solver = Solver::WLS;  // WLS: solve the normal equations directly; GD: gd_minimize
  double ridge = 0.0;           // 0 means: retry with kDefaultRidge if singular
  GdConfig gd;
};

// Minimizes the MRDR (or MRDR0) objective starting from warm_start, or from
// the DM fit when none is given. Directions the objective does not identify
// stay at the warm start.
LinearQModel mrdr_fit(const Dataset& data, const Policy& pi_e, const Policy& pi_b, FeatureMapPtr features,
                      const MrdrFitConfig& config = {}, const LinearQModel* warm_start = nullptr);

enum class Setting { Bandit, RL };

// Deterministic pi_e: rows at steps where a_t = pi_e(x_t), target Rbar_t,
// weight gamma^{2t} omega_{0:t-1}^2 (1 - pi_b) / pi_b^2 / n.
WlsProblem mrdr_deterministic_problem(const Dataset& data, const DeterministicPolicy& pi_e, const Policy& pi_b,
                                      const FeatureMap& features, Setting setting);
LinearQModel mrdr_wls_deterministic(const Dataset& data, const DeterministicPolicy& pi_e, const Policy& pi_b,
                                    FeatureMapPtr features, Setting setting);

// Contextual bandit small enough to enumerate: contexts x with P0(x), policies
// as row-stochastic matrices [x][a], reward mean and variance per (x, a).
struct BanditSpec {
  std::vector<double> p0;
  Eigen::MatrixXd pi_b;
  Eigen::MatrixXd pi_e;
  Eigen::MatrixXd reward_mean;
  Eigen::MatrixXd reward_var;

  int contexts() const { return static_cast<int>(p0.size()); }
  int actions() const { return static_cast<int>(pi_b.cols()); }
  void validate() const;
  std::shared_ptr<TabularPolicy> behavior() const;
  std::shared_ptr<TabularPolicy> evaluation() const;
};

// n * Var of the bandit DR estimator, in the omega-weighted expectation form.
double bandit_dr_variance_closed_form(const BanditSpec& spec, const LinearQModel& model);
// The same quantity via the bias decomposition: Var_P0(V) + E[pi_e^2/pi_b sigma^2] + E_x Var_b(omega (Q - Q_hat)).
double bandit_dr_variance_delta_form(const BanditSpec& spec, const LinearQModel& model);
// Population J(beta) = E_b[omega q^T Omega q], expectations over the reward taken exactly.
double bandit_mrdr_objective_exact(const BanditSpec& spec, const LinearQModel& model);
// The beta-free constant with n * Var = J(beta) + C.
double bandit_variance_constant(const BanditSpec& spec);

// Draws n (x, a, r, p_b) samples with Gaussian rewards.
std::vector<Step> sample_bandit(const BanditSpec& spec, int n, Rng& rng);

// Wraps bandit samples as T = 1 trajectories.
Dataset bandit_dataset(std::span<const Step> samples);

}  // namespace ope
