#pragma once

#include <span>

#include "ope/core.hpp"
#include "ope/linmodel.hpp"
#include "ope/tabular.hpp"

namespace ope {

enum class DmMode { DM0, DM };
enum class Solver { WLS, GD };

struct DmFitConfig {
  DmMode mode = DmMode::DM;
  Solver solver = Solver::WLS;
  double ridge = 0.0;  // 0 means: retry with kDefaultRidge if singular
  GdConfig gd;
};

// One row per non-absorbing (i, t): phi(x_t, a_t), target R-bar_{t:T-1},
// weight gamma^t omega_{0:t} / n (DM) or 1 / n (DM0). Trajectories are visited
// in canonical order so the result does not depend on dataset order.
WlsProblem dm_problem(const Dataset& data, const Policy& pi_e, const Policy& pi_b, const FeatureMap& features,
                      DmMode mode);

LinearQModel dm_fit_rl(const Dataset& data, const Policy& pi_e, const Policy& pi_b, FeatureMapPtr features,
                       const DmFitConfig& config = {});

// Rows for samples whose action matches pi_e, weighted 1 / p_b.
WlsProblem dm_bandit_problem(std::span<const Step> samples, const DeterministicPolicy& pi_e,
                             const FeatureMap& features);
LinearQModel dm_fit_bandit(std::span<const Step> samples, const DeterministicPolicy& pi_e, FeatureMapPtr features,
                           const DmFitConfig& config = {});

// Solve a WLS problem with the configured solver (shared with the MRDR fitters).
Eigen::VectorXd solve_wls(const WlsProblem& problem, Solver solver, double ridge, const GdConfig& gd);

// E_mu[(Q - Q_hat)^2] under the normalized discounted occupancy of pi_e, by DP.
// Normalization is (1 - gamma) / (1 - gamma^T), or 1/T when gamma = 1.
double occupancy_objective_check(const TabularModel& mdp, const Policy& pi_e, const LinearQModel& model, double gamma,
                                 int T);

// Minimizer of occupancy_objective_check over tabular models on observations.
LinearQModel occupancy_projection(const TabularModel& mdp, const Policy& pi_e, double gamma, int T);

}  // namespace ope
