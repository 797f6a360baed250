#include "ope/fit_dm.hpp"

#include <cmath>

namespace ope {

WlsProblem dm_problem(const Dataset& data, const Policy& pi_e, const Policy& pi_b, const FeatureMap& features,
                      DmMode mode) {
  data.validate();
  WlsProblem prob(features.dim());
  const double inv_n = 1.0 / data.size();
  for (std::size_t i : canonical_order(data)) {
    const Trajectory& traj = data.trajectories[i];
    const auto rho = step_ratios(traj, pi_e, pi_b);
    const auto w = cumulative_weights(rho);
    const auto targets = corrected_returns(traj, rho, data.gamma);
    double disc = 1.0;
    for (int t = 0; t < traj.horizon(); ++t) {
      const Step& s = traj.steps[t];
      if (!s.state.is_absorbing()) {
        SparseVector phi;
        features.sparse_phi(s.state, s.action, phi);
        const double weight = mode == DmMode::DM ? disc * w[t] * inv_n : inv_n;
        prob.add_row(std::move(phi), targets[t], weight);
      }
      disc *= data.gamma;
    }
  }
  return prob;
}

Eigen::VectorXd solve_wls(const WlsProblem& problem, Solver solver, double ridge, const GdConfig& gd) {
  WlsProblem p = problem;
  p.ridge = ridge;
  if (solver == Solver::WLS) return ridge > 0.0 ? wls_solve(p) : wls_solve_or_ridge(p);
  const Objective obj = [&p](const Eigen::VectorXd& beta, Eigen::VectorXd* grad) { return p.objective(beta, grad); };
  return gd_minimize(obj, Eigen::VectorXd::Zero(p.dim), gd).beta;
}

LinearQModel dm_fit_rl(const Dataset& data, const Policy& pi_e, const Policy& pi_b, FeatureMapPtr features,
                       const DmFitConfig& config) {
  const WlsProblem prob = dm_problem(data, pi_e, pi_b, *features, config.mode);
  return LinearQModel(features, solve_wls(prob, config.solver, config.ridge, config.gd));
}

WlsProblem dm_bandit_problem(std::span<const Step> samples, const DeterministicPolicy& pi_e,
                             const FeatureMap& features) {
  WlsProblem prob(features.dim());
  for (const Step& s : samples) {
    if (!(s.behavior_prob > 0.0)) throw ZeroProbabilityError("bandit sample with non-positive behavior probability");
    if (pi_e.choose(s.state) != s.action) continue;
    SparseVector phi;
    features.sparse_phi(s.state, s.action, phi);
    prob.add_row(std::move(phi), s.reward, 1.0 / s.behavior_prob);
  }
  if (prob.rows.empty()) throw DegenerateWeightsError("no bandit sample matches the evaluation policy");
  return prob;
}

LinearQModel dm_fit_bandit(std::span<const Step> samples, const DeterministicPolicy& pi_e, FeatureMapPtr features,
                           const DmFitConfig& config) {
  const WlsProblem prob = dm_bandit_problem(samples, pi_e, *features);
  return LinearQModel(features, solve_wls(prob, config.solver, config.ridge, config.gd));
}

namespace {

void require_tabular_model(const TabularModel& mdp, const LinearQModel* model) {
  mdp.validate();
  if (model && model->features().action_count() != mdp.num_actions) {
    throw InvalidInput("model action count does not match the MDP");
  }
}

// Per-step occupancy weights gamma^t * norm.
std::vector<double> occupancy_discounts(double gamma, int T) {
  const double norm = gamma == 1.0 ? 1.0 / T : (1.0 - gamma) / (1.0 - std::pow(gamma, T));
  std::vector<double> out(T);
  double disc = 1.0;
  for (int t = 0; t < T; ++t) {
    out[t] = norm * disc;
    disc *= gamma;
  }
  return out;
}

}  // namespace

double occupancy_objective_check(const TabularModel& mdp, const Policy& pi_e, const LinearQModel& model, double gamma,
                                 int T) {
  require_tabular_model(mdp, &model);
  const auto ev = evaluate_tabular(mdp, pi_e, gamma, T);
  const auto disc = occupancy_discounts(gamma, T);
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    for (int x = 0; x < mdp.num_states; ++x) {
      if (ev.d[t][x] == 0.0) continue;
      const State obs = mdp.observe(x);
      const auto p = pi_e.probs(obs);
      for (int a = 0; a < mdp.num_actions; ++a) {
        if (p[a] == 0.0) continue;
        const double err = ev.q[t][x][a] - model.q(obs, a);
        total += disc[t] * ev.d[t][x] * p[a] * err * err;
      }
    }
  }
  return total;
}

LinearQModel occupancy_projection(const TabularModel& mdp, const Policy& pi_e, double gamma, int T) {
  require_tabular_model(mdp, nullptr);
  const auto ev = evaluate_tabular(mdp, pi_e, gamma, T);
  const auto disc = occupancy_discounts(gamma, T);
  const int A = mdp.num_actions;
  auto features = tabular_features(mdp.num_observations, A);
  Eigen::VectorXd num = Eigen::VectorXd::Zero(features->dim());
  Eigen::VectorXd den = Eigen::VectorXd::Zero(features->dim());
  for (int t = 0; t < T; ++t) {
    for (int x = 0; x < mdp.num_states; ++x) {
      if (ev.d[t][x] == 0.0) continue;
      const State obs = mdp.observe(x);
      const auto p = pi_e.probs(obs);
      for (int a = 0; a < A; ++a) {
        const double mu = disc[t] * ev.d[t][x] * p[a];
        num[obs.id() * A + a] += mu * ev.q[t][x][a];
        den[obs.id() * A + a] += mu;
      }
    }
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(features->dim());
  for (int k = 0; k < beta.size(); ++k) {
    if (den[k] > 0.0) beta[k] = num[k] / den[k];
  }
  return LinearQModel(features, beta);
}

}  // namespace ope
