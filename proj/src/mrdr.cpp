#include "ope/mrdr.hpp"

#include <cmath>
#include <string>

#include "ope/estimators.hpp"
#include "ope/numeric.hpp"

namespace ope {

namespace {

OmegaMatrix build_omega(const std::vector<double>& pb, std::vector<Action> support) {
  const int k = static_cast<int>(support.size());
  OmegaMatrix om{std::move(support), Eigen::MatrixXd::Constant(k, k, -1.0)};
  for (int i = 0; i < k; ++i) om.m(i, i) += 1.0 / pb[om.support[i]];
  return om;
}

}  // namespace

OmegaMatrix omega_matrix(const Policy& pi_b, const State& x) {
  const auto pb = pi_b.probs(x);
  std::vector<Action> all(pb.size());
  for (std::size_t a = 0; a < pb.size(); ++a) {
    if (!(pb[a] > 0.0)) throw ZeroProbabilityError("omega_matrix: behavior probability is zero for an action");
    all[a] = static_cast<Action>(a);
  }
  return build_omega(pb, std::move(all));
}

OmegaMatrix omega_on_support(const Policy& pi_b, const Policy& pi_e, const State& x) {
  const auto pb = pi_b.probs(x);
  const auto pe = pi_e.probs(x);
  std::vector<Action> support;
  for (std::size_t a = 0; a < pb.size(); ++a) {
    if (pb[a] > 0.0) {
      support.push_back(static_cast<Action>(a));
    } else if (pe[a] > 0.0) {
      throw ZeroProbabilityError("evaluation policy puts mass where the behavior policy has none");
    }
  }
  return build_omega(pb, std::move(support));
}

Eigen::VectorXd q_vector(const State& x, Action a, double r, const LinearQModel& model, const Policy& pi_e) {
  const auto pe = pi_e.probs(x);
  Eigen::VectorXd q(pe.size());
  for (std::size_t k = 0; k < pe.size(); ++k) q[k] = pe[k] * model.q(x, static_cast<Action>(k));
  q[a] -= r;
  return q;
}

namespace {

// value += w q^T Omega q; grad += 2 w Phi^T D_e Omega q, with q restricted to the support of pi_b.
void add_mrdr_term(const State& x, Action a, double r, double w, const LinearQModel& model, const Policy& pi_e,
                   const Policy& pi_b, Accumulator& value, Eigen::VectorXd& grad) {
  if (w == 0.0) return;
  const OmegaMatrix om = omega_on_support(pi_b, pi_e, x);
  const auto pe = pi_e.probs(x);
  const int k = static_cast<int>(om.support.size());
  Eigen::VectorXd q(k);
  for (int i = 0; i < k; ++i) {
    const Action s = om.support[i];
    q[i] = pe[s] * model.q(x, s) - (s == a ? r : 0.0);
  }
  const Eigen::VectorXd oq = om.m * q;
  value.add(w * q.dot(oq));
  SparseVector phi;
  for (int i = 0; i < k; ++i) {
    const Action s = om.support[i];
    const double coef = 2.0 * w * pe[s] * oq[i];
    if (coef == 0.0) continue;
    model.features().sparse_phi(x, s, phi);
    for (const auto& e : phi) grad[e.index] += coef * e.value;
  }
}

}  // namespace

ObjectiveValue mrdr_objective_bandit(std::span<const Step> samples, const LinearQModel& model, const Policy& pi_e,
                                     const Policy& pi_b) {
  if (samples.empty()) throw InvalidInput("MRDR objective needs samples");
  const double n = static_cast<double>(samples.size());
  Accumulator value;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.features().dim());
  for (const Step& s : samples) {
    const double pb = pi_b.prob(s.state, s.action);
    if (!(pb > 0.0)) throw ZeroProbabilityError("logged action has zero behavior probability");
    const double rho = pi_e.prob(s.state, s.action) / pb;
    add_mrdr_term(s.state, s.action, s.reward, rho / n, model, pi_e, pi_b, value, grad);
  }
  return {value.value(), std::move(grad)};
}

ObjectiveValue mrdr_objective_rl(const Dataset& data, const LinearQModel& model, const Policy& pi_e,
                                 const Policy& pi_b) {
  data.validate();
  const double n = data.size();
  Accumulator value;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.features().dim());
  for (const auto& traj : data.trajectories) {
    const auto rho = step_ratios(traj, pi_e, pi_b);
    const auto rbar = corrected_returns(traj, rho, data.gamma);
    double disc = 1.0;
    double w_prev = 1.0;
    for (int t = 0; t < traj.horizon(); ++t) {
      const Step& s = traj.steps[t];
      if (!s.state.is_absorbing()) {
        const double w = ((disc * disc) * (w_prev * w_prev)) * rho[t] / n;
        add_mrdr_term(s.state, s.action, rbar[t], w, model, pi_e, pi_b, value, grad);
      }
      disc *= data.gamma;
      w_prev *= rho[t];
    }
  }
  return {value.value(), std::move(grad)};
}

QuadraticObjective mrdr_quadratic(const Dataset& data, const Policy& pi_e, const Policy& pi_b,
                                  const FeatureMap& features) {
  data.validate();
  const int kappa = features.dim();
  const double n = data.size();
  GramAccumulator gram(kappa);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(kappa);
  Accumulator c;
  std::vector<SparseVector> phis;
  for (std::size_t i : canonical_order(data)) {
    const Trajectory& traj = data.trajectories[i];
    const auto rho = step_ratios(traj, pi_e, pi_b);
    const auto rbar = corrected_returns(traj, rho, data.gamma);
    double disc = 1.0;
    double w_prev = 1.0;
    for (int t = 0; t < traj.horizon(); ++t) {
      const Step& s = traj.steps[t];
      const double w = ((disc * disc) * (w_prev * w_prev)) * rho[t] / n;
      disc *= data.gamma;
      w_prev *= rho[t];
      if (s.state.is_absorbing() || w == 0.0) continue;
      const OmegaMatrix om = omega_on_support(pi_b, pi_e, s.state);
      const auto pe = pi_e.probs(s.state);
      const int k = static_cast<int>(om.support.size());
      phis.resize(k);
      int ia = -1;
      for (int j = 0; j < k; ++j) {
        features.sparse_phi(s.state, om.support[j], phis[j]);
        if (om.support[j] == s.action) ia = j;
      }
      const double r = rbar[t];
      for (int j = 0; j < k; ++j) {
        const double pj = pe[om.support[j]];
        if (pj == 0.0) continue;
        for (int l = 0; l < k; ++l) {
          const double pl = pe[om.support[l]];
          if (pl != 0.0) gram.add_outer(phis[j], phis[l], w * om.m(j, l) * pj * pl);
        }
        for (const auto& e : phis[j]) b[e.index] += w * r * om.m(j, ia) * pj * e.value;
      }
      c.add(w * r * r * om.m(ia, ia));
    }
  }
  return {gram.matrix(), std::move(b), c.value()};
}

WlsProblem mrdr0_problem(const Dataset& data, const Policy& pi_e, const Policy& pi_b, const FeatureMap& features) {
  data.validate();
  const int kappa = features.dim();
  const double inv_n = 1.0 / data.size();
  WlsProblem prob(kappa);
  Eigen::VectorXd g(kappa);
  SparseVector phi;
  for (std::size_t i : canonical_order(data)) {
    const Trajectory& traj = data.trajectories[i];
    const auto w = cumulative_weights(step_ratios(traj, pi_e, pi_b));
    g.setZero();
    double c = 0.0;
    double disc = 1.0;
    double w_prev = 1.0;
    for (int t = 0; t < traj.horizon(); ++t) {
      const Step& s = traj.steps[t];
      c += disc * (w[t] * s.reward);
      features.sparse_phi(s.state, s.action, phi);
      for (const auto& e : phi) g[e.index] += disc * w[t] * e.value;
      const auto pe = pi_e.probs(s.state);
      for (int a = 0; a < static_cast<int>(pe.size()); ++a) {
        if (pe[a] == 0.0) continue;
        features.sparse_phi(s.state, a, phi);
        for (const auto& e : phi) g[e.index] -= disc * w_prev * pe[a] * e.value;
      }
      disc *= data.gamma;
      w_prev = w[t];
    }
    SparseVector row;
    for (int k = 0; k < kappa; ++k) {
      if (g[k] != 0.0) row.push_back({k, g[k]});
    }
    prob.add_row(std::move(row), c, inv_n);
  }
  return prob;
}

namespace {

QuadraticObjective wls_as_quadratic(const WlsProblem& prob) {
  GramAccumulator gram(prob.dim);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(prob.dim);
  Accumulator c;
  for (const auto& row : prob.rows) {
    gram.add_outer(row.phi, row.phi, row.weight);
    for (const auto& e : row.phi) b[e.index] += row.weight * row.target * e.value;
    c.add(row.weight * row.target * row.target);
  }
  return {gram.matrix(), std::move(b), c.value()};
}

Eigen::VectorXd minimize_quadratic(const QuadraticObjective& quad, const Eigen::VectorXd& beta0,
                                   const MrdrFitConfig& config) {
  if (config.solver == Solver::GD) {
    // The constant c only shifts the value and costs precision in the line search.
    const Objective obj = [&quad](const Eigen::VectorXd& beta, Eigen::VectorXd* grad) {
      const Eigen::VectorXd Ab = quad.A * beta;
      if (grad) *grad = 2.0 * (Ab - quad.b);
      return beta.dot(Ab) - 2.0 * quad.b.dot(beta);
    };
    return gd_minimize(obj, beta0, config.gd).beta;
  }
  // Solve for the step from the warm start so that any ridge shrinks toward it.
  const Eigen::VectorXd rhs = quad.b - quad.A * beta0;
  QuadraticObjective step{quad.A, rhs, 0.0};
  if (config.ridge > 0.0) return beta0 + step.minimizer(config.ridge);
  try {
    return beta0 + step.minimizer(0.0);
  } catch (const SingularSystemError&) {
    return beta0 + step.minimizer(kDefaultRidge);
  }
}

}  // namespace

LinearQModel mrdr_fit(const Dataset& data, const Policy& pi_e, const Policy& pi_b, FeatureMapPtr features,
                      const MrdrFitConfig& config, const LinearQModel* warm_start) {
  Eigen::VectorXd beta0;
  if (warm_start) {
    if (warm_start->beta().size() != features->dim()) throw InvalidInput("warm start has the wrong dimension");
    beta0 = warm_start->beta();
  } else {
    beta0 = dm_fit_rl(data, pi_e, pi_b, features).beta();
  }
  const QuadraticObjective quad = config.mode == MrdrMode::MRDR
                                      ? mrdr_quadratic(data, pi_e, pi_b, *features)
                                      : wls_as_quadratic(mrdr0_problem(data, pi_e, pi_b, *features));
  return LinearQModel(features, minimize_quadratic(quad, beta0, config));
}

WlsProblem mrdr_deterministic_problem(const Dataset& data, const DeterministicPolicy& pi_e, const Policy& pi_b,
                                      const FeatureMap& features, Setting setting) {
  data.validate();
  if (setting == Setting::Bandit && data.horizon() != 1) throw InvalidInput("bandit setting needs T = 1 data");
  const double n = data.size();
  WlsProblem prob(features.dim());
  for (std::size_t i : canonical_order(data)) {
    const Trajectory& traj = data.trajectories[i];
    const auto rho = step_ratios(traj, pi_e, pi_b);
    const auto rbar = corrected_returns(traj, rho, data.gamma);
    double disc = 1.0;
    double w_prev = 1.0;
    for (int t = 0; t < traj.horizon(); ++t) {
      const Step& s = traj.steps[t];
      if (!s.state.is_absorbing() && pi_e.choose(s.state) == s.action) {
        const double pb = pi_b.prob(s.state, s.action);
        SparseVector phi;
        features.sparse_phi(s.state, s.action, phi);
        const double w = (disc * disc) * (w_prev * w_prev) * (1.0 - pb) / (pb * pb) / n;
        prob.add_row(std::move(phi), rbar[t], w);
      }
      disc *= data.gamma;
      w_prev *= rho[t];
    }
  }
  if (prob.rows.empty()) throw DegenerateWeightsError("no logged action matches the evaluation policy");
  return prob;
}

LinearQModel mrdr_wls_deterministic(const Dataset& data, const DeterministicPolicy& pi_e, const Policy& pi_b,
                                    FeatureMapPtr features, Setting setting) {
  const WlsProblem prob = mrdr_deterministic_problem(data, pi_e, pi_b, *features, setting);
  return LinearQModel(features, wls_solve_or_ridge(prob));
}

void BanditSpec::validate() const {
  const int X = contexts();
  const int A = actions();
  if (X < 1 || A < 1) throw InvalidInput("bandit spec is empty");
  if (pi_b.rows() != X || pi_e.rows() != X || pi_e.cols() != A || reward_mean.rows() != X ||
      reward_mean.cols() != A || reward_var.rows() != X || reward_var.cols() != A) {
    throw InvalidInput("bandit spec matrices have inconsistent shapes");
  }
  double s = 0.0;
  for (double p : p0) s += p;
  if (std::abs(s - 1.0) > 1e-12) throw InvalidInput("bandit context distribution does not sum to 1");
  if (!reward_mean.allFinite() || !reward_var.allFinite()) throw InvalidInput("bandit rewards must be finite");
}

namespace {

std::vector<std::vector<double>> rows_of(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  }
  return out;
}

}  // namespace

std::shared_ptr<TabularPolicy> BanditSpec::behavior() const {
  return std::make_shared<TabularPolicy>(rows_of(pi_b), "bandit-behavior");
}

std::shared_ptr<TabularPolicy> BanditSpec::evaluation() const {
  return std::make_shared<TabularPolicy>(rows_of(pi_e), "bandit-evaluation");
}

namespace {

struct ContextValues {
  Eigen::VectorXd qhat;  // Q_hat(x, .)
  double vhat;           // sum_a pi_e Q_hat
  double v;              // sum_a pi_e Q
};

ContextValues context_values(const BanditSpec& spec, const LinearQModel& model, int x) {
  ContextValues cv;
  cv.qhat.resize(spec.actions());
  cv.vhat = 0.0;
  cv.v = 0.0;
  for (int a = 0; a < spec.actions(); ++a) {
    cv.qhat[a] = model.q(State::discrete(x), a);
    cv.vhat += spec.pi_e(x, a) * cv.qhat[a];
    cv.v += spec.pi_e(x, a) * spec.reward_mean(x, a);
  }
  return cv;
}

double variance_of_v(const BanditSpec& spec) {
  double m1 = 0.0, m2 = 0.0;
  for (int x = 0; x < spec.contexts(); ++x) {
    double v = 0.0;
    for (int a = 0; a < spec.actions(); ++a) v += spec.pi_e(x, a) * spec.reward_mean(x, a);
    m1 += spec.p0[x] * v;
    m2 += spec.p0[x] * v * v;
  }
  return m2 - m1 * m1;
}

void require_full_support(const BanditSpec& spec) {
  for (int x = 0; x < spec.contexts(); ++x) {
    for (int a = 0; a < spec.actions(); ++a) {
      if (!(spec.pi_b(x, a) > 0.0)) throw InvalidInput("closed-form variance needs a full-support behavior policy");
    }
  }
}

}  // namespace

double bandit_dr_variance_closed_form(const BanditSpec& spec, const LinearQModel& model) {
  spec.validate();
  require_full_support(spec);
  double total = 0.0;
  for (int x = 0; x < spec.contexts(); ++x) {
    const auto cv = context_values(spec, model, x);
    // E_{a ~ pi_e}[omega Q_hat^2]
    double e_wq2 = 0.0;
    for (int a = 0; a < spec.actions(); ++a) {
      e_wq2 += spec.pi_e(x, a) * (spec.pi_e(x, a) / spec.pi_b(x, a)) * cv.qhat[a] * cv.qhat[a];
    }
    double inner = 0.0;
    for (int a = 0; a < spec.actions(); ++a) {
      const double w = spec.pi_e(x, a) / spec.pi_b(x, a);
      const double er = spec.reward_mean(x, a);
      const double er2 = spec.reward_var(x, a) + er * er;
      const double term = w * (e_wq2 - cv.vhat * cv.vhat - 2.0 * er * (w * cv.qhat[a] - cv.vhat)) + w * w * er2;
      inner += spec.pi_b(x, a) * term;
    }
    total += spec.p0[x] * (inner - cv.v * cv.v);
  }
  return total + variance_of_v(spec);
}

double bandit_dr_variance_delta_form(const BanditSpec& spec, const LinearQModel& model) {
  spec.validate();
  require_full_support(spec);
  double noise = 0.0, spread = 0.0;
  for (int x = 0; x < spec.contexts(); ++x) {
    double m1 = 0.0, m2 = 0.0, nx = 0.0;
    for (int a = 0; a < spec.actions(); ++a) {
      const double pb = spec.pi_b(x, a);
      const double pe = spec.pi_e(x, a);
      const double delta = model.q(State::discrete(x), a) - spec.reward_mean(x, a);
      const double wd = pe / pb * delta;
      m1 += pb * wd;
      m2 += pb * wd * wd;
      nx += pe * pe / pb * spec.reward_var(x, a);
    }
    noise += spec.p0[x] * nx;
    spread += spec.p0[x] * (m2 - m1 * m1);
  }
  return variance_of_v(spec) + noise + spread;
}

double bandit_mrdr_objective_exact(const BanditSpec& spec, const LinearQModel& model) {
  spec.validate();
  require_full_support(spec);
  const int A = spec.actions();
  double total = 0.0;
  for (int x = 0; x < spec.contexts(); ++x) {
    const auto cv = context_values(spec, model, x);
    Eigen::MatrixXd omega = Eigen::MatrixXd::Constant(A, A, -1.0);
    Eigen::VectorXd dq(A);
    for (int a = 0; a < A; ++a) {
      omega(a, a) += 1.0 / spec.pi_b(x, a);
      dq[a] = spec.pi_e(x, a) * cv.qhat[a];
    }
    const Eigen::VectorXd odq = omega * dq;
    double inner = 0.0;
    for (int a = 0; a < A; ++a) {
      const double w = spec.pi_e(x, a) / spec.pi_b(x, a);
      const double er = spec.reward_mean(x, a);
      const double er2 = spec.reward_var(x, a) + er * er;
      // E_r[(dq - e_a r)^T Omega (dq - e_a r)]
      const double quad = dq.dot(odq) - 2.0 * er * odq[a] + er2 * omega(a, a);
      inner += spec.pi_b(x, a) * w * quad;
    }
    total += spec.p0[x] * inner;
  }
  return total;
}

double bandit_variance_constant(const BanditSpec& spec) {
  spec.validate();
  require_full_support(spec);
  double total = variance_of_v(spec);
  for (int x = 0; x < spec.contexts(); ++x) {
    double v = 0.0;
    for (int a = 0; a < spec.actions(); ++a) v += spec.pi_e(x, a) * spec.reward_mean(x, a);
    double inner = 0.0;
    for (int a = 0; a < spec.actions(); ++a) {
      const double pb = spec.pi_b(x, a);
      const double w = spec.pi_e(x, a) / pb;
      const double er2 = spec.reward_var(x, a) + spec.reward_mean(x, a) * spec.reward_mean(x, a);
      inner += pb * (1.0 + w - 1.0 / pb) * w * er2;
    }
    total += spec.p0[x] * (inner - v * v);
  }
  return total;
}

std::vector<Step> sample_bandit(const BanditSpec& spec, int n, Rng& rng) {
  spec.validate();
  std::vector<Step> out;
  out.reserve(n);
  auto draw = [&rng](auto&& weight, int k) {
    const double u = rng.uniform();
    double cdf = 0.0;
    int last = 0;
    for (int i = 0; i < k; ++i) {
      if (weight(i) <= 0.0) continue;
      cdf += weight(i);
      last = i;
      if (u < cdf) return i;
    }
    return last;
  };
  for (int i = 0; i < n; ++i) {
    const int x = draw([&](int k) { return spec.p0[k]; }, spec.contexts());
    const int a = draw([&](int k) { return spec.pi_b(x, k); }, spec.actions());
    const double r = spec.reward_mean(x, a) + std::sqrt(spec.reward_var(x, a)) * rng.normal();
    out.push_back({State::discrete(x), a, r, spec.pi_b(x, a)});
  }
  return out;
}

Dataset bandit_dataset(std::span<const Step> samples) {
  Dataset data;
  data.gamma = 1.0;
  data.trajectories.reserve(samples.size());
  for (const Step& s : samples) {
    Trajectory traj;
    traj.steps.push_back(s);
    data.trajectories.push_back(std::move(traj));
  }
  return data;
}

}  // namespace ope
