#include "ope/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ope {

State State::discrete(int id) {
  if (id < 0) throw InvalidInput("discrete state id must be non-negative, got " + std::to_string(id));
  State s;
  s.kind_ = Kind::Discrete;
  s.id_ = id;
  return s;
}

State State::continuous(std::vector<double> features) {
  for (double f : features) {
    if (!std::isfinite(f)) throw InvalidInput("state features must be finite");
  }
  State s;
  s.kind_ = Kind::Continuous;
  s.features_ = std::move(features);
  return s;
}

std::strong_ordering compare(const State& a, const State& b) {
  if (a.kind_ != b.kind_) return a.kind_ <=> b.kind_;
  if (a.id_ != b.id_) return a.id_ <=> b.id_;
  const auto& fa = a.features_;
  const auto& fb = b.features_;
  for (std::size_t i = 0; i < std::min(fa.size(), fb.size()); ++i) {
    if (fa[i] < fb[i]) return std::strong_ordering::less;
    if (fa[i] > fb[i]) return std::strong_ordering::greater;
  }
  return fa.size() <=> fb.size();
}

namespace {

std::strong_ordering compare_double(double a, double b) {
  if (a < b) return std::strong_ordering::less;
  if (a > b) return std::strong_ordering::greater;
  return std::strong_ordering::equal;
}

std::strong_ordering compare_step(const Step& a, const Step& b) {
  if (auto c = compare(a.state, b.state); c != 0) return c;
  if (auto c = a.action <=> b.action; c != 0) return c;
  if (auto c = compare_double(a.reward, b.reward); c != 0) return c;
  return compare_double(a.behavior_prob, b.behavior_prob);
}

}  // namespace

bool trajectory_less(const Trajectory& a, const Trajectory& b) {
  const std::size_t n = std::min(a.steps.size(), b.steps.size());
  for (std::size_t t = 0; t < n; ++t) {
    if (auto c = compare_step(a.steps[t], b.steps[t]); c != 0) return c < 0;
  }
  return a.steps.size() < b.steps.size();
}

std::vector<std::size_t> canonical_order(const Dataset& data) {
  std::vector<std::size_t> idx(data.trajectories.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return trajectory_less(data.trajectories[a], data.trajectories[b]);
  });
  return idx;
}

void Dataset::validate() const {
  if (trajectories.empty()) throw InvalidInput("dataset has no trajectories");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidInput("gamma must lie in [0, 1]");
  const int T = horizon();
  if (T < 1) throw InvalidInput("trajectories must have at least one step");
  for (const auto& traj : trajectories) {
    if (traj.horizon() != T) throw InvalidInput("trajectories have different lengths");
    for (const auto& s : traj.steps) {
      if (!(s.behavior_prob > 0.0 && s.behavior_prob <= 1.0)) {
        throw InvalidInput("logged behavior probability outside (0, 1]");
      }
      if (!std::isfinite(s.reward)) throw InvalidInput("reward is not finite");
      if (s.action < 0) throw InvalidInput("negative action index");
    }
  }
}

Policy::Policy(int action_count) : action_count_(action_count) {
  if (action_count < 1) throw InvalidInput("policy needs at least one action");
}

double Policy::prob(const State& x, Action a) const {
  if (a < 0 || a >= action_count_) {
    throw InvalidInput("action " + std::to_string(a) + " out of range for " + describe());
  }
  if (x.is_absorbing()) return a == kNoOp ? 1.0 : 0.0;
  return prob_at(x, a);
}

std::vector<double> Policy::probs(const State& x) const {
  std::vector<double> out(action_count_, 0.0);
  if (x.is_absorbing()) {
    out[kNoOp] = 1.0;
  } else {
    probs_at(x, out);
  }
  return out;
}

void Policy::probs_at(const State& x, std::span<double> out) const {
  for (int a = 0; a < action_count_; ++a) out[a] = prob_at(x, a);
}

Action Policy::sample(const State& x, Rng& rng) const {
  if (x.is_absorbing()) return kNoOp;
  return sample_at(x, rng);
}

Action Policy::sample_at(const State& x, Rng& rng) const {
  std::vector<double> p(action_count_);
  probs_at(x, p);
  const double u = rng.uniform();
  double cdf = 0.0;
  Action last = 0;
  for (int a = 0; a < action_count_; ++a) {
    if (p[a] <= 0.0) continue;
    cdf += p[a];
    last = a;
    if (u < cdf) return a;
  }
  return last;  // u landed in the rounding gap above the final cdf value
}

std::vector<double> step_ratios(const Trajectory& traj, const Policy& pi_e, const Policy& pi_b) {
  std::vector<double> rho(traj.steps.size());
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const Step& s = traj.steps[t];
    const double pb = pi_b.prob(s.state, s.action);
    if (pb <= 0.0) {
      throw ZeroProbabilityError("behavior policy " + pi_b.describe() + " gives zero probability to logged action " +
                                 std::to_string(s.action) + " at step " + std::to_string(t));
    }
    rho[t] = pi_e.prob(s.state, s.action) / pb;
  }
  return rho;
}

std::vector<double> cumulative_weights(std::span<const double> ratios) {
  std::vector<double> w(ratios.size());
  double acc = 1.0;
  for (std::size_t t = 0; t < ratios.size(); ++t) {
    acc *= ratios[t];
    w[t] = acc;
  }
  return w;
}

double cumulative_ratio(const Trajectory& traj, const Policy& pi_e, const Policy& pi_b, int t1, int t2) {
  if (t1 > t2) return 1.0;
  if (t1 < 0 || t2 >= traj.horizon()) throw InvalidInput("ratio range outside the trajectory");
  double w = 1.0;
  for (int t = t1; t <= t2; ++t) {
    const Step& s = traj.steps[t];
    const double pb = pi_b.prob(s.state, s.action);
    if (pb <= 0.0) {
      throw ZeroProbabilityError("behavior policy gives zero probability to logged action at step " +
                                 std::to_string(t));
    }
    w *= pi_e.prob(s.state, s.action) / pb;
  }
  return w;
}

double discounted_suffix_return(const Trajectory& traj, double gamma, int t) {
  double g = 0.0;
  for (int tau = traj.horizon() - 1; tau >= t; --tau) g = traj.steps[tau].reward + gamma * g;
  return g;
}

double discounted_return(const Trajectory& traj, double gamma) { return discounted_suffix_return(traj, gamma, 0); }

std::vector<double> corrected_returns(const Trajectory& traj, std::span<const double> ratios, double gamma) {
  const int T = traj.horizon();
  std::vector<double> out(T);
  // Backward recursion R_t = r_t + gamma * rho_{t+1} * R_{t+1}; no division, so zero ratios are fine.
  double next = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double carry = t + 1 < T ? ratios[t + 1] * next : 0.0;
    out[t] = traj.steps[t].reward + gamma * carry;
    next = out[t];
  }
  return out;
}

double corrected_return(const Trajectory& traj, const Policy& pi_e, const Policy& pi_b, double gamma, int t) {
  if (t < 0 || t >= traj.horizon()) throw InvalidInput("corrected_return: t outside the trajectory");
  const auto rho = step_ratios(traj, pi_e, pi_b);
  return corrected_returns(traj, rho, gamma)[t];
}

std::vector<ContinuityViolation> check_absolute_continuity(const Policy& pi_e, const Policy& pi_b,
                                                           std::span<const State> states) {
  std::vector<ContinuityViolation> out;
  const int l = std::min(pi_e.action_count(), pi_b.action_count());
  for (const State& x : states) {
    for (Action a = 0; a < l; ++a) {
      const double pe = pi_e.prob(x, a);
      if (pi_b.prob(x, a) == 0.0 && pe > 0.0) out.push_back({x, a, pe});
    }
  }
  return out;
}

}  // namespace ope
