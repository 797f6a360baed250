#include "ope/estimators.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "ope/numeric.hpp"

namespace ope {

namespace {

struct EstimatorName {
  EstimatorId id;
  const char* canonical;
  const char* dashed;
};

constexpr std::array<EstimatorName, 10> kNames{{
    {EstimatorId::DM0, "DM0", "dm0"},
    {EstimatorId::DM, "DM", "dm"},
    {EstimatorId::IS, "IS", "is"},
    {EstimatorId::StepIS, "StepIS", "step-is"},
    {EstimatorId::WIS, "WIS", "wis"},
    {EstimatorId::StepWIS, "StepWIS", "step-wis"},
    {EstimatorId::DR0, "DR0", "dr0"},
    {EstimatorId::DR, "DR", "dr"},
    {EstimatorId::MRDR0, "MRDR0", "mrdr0"},
    {EstimatorId::MRDR, "MRDR", "mrdr"},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void require_nonempty(const Dataset& data) {
  if (data.trajectories.empty()) throw InvalidInput("dataset has no trajectories");
}

}  // namespace

std::string to_string(EstimatorId id) {
  for (const auto& e : kNames) {
    if (e.id == id) return e.canonical;
  }
  return "?";
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::DM0: return "dm0";
    case ModelKind::DM: return "dm";
    case ModelKind::MRDR0: return "mrdr0";
    case ModelKind::MRDR: return "mrdr";
  }
  return "?";
}

EstimatorId parse_estimator(std::string_view name) {
  const std::string l = lower(name);
  for (const auto& e : kNames) {
    if (l == e.dashed || l == lower(e.canonical)) return e.id;
  }
  throw InvalidInput("unknown estimator: " + std::string(name));
}

ModelKind parse_model_kind(std::string_view name) {
  const std::string l = lower(name);
  if (l == "dm0") return ModelKind::DM0;
  if (l == "dm") return ModelKind::DM;
  if (l == "mrdr0") return ModelKind::MRDR0;
  if (l == "mrdr") return ModelKind::MRDR;
  throw InvalidInput("unknown objective: " + std::string(name) + " (expected dm0, dm, mrdr0, mrdr)");
}

std::optional<ModelKind> model_for(EstimatorId id) {
  switch (id) {
    case EstimatorId::DM0:
    case EstimatorId::DR0: return ModelKind::DM0;
    case EstimatorId::DM:
    case EstimatorId::DR: return ModelKind::DM;
    case EstimatorId::MRDR0: return ModelKind::MRDR0;
    case EstimatorId::MRDR: return ModelKind::MRDR;
    default: return std::nullopt;
  }
}

Json EstimatorReport::to_json() const {
  Json j;
  j["estimator"] = to_string(id);
  j["value"] = value;
  j["n"] = n;
  j["seed"] = seed;
  return j;
}

double is_estimate(const Dataset& data, const Policy& pi_e, const Policy& pi_b) {
  require_nonempty(data);
  Accumulator acc;
  for (const auto& traj : data.trajectories) {
    const auto w = cumulative_weights(step_ratios(traj, pi_e, pi_b));
    acc.add(w.back() * discounted_return(traj, data.gamma));
  }
  return acc.value() / data.size();
}

double step_is_estimate(const Dataset& data, const Policy& pi_e, const Policy& pi_b) {
  require_nonempty(data);
  Accumulator acc;
  for (const auto& traj : data.trajectories) {
    const auto w = cumulative_weights(step_ratios(traj, pi_e, pi_b));
    double term = 0.0;
    double disc = 1.0;
    for (int t = 0; t < traj.horizon(); ++t) {
      term += disc * (w[t] * traj.steps[t].reward);
      disc *= data.gamma;
    }
    acc.add(term);
  }
  return acc.value() / data.size();
}

double wis_estimate(const Dataset& data, const Policy& pi_e, const Policy& pi_b) {
  require_nonempty(data);
  Accumulator num, den;
  for (const auto& traj : data.trajectories) {
    const double w = cumulative_weights(step_ratios(traj, pi_e, pi_b)).back();
    num.add(w * discounted_return(traj, data.gamma));
    den.add(w);
  }
  if (den.value() == 0.0) throw DegenerateWeightsError("WIS: all importance weights are zero");
  return num.value() / den.value();
}

double step_wis_estimate(const Dataset& data, const Policy& pi_e, const Policy& pi_b) {
  require_nonempty(data);
  const int T = data.horizon();
  std::vector<Accumulator> num(T), den(T);
  for (const auto& traj : data.trajectories) {
    const auto w = cumulative_weights(step_ratios(traj, pi_e, pi_b));
    for (int t = 0; t < T; ++t) {
      num[t].add(w[t] * traj.steps[t].reward);
      den[t].add(w[t]);
    }
  }
  double total = 0.0;
  double disc = 1.0;
  for (int t = 0; t < T; ++t) {
    if (den[t].value() == 0.0) throw DegenerateWeightsError("step-WIS: zero weight normalizer at step " + std::to_string(t));
    total += disc * (num[t].value() / den[t].value());
    disc *= data.gamma;
  }
  return total;
}

std::vector<State> initial_states(const Dataset& data) {
  std::vector<State> xs;
  xs.reserve(data.trajectories.size());
  for (const auto& traj : data.trajectories) xs.push_back(traj.steps.front().state);
  return xs;
}

double dm_estimate(std::span<const State> states, const LinearQModel& model, const Policy& pi_e) {
  if (states.empty()) throw InvalidInput("DM needs at least one initial state");
  Accumulator acc;
  for (const State& x : states) acc.add(model.v(x, pi_e));
  return acc.value() / static_cast<double>(states.size());
}

double dr_trajectory_term(const Trajectory& traj, double gamma, const LinearQModel& model, const Policy& pi_e,
                          const Policy& pi_b) {
  const auto w = cumulative_weights(step_ratios(traj, pi_e, pi_b));
  double term = 0.0;
  double disc = 1.0;
  double w_prev = 1.0;
  for (int t = 0; t < traj.horizon(); ++t) {
    const Step& s = traj.steps[t];
    const double q = model.q(s.state, s.action);
    const double v = model.v(s.state, pi_e);
    // Written so that q = v = 0 reproduces step-IS bit for bit.
    term += disc * (w[t] * s.reward - (w[t] * q - w_prev * v));
    disc *= gamma;
    w_prev = w[t];
  }
  return term;
}

std::vector<double> dr_terms(const Dataset& data, const LinearQModel& model, const Policy& pi_e, const Policy& pi_b) {
  std::vector<double> out;
  out.reserve(data.trajectories.size());
  for (const auto& traj : data.trajectories) out.push_back(dr_trajectory_term(traj, data.gamma, model, pi_e, pi_b));
  return out;
}

double dr_estimate(const Dataset& data, const LinearQModel& model, const Policy& pi_e, const Policy& pi_b) {
  require_nonempty(data);
  return compensated_mean(dr_terms(data, model, pi_e, pi_b));
}

double bandit_dr_estimate(std::span<const Step> samples, const LinearQModel& model, const Policy& pi_e) {
  if (samples.empty()) throw InvalidInput("bandit DR needs at least one sample");
  Accumulator acc;
  for (const Step& s : samples) {
    if (!(s.behavior_prob > 0.0)) throw ZeroProbabilityError("bandit sample with non-positive behavior probability");
    const double w = pi_e.prob(s.state, s.action) / s.behavior_prob;
    acc.add(w * (s.reward - model.q(s.state, s.action)) + model.v(s.state, pi_e));
  }
  return acc.value() / static_cast<double>(samples.size());
}

double estimate(EstimatorId id, const Dataset& data, const Policy& pi_e, const Policy& pi_b,
                const LinearQModel* model) {
  if (model_for(id) && !model) throw InvalidInput("estimator " + to_string(id) + " needs a model");
  switch (id) {
    case EstimatorId::IS: return is_estimate(data, pi_e, pi_b);
    case EstimatorId::StepIS: return step_is_estimate(data, pi_e, pi_b);
    case EstimatorId::WIS: return wis_estimate(data, pi_e, pi_b);
    case EstimatorId::StepWIS: return step_wis_estimate(data, pi_e, pi_b);
    case EstimatorId::DM0:
    case EstimatorId::DM: {
      const auto xs = initial_states(data);
      return dm_estimate(xs, *model, pi_e);
    }
    case EstimatorId::DR0:
    case EstimatorId::DR:
    case EstimatorId::MRDR0:
    case EstimatorId::MRDR: return dr_estimate(data, *model, pi_e, pi_b);
  }
  throw InvalidInput("unhandled estimator");
}

}  // namespace ope
