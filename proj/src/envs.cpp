#include "ope/envs.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "ope/numeric.hpp"
#include "ope/training.hpp"

namespace ope {

namespace {

class TabularEnvironment final : public Environment {
 public:
  TabularEnvironment(std::string id, TabularModel mdp, int horizon, PolicyPtr behavior, PolicyPtr evaluation,
                     DeterministicPolicyPtr base)
      : id_(std::move(id)),
        mdp_(std::move(mdp)),
        horizon_(horizon),
        behavior_(std::move(behavior)),
        evaluation_(std::move(evaluation)),
        base_(std::move(base)) {
    mdp_.validate();
  }

  std::string id() const override { return id_; }
  int action_count() const override { return mdp_.num_actions; }
  int horizon() const override { return horizon_; }
  const TabularModel* tabular() const override { return &mdp_; }

  State reset(Rng& rng) const override {
    return State::discrete(draw(mdp_.num_states, [&](int k) { return mdp_.initial[k]; }, rng));
  }

  Transition step(const State& latent, Action a, Rng& rng) const override {
    const auto& outs = mdp_.outcomes.at(latent.id()).at(a);
    const int k = draw(static_cast<int>(outs.size()), [&](int i) { return outs[i].prob; }, rng);
    const Outcome& o = outs[k];
    return {State::discrete(o.next), o.reward, static_cast<bool>(mdp_.terminal[o.next])};
  }

  State observe(const State& latent) const override {
    if (latent.is_absorbing()) return latent;
    return mdp_.observe(latent.id());
  }

  FeatureMapPtr default_features() const override { return tabular_features(mdp_.num_observations, mdp_.num_actions); }
  PolicyPtr behavior_policy() const override { return behavior_; }
  PolicyPtr evaluation_policy() const override { return evaluation_; }
  DeterministicPolicyPtr base_policy() const override { return base_; }

 private:
  template <class F>
  static int draw(int k, F&& weight, Rng& rng) {
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
  }

  std::string id_;
  TabularModel mdp_;
  int horizon_;
  PolicyPtr behavior_;
  PolicyPtr evaluation_;
  DeterministicPolicyPtr base_;
};

TabularModel blank_model(int states, int actions, int observations) {
  TabularModel m;
  m.num_states = states;
  m.num_actions = actions;
  m.num_observations = observations;
  m.initial.assign(states, 0.0);
  m.observation.assign(states, 0);
  m.terminal.assign(states, 0);
  m.outcomes.assign(states, std::vector<std::vector<Outcome>>(actions));
  return m;
}

}  // namespace

EnvironmentPtr model_fail() {
  // Latent 0 start, 1 upper, 2 lower, 3 end. a1 (index 0) leads up, a2 down.
  TabularModel m = blank_model(4, 2, 2);
  m.initial[0] = 1.0;
  m.observation = {0, 0, 0, 1};
  m.terminal[3] = 1;
  m.outcomes[0][0] = {{1, 1.0, 0.0}};
  m.outcomes[0][1] = {{2, 1.0, 0.0}};
  for (int a = 0; a < 2; ++a) {
    m.outcomes[1][a] = {{3, 1.0, 1.0}};
    m.outcomes[2][a] = {{3, 1.0, -1.0}};
  }
  auto eval = std::make_shared<TabularPolicy>(std::vector<std::vector<double>>{{0.88, 0.12}, {0.5, 0.5}}, "evaluation");
  auto behavior =
      std::make_shared<TabularPolicy>(std::vector<std::vector<double>>{{0.12, 0.88}, {0.5, 0.5}}, "behavior");
  auto base = std::make_shared<TableDeterministicPolicy>(std::vector<Action>{0, 0}, 2, "base");
  return std::make_shared<TabularEnvironment>("model-fail", std::move(m), 2, behavior, eval, base);
}

EnvironmentPtr model_win() {
  // s1, s2, s3 = 0, 1, 2. Reward is granted on entering s2 (+1) or s3 (-1).
  TabularModel m = blank_model(3, 2, 3);
  m.initial[0] = 1.0;
  m.observation = {0, 1, 2};
  m.outcomes[0][0] = {{1, 0.4, 1.0}, {2, 0.6, -1.0}};
  m.outcomes[0][1] = {{1, 0.6, 1.0}, {2, 0.4, -1.0}};
  for (int s = 1; s <= 2; ++s) {
    for (int a = 0; a < 2; ++a) m.outcomes[s][a] = {{0, 1.0, 0.0}};
  }
  auto eval = std::make_shared<TabularPolicy>(
      std::vector<std::vector<double>>{{0.73, 0.27}, {0.5, 0.5}, {0.5, 0.5}}, "evaluation");
  auto behavior = std::make_shared<TabularPolicy>(
      std::vector<std::vector<double>>{{0.27, 0.73}, {0.5, 0.5}, {0.5, 0.5}}, "behavior");
  auto base = std::make_shared<TableDeterministicPolicy>(std::vector<Action>{0, 0, 0}, 2, "base");
  return std::make_shared<TabularEnvironment>("model-win", std::move(m), 20, behavior, eval, base);
}

EnvironmentPtr maze_4x4() {
  constexpr int N = 4;
  constexpr int kGoal = 15;
  const int red[] = {1 * N + 2, 2 * N + 1};
  // Actions: up, right, down, left.
  const int dr[] = {-1, 0, 1, 0};
  const int dc[] = {0, 1, 0, -1};
  TabularModel m = blank_model(N * N, 4, N * N);
  m.initial[0] = 1.0;
  for (int s = 0; s < N * N; ++s) m.observation[s] = s;
  m.terminal[kGoal] = 1;
  for (int s = 0; s < N * N; ++s) {
    const int r = s / N, c = s % N;
    for (int a = 0; a < 4; ++a) {
      const int nr = r + dr[a], nc = c + dc[a];
      const int next = (nr < 0 || nr >= N || nc < 0 || nc >= N) ? s : nr * N + nc;
      double reward = 0.0;
      if (next == kGoal) reward = 10.0;
      if (next == red[0] || next == red[1]) reward = -5.0;
      m.outcomes[s][a] = {{next, 1.0, reward}};
    }
  }
  std::vector<std::vector<double>> behavior(N * N);
  std::vector<Action> base(N * N);
  for (int s = 0; s < N * N; ++s) {
    if (s % N < N - 1) {
      behavior[s] = {0.1, 0.55, 0.25, 0.1};
      base[s] = 1;
    } else {
      behavior[s] = {0.1, 0.1, 0.6, 0.2};
      base[s] = 2;
    }
  }
  auto base_policy = std::make_shared<TableDeterministicPolicy>(base, 4, "base");
  auto eval = soften(base_policy, SofteningSpec{SofteningKind::Friendly, 0.9, 0.0});
  auto beh = std::make_shared<TabularPolicy>(behavior, "behavior");
  return std::make_shared<TabularEnvironment>("maze", std::move(m), 100, beh, eval, base_policy);
}

namespace {

// Shared by the continuous environments: the base policy is trained on first
// use with a fixed budget and seed, then softened into behavior/evaluation.
class TrainedEnvironment : public Environment {
 public:
  PolicyPtr behavior_policy() const override { return soften(base_policy(), behavior_spec()); }
  PolicyPtr evaluation_policy() const override { return soften(base_policy(), evaluation_spec()); }
  DeterministicPolicyPtr base_policy() const override {
    std::call_once(once_, [this] { base_ = train_base(); });
    return base_;
  }

 protected:
  virtual DeterministicPolicyPtr train_base() const = 0;
  virtual SofteningSpec behavior_spec() const { return {SofteningKind::Friendly, 0.8, 0.05}; }
  virtual SofteningSpec evaluation_spec() const { return {SofteningKind::Friendly, 0.9, 0.05}; }

 private:
  mutable std::once_flag once_;
  mutable DeterministicPolicyPtr base_;
};

}  // namespace

namespace {

class MountainCar final : public TrainedEnvironment {
 public:
  explicit MountainCar(MountainCarParams p) : p_(p) {}
  std::string id() const override { return "mountain-car"; }
  int action_count() const override { return 3; }
  int horizon() const override { return p_.horizon; }

  State reset(Rng& rng) const override { return State::continuous({rng.uniform(-0.6, -0.4), 0.0, 0.0}); }

  Transition step(const State& latent, Action a, Rng&) const override {
    const auto f = latent.features();
    double pos = f[0], vel = f[1];
    vel += p_.force * (a - 1) - p_.gravity * std::cos(3.0 * pos);
    vel = std::clamp(vel, -p_.max_speed, p_.max_speed);
    pos += vel;
    if (pos < p_.min_position) {
      pos = p_.min_position;
      vel = 0.0;
    }
    const bool done = pos >= p_.max_position;
    if (done) pos = p_.max_position;
    return {State::continuous({pos, vel, f[2] + 1.0}), -1.0, done};
  }

  FeatureMapPtr default_features() const override { return mountaincar_features(8, 8, 10, 3); }

 protected:
  DeterministicPolicyPtr train_base() const override { return train_mountain_car_base(*this); }

 private:
  MountainCarParams p_;
};

class CartPole final : public TrainedEnvironment {
 public:
  explicit CartPole(CartPoleParams p) : p_(p) {}
  std::string id() const override { return "cart-pole"; }
  int action_count() const override { return 2; }
  int horizon() const override { return p_.horizon; }

  // State vector: position, angle, velocity, angular velocity, step index.
  State reset(Rng& rng) const override {
    std::vector<double> s(5, 0.0);
    for (int i = 0; i < 4; ++i) s[i] = rng.uniform(-0.05, 0.05);
    return State::continuous(std::move(s));
  }

  Transition step(const State& latent, Action a, Rng&) const override {
    const auto f = latent.features();
    double x = f[0], theta = f[1], x_dot = f[2], theta_dot = f[3];
    const double total_mass = p_.cart_mass + p_.pole_mass;
    const double pml = p_.pole_mass * p_.half_length;
    const double force = a == 1 ? p_.force : -p_.force;
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double temp = (force + pml * theta_dot * theta_dot * sin_t) / total_mass;
    const double theta_acc = (p_.gravity * sin_t - cos_t * temp) /
                             (p_.half_length * (4.0 / 3.0 - p_.pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - pml * theta_acc * cos_t / total_mass;
    x += p_.tau * x_dot;
    x_dot += p_.tau * x_acc;
    theta += p_.tau * theta_dot;
    theta_dot += p_.tau * theta_acc;
    const bool done = std::abs(x) > p_.max_position || std::abs(theta) > p_.max_angle;
    return {State::continuous({x, theta, x_dot, theta_dot, f[4] + 1.0}), 1.0, done};
  }

  FeatureMapPtr default_features() const override { return cartpole_features(4, 10); }

 protected:
  DeterministicPolicyPtr train_base() const override { return train_cart_pole_base(*this); }

 private:
  CartPoleParams p_;
};

}  // namespace

EnvironmentPtr mountain_car(const MountainCarParams& params) { return std::make_shared<MountainCar>(params); }
EnvironmentPtr cart_pole(const CartPoleParams& params) { return std::make_shared<CartPole>(params); }

std::vector<std::string> environment_ids() { return {"model-fail", "model-win", "maze", "mountain-car", "cart-pole"}; }

EnvironmentPtr make_environment(std::string_view id) {
  if (id == "model-fail") return model_fail();
  if (id == "model-win") return model_win();
  if (id == "maze") return maze_4x4();
  if (id == "mountain-car") return mountain_car();
  if (id == "cart-pole") return cart_pole();
  std::string valid;
  for (const auto& v : environment_ids()) valid += (valid.empty() ? "" : ", ") + v;
  throw InvalidInput("unknown environment '" + std::string(id) + "'; valid ids: " + valid);
}

PolicyPtr resolve_policy(const Environment& env, std::string_view spec) {
  if (spec == "behavior") return env.behavior_policy();
  if (spec == "evaluation") return env.evaluation_policy();
  return soften(env.base_policy(), parse_softening(spec));
}

namespace {

Trajectory rollout(const Environment& env, const Policy& policy, Rng& rng) {
  const int T = env.horizon();
  Trajectory traj;
  traj.steps.reserve(T);
  State latent = env.reset(rng);
  bool done = false;
  for (int t = 0; t < T; ++t) {
    if (done) {
      traj.steps.push_back({State::absorbing(), kNoOp, 0.0, 1.0});
      continue;
    }
    State obs = env.observe(latent);
    const Action a = policy.sample(obs, rng);
    const double pb = policy.prob(obs, a);
    Transition tr = env.step(latent, a, rng);
    traj.steps.push_back({std::move(obs), a, tr.reward, pb});
    latent = std::move(tr.next);
    done = tr.done;
  }
  traj.terminal = env.observe(latent);
  return traj;
}

double rollout_return(const Environment& env, const Policy& policy, double gamma, Rng& rng) {
  const int T = env.horizon();
  State latent = env.reset(rng);
  double ret = 0.0, disc = 1.0;
  for (int t = 0; t < T; ++t) {
    const Action a = policy.sample(env.observe(latent), rng);
    Transition tr = env.step(latent, a, rng);
    ret += disc * tr.reward;
    disc *= gamma;
    if (tr.done) break;
    latent = std::move(tr.next);
  }
  return ret;
}

}  // namespace

Dataset generate_trajectories(const Environment& env, const Policy& policy, int n, std::uint64_t seed, double gamma) {
  if (n < 1) throw InvalidInput("need at least one trajectory");
  if (policy.action_count() != env.action_count()) throw InvalidInput("policy and environment action counts differ");
  Dataset data;
  data.gamma = gamma;
  data.meta = {seed, env.id(), policy.describe()};
  data.trajectories.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    data.trajectories.push_back(rollout(env, policy, rng));
  }
  return data;
}

std::string to_string(TruthMethod m) {
  switch (m) {
    case TruthMethod::ExactDP: return "exact-dp";
    case TruthMethod::Enumerate: return "enumerate";
    case TruthMethod::MonteCarlo: return "monte-carlo";
  }
  return "?";
}

TruthMethod parse_truth_method(std::string_view name) {
  if (name == "exact-dp" || name == "dp") return TruthMethod::ExactDP;
  if (name == "enumerate") return TruthMethod::Enumerate;
  if (name == "monte-carlo" || name == "mc") return TruthMethod::MonteCarlo;
  throw InvalidInput("unknown truth method: " + std::string(name) + " (expected exact-dp, enumerate, monte-carlo)");
}

TruthResult true_value(const Environment& env, const Policy& policy, double gamma, TruthMethod method, long episodes,
                       std::uint64_t seed) {
  TruthResult res;
  res.method = method;
  if (method != TruthMethod::MonteCarlo) {
    const TabularModel* mdp = env.tabular();
    if (!mdp) throw InvalidInput(to_string(method) + " needs a tabular environment; " + env.id() + " is not");
    res.value = method == TruthMethod::ExactDP ? evaluate_tabular(*mdp, policy, gamma, env.horizon()).value
                                               : enumerate_value(*mdp, policy, gamma, env.horizon());
    return res;
  }
  if (episodes < 2) throw InvalidInput("Monte Carlo truth needs at least two episodes");
  Accumulator sum, sum_sq;
  for (long i = 0; i < episodes; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const double g = rollout_return(env, policy, gamma, rng);
    sum.add(g);
    sum_sq.add(g * g);
  }
  const double m = static_cast<double>(episodes);
  const double mean = sum.value() / m;
  const double var = std::max(0.0, (sum_sq.value() - m * mean * mean) / (m - 1.0));
  res.value = mean;
  res.standard_error = std::sqrt(var / m);
  res.episodes = episodes;
  return res;
}

}  // namespace ope
