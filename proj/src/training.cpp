#include "ope/training.hpp"

#include <algorithm>

namespace ope {

namespace {

double dot(const SparseVector& phi, const Eigen::VectorXd& beta) {
  double s = 0.0;
  for (const auto& e : phi) s += e.value * beta[e.index];
  return s;
}

Action greedy(const FeatureMap& fm, const State& x, const Eigen::VectorXd& beta, SparseVector& buf) {
  Action best = 0;
  double best_q = 0.0;
  for (Action a = 0; a < fm.action_count(); ++a) {
    fm.sparse_phi(x, a, buf);
    const double q = dot(buf, beta);
    if (a == 0 || q > best_q) {
      best = a;
      best_q = q;
    }
  }
  return best;
}

double max_q(const FeatureMap& fm, const State& x, const Eigen::VectorXd& beta, SparseVector& buf) {
  const Action a = greedy(fm, x, beta, buf);
  fm.sparse_phi(x, a, buf);
  return dot(buf, beta);
}

}  // namespace

std::shared_ptr<GreedyLinearPolicy> train_control_policy(const Environment& env, FeatureMapPtr features,
                                                         const ControlConfig& config) {
  if (!features) throw InvalidInput("training needs a feature map");
  if (features->action_count() != env.action_count())
    throw InvalidInput("feature map and environment action counts differ");
  if (config.episodes < 1 || config.alpha <= 0.0 || config.epsilon < 0.0 || config.epsilon > 1.0)
    throw InvalidInput("invalid training configuration");
  const FeatureMap& fm = *features;
  const int A = env.action_count();
  Eigen::VectorXd beta = Eigen::VectorXd::Constant(fm.dim(), config.initial_q);
  Rng rng(config.seed);
  SparseVector phi, buf;

  auto explore = [&](const State& obs) -> Action {
    if (rng.uniform() < config.epsilon) return static_cast<Action>(rng.uniform_int(A));
    return greedy(fm, obs, beta, buf);
  };

  for (int ep = 0; ep < config.episodes; ++ep) {
    State latent = env.reset(rng);
    State obs = env.observe(latent);
    Action a = explore(obs);
    for (int t = 0; t < env.horizon(); ++t) {
      Transition tr = env.step(latent, a, rng);
      State next_obs = env.observe(tr.next);
      const bool last = tr.done || t + 1 == env.horizon();
      Action next_a = last ? kNoOp : explore(next_obs);
      double target = tr.reward;
      if (!last) {
        if (config.algorithm == ControlAlgorithm::SARSA) {
          fm.sparse_phi(next_obs, next_a, buf);
          target += config.gamma * dot(buf, beta);
        } else {
          target += config.gamma * max_q(fm, next_obs, beta, buf);
        }
      }
      fm.sparse_phi(obs, a, phi);
      double norm2 = 0.0;
      for (const auto& e : phi) norm2 += e.value * e.value;
      if (norm2 > 0.0) {
        const double step = config.alpha / norm2 * (target - dot(phi, beta));
        for (const auto& e : phi) beta[e.index] += step * e.value;
      }
      if (last) break;
      latent = std::move(tr.next);
      obs = std::move(next_obs);
      a = next_a;
    }
  }
  return std::make_shared<GreedyLinearPolicy>(LinearQModel(std::move(features), std::move(beta)), "trained-greedy");
}

DeterministicPolicyPtr train_mountain_car_base(const Environment& env) {
  ControlConfig cfg;
  cfg.algorithm = ControlAlgorithm::SARSA;
  cfg.episodes = 1000;
  cfg.alpha = 0.1;
  cfg.epsilon = 0.05;
  cfg.gamma = 1.0;
  cfg.seed = 0x3c0a57;
  return train_control_policy(env, mountaincar_features(8, 8, 1, env.action_count()), cfg);
}

DeterministicPolicyPtr train_cart_pole_base(const Environment& env) {
  ControlConfig cfg;
  cfg.algorithm = ControlAlgorithm::QLearning;
  cfg.episodes = 2000;
  cfg.alpha = 0.1;
  cfg.epsilon = 0.1;
  cfg.gamma = 0.99;
  cfg.seed = 0xca27;
  return train_control_policy(env, cartpole_features(6, 1), cfg);
}

}  // namespace ope
