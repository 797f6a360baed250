#pragma once

#include <cstdint>
#include <memory>

#include "ope/envs.hpp"
#include "ope/linmodel.hpp"
#include "ope/policies.hpp"

namespace ope {

enum class ControlAlgorithm { SARSA, QLearning };

struct ControlConfig {
  ControlAlgorithm algorithm = ControlAlgorithm::SARSA;
  int episodes = 500;
  double alpha = 0.1;    // step size per unit feature norm
  double epsilon = 0.1;  // exploration rate of the epsilon-greedy behavior
  double gamma = 1.0;
  double initial_q = 0.0;
  std::uint64_t seed = 1;
};

// Linear TD control with epsilon-greedy exploration. The greedy policy of the
// learned model is returned; ties break towards the lowest action index.
std::shared_ptr<GreedyLinearPolicy> train_control_policy(const Environment& env, FeatureMapPtr features,
                                                         const ControlConfig& config);

// Fixed-budget, fixed-seed training runs behind the continuous environments'
// base policies: SARSA on Mountain Car, Q-learning on Cart Pole.
DeterministicPolicyPtr train_mountain_car_base(const Environment& env);
DeterministicPolicyPtr train_cart_pole_base(const Environment& env);

}  // namespace ope
