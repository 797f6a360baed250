#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ope/core.hpp"
#include "ope/linmodel.hpp"
#include "ope/policies.hpp"
#include "ope/tabular.hpp"

namespace ope {

struct Transition {
  State next;
  double reward;
  bool done;
};

// Episodic environment over latent states; observe() maps a latent state to
// what policies see and what gets logged. Continuous environments append the
// step index to the state vector so time-dependent features can use it.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string id() const = 0;
  virtual int action_count() const = 0;
  virtual int horizon() const = 0;
  virtual State reset(Rng& rng) const = 0;
  virtual Transition step(const State& latent, Action a, Rng& rng) const = 0;
  virtual State observe(const State& latent) const { return latent; }
  // Exact tables for finite environments, null otherwise.
  virtual const TabularModel* tabular() const { return nullptr; }
  bool is_tabular() const { return tabular() != nullptr; }

  virtual FeatureMapPtr default_features() const = 0;
  virtual PolicyPtr behavior_policy() const = 0;
  virtual PolicyPtr evaluation_policy() const = 0;
  // Deterministic policy that softening specs are applied to.
  virtual DeterministicPolicyPtr base_policy() const = 0;
};

using EnvironmentPtr = std::shared_ptr<const Environment>;

// Four-node chain, T = 2, every non-terminal state observed as id 0.
EnvironmentPtr model_fail();
// Three states, T = 20; s1 -> s2 (+1) / s3 (-1), both return to s1.
EnvironmentPtr model_win();
// 4x4 grid, T = 100, goal (3,3) worth +10 and terminal, red cells (1,2) and (2,1) worth -5.
EnvironmentPtr maze_4x4();

struct MountainCarParams {
  double force = 0.0015;
  double gravity = 0.0025;
  double min_position = -0.7;
  double max_position = 0.5;
  double max_speed = 0.07;
  int horizon = 250;
};
EnvironmentPtr mountain_car(const MountainCarParams& params = {});

struct CartPoleParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force = 10.0;
  double tau = 0.02;
  double max_angle = 12.0 * 3.14159265358979323846 / 180.0;
  double max_position = 2.4;
  int horizon = 250;
};
EnvironmentPtr cart_pole(const CartPoleParams& params = {});

std::vector<std::string> environment_ids();
// Throws InvalidInput naming the valid ids.
EnvironmentPtr make_environment(std::string_view id);

// "behavior", "evaluation", or a softening spec applied to the base policy.
PolicyPtr resolve_policy(const Environment& env, std::string_view spec);

// Trajectory i draws from its own stream derive_seed(seed, i). Episodes that end
// early are padded with (absorbing state, no-op, reward 0, pb 1).
Dataset generate_trajectories(const Environment& env, const Policy& policy, int n, std::uint64_t seed,
                              double gamma = 1.0);

enum class TruthMethod { ExactDP, Enumerate, MonteCarlo };

std::string to_string(TruthMethod m);
TruthMethod parse_truth_method(std::string_view name);

struct TruthResult {
  double value = 0.0;
  double standard_error = 0.0;
  TruthMethod method = TruthMethod::ExactDP;
  long episodes = 0;
};

inline constexpr std::uint64_t kOracleSeed = 0x0ace5eedULL;

TruthResult true_value(const Environment& env, const Policy& policy, double gamma, TruthMethod method,
                       long episodes = 1000000, std::uint64_t seed = kOracleSeed);

}  // namespace ope
