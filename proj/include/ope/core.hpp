#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ope/rng.hpp"

namespace ope {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Bad user input (flags, config, files). The CLI maps this to exit code 2.
struct InvalidInput : Error {
  using Error::Error;
};
struct ZeroProbabilityError : Error {
  using Error::Error;
};
struct DegenerateWeightsError : Error {
  using Error::Error;
};
struct SingularSystemError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};

using Action = int;

// Action taken at the absorbing state that pads early-terminated episodes.
// Every policy puts probability 1 on it there.
inline constexpr Action kNoOp = 0;

class State {
 public:
  State() = default;  // absorbing

  static State discrete(int id);
  static State continuous(std::vector<double> features);
  static State absorbing() { return State(); }

  bool is_absorbing() const { return kind_ == Kind::Absorbing; }
  bool is_discrete() const { return kind_ == Kind::Discrete; }
  bool is_continuous() const { return kind_ == Kind::Continuous; }

  // Discrete id; -1 for the absorbing state.
  int id() const { return id_; }
  std::span<const double> features() const { return features_; }

  friend bool operator==(const State&, const State&) = default;
  friend std::strong_ordering compare(const State& a, const State& b);

 private:
  enum class Kind : std::uint8_t { Absorbing, Discrete, Continuous };
  Kind kind_ = Kind::Absorbing;
  int id_ = -1;
  std::vector<double> features_;
};

struct Step {
  State state;
  Action action = 0;
  double reward = 0.0;
  double behavior_prob = 1.0;
};

struct Trajectory {
  std::vector<Step> steps;
  std::optional<State> terminal;

  int horizon() const { return static_cast<int>(steps.size()); }
};

struct DatasetMeta {
  std::uint64_t seed = 0;
  std::string env;
  std::string behavior;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  double gamma = 1.0;
  DatasetMeta meta;

  int size() const { return static_cast<int>(trajectories.size()); }
  int horizon() const { return trajectories.empty() ? 0 : trajectories.front().horizon(); }
  // Throws InvalidInput if the type invariants do not hold.
  void validate() const;
};

// Lexicographic order on trajectory contents; gives fitting a canonical row order.
bool trajectory_less(const Trajectory& a, const Trajectory& b);
// Trajectory indices sorted by trajectory_less (stable).
std::vector<std::size_t> canonical_order(const Dataset& data);

class Policy {
 public:
  virtual ~Policy() = default;

  int action_count() const { return action_count_; }
  double prob(const State& x, Action a) const;
  std::vector<double> probs(const State& x) const;
  Action sample(const State& x, Rng& rng) const;
  virtual std::string describe() const = 0;

 protected:
  explicit Policy(int action_count);
  // Only called for non-absorbing states and in-range actions.
  virtual double prob_at(const State& x, Action a) const = 0;
  virtual void probs_at(const State& x, std::span<double> out) const;
  virtual Action sample_at(const State& x, Rng& rng) const;

 private:
  int action_count_;
};

// Policy whose distribution is a point mass.
class DeterministicPolicy : public Policy {
 public:
  Action choose(const State& x) const { return x.is_absorbing() ? kNoOp : choose_at(x); }

 protected:
  using Policy::Policy;
  virtual Action choose_at(const State& x) const = 0;
  double prob_at(const State& x, Action a) const override { return choose_at(x) == a ? 1.0 : 0.0; }
  Action sample_at(const State& x, Rng&) const override { return choose_at(x); }
};

// omega_{t1:t2}; 1 when t1 > t2. Throws ZeroProbabilityError if pi_b is zero on a logged action.
double cumulative_ratio(const Trajectory& traj, const Policy& pi_e, const Policy& pi_b, int t1, int t2);

// Per-step ratios pi_e(a_t|x_t) / pi_b(a_t|x_t).
std::vector<double> step_ratios(const Trajectory& traj, const Policy& pi_e, const Policy& pi_b);

// omega_{0:t} for every t.
std::vector<double> cumulative_weights(std::span<const double> ratios);

double discounted_return(const Trajectory& traj, double gamma);

// sum_{tau>=t} gamma^{tau-t} r_tau.
double discounted_suffix_return(const Trajectory& traj, double gamma, int t);

// R-bar_{t:T-1} = sum_{tau>=t} gamma^{tau-t} omega_{t+1:tau} r_tau.
double corrected_return(const Trajectory& traj, const Policy& pi_e, const Policy& pi_b, double gamma, int t);

// R-bar_{t:T-1} for every t, from precomputed step ratios.
std::vector<double> corrected_returns(const Trajectory& traj, std::span<const double> ratios, double gamma);

struct ContinuityViolation {
  State state;
  Action action;
  double eval_prob;
};

std::vector<ContinuityViolation> check_absolute_continuity(const Policy& pi_e, const Policy& pi_b,
                                                           std::span<const State> states);

}  // namespace ope
