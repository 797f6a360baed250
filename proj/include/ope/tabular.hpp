#pragma once

#include <vector>

#include "ope/core.hpp"

namespace ope {

struct Outcome {
  int next;
  double prob;
  double reward;
};

// Finite MDP over latent states. Policies act on observations (observation[x]
// is the discrete id of the State they see). Entering a terminal state ends
// the episode.
struct TabularModel {
  int num_states = 0;
  int num_actions = 0;
  int num_observations = 0;
  std::vector<double> initial;
  std::vector<int> observation;
  std::vector<char> terminal;
  std::vector<std::vector<std::vector<Outcome>>> outcomes;  // [state][action]

  State observe(int latent) const { return State::discrete(observation[latent]); }
  // Throws InvalidInput unless every distribution sums to 1 within 1e-12.
  void validate() const;
};

// Finite-horizon evaluation of a policy. q[t][x][a], v[t][x] are values with
// T - t steps to go; d[t][x] is the probability of being at x at step t
// without having terminated.
struct TabularEvaluation {
  std::vector<std::vector<std::vector<double>>> q;
  std::vector<std::vector<double>> v;
  std::vector<std::vector<double>> d;
  double value = 0.0;
};

TabularEvaluation evaluate_tabular(const TabularModel& mdp, const Policy& pi, double gamma, int T);

// Value by summing over every reachable path; exponential, so only for short horizons.
double enumerate_value(const TabularModel& mdp, const Policy& pi, double gamma, int T);

}  // namespace ope
