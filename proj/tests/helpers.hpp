#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ope/core.hpp"
#include "ope/policies.hpp"
#include "ope/rng.hpp"

namespace testing {

using namespace ope;

inline std::shared_ptr<TabularPolicy> table_policy(std::vector<std::vector<double>> rows, std::string name = "p") {
  return std::make_shared<TabularPolicy>(std::move(rows), std::move(name));
}

// Always picks the same action, at any state.
class ConstantPolicy final : public DeterministicPolicy {
 public:
  ConstantPolicy(Action a, int num_actions) : DeterministicPolicy(num_actions), a_(a) {}
  std::string describe() const override { return "constant:" + std::to_string(a_); }

 protected:
  Action choose_at(const State&) const override { return a_; }

 private:
  Action a_;
};

// Rows drawn from a Dirichlet(1)-like recipe, floored at min_prob before renormalizing.
inline std::shared_ptr<TabularPolicy> random_policy(int states, int actions, Rng& rng, double min_prob = 0.05) {
  std::vector<std::vector<double>> rows(states, std::vector<double>(actions));
  for (auto& row : rows) {
    double s = 0.0;
    for (auto& p : row) {
      p = min_prob + rng.uniform();
      s += p;
    }
    for (auto& p : row) p /= s;
    double rest = 0.0;
    for (int a = 0; a + 1 < actions; ++a) rest += row[a];
    row[actions - 1] = 1.0 - rest;
  }
  return table_policy(std::move(rows), "random");
}

// Trajectories over discrete states with uniformly random transitions and
// Gaussian rewards; actions drawn from pi_b and logged with their probability.
inline Dataset random_dataset(Rng& rng, int n, int T, int states, const Policy& pi_b, double gamma = 1.0) {
  Dataset data;
  data.gamma = gamma;
  for (int i = 0; i < n; ++i) {
    Trajectory traj;
    for (int t = 0; t < T; ++t) {
      const State x = State::discrete(rng.uniform_int(states));
      const Action a = pi_b.sample(x, rng);
      traj.steps.push_back({x, a, rng.normal(), pi_b.prob(x, a)});
    }
    data.trajectories.push_back(std::move(traj));
  }
  return data;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::path(OPE_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
