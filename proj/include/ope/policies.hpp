#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ope/core.hpp"
#include "ope/linmodel.hpp"

namespace ope {

using PolicyPtr = std::shared_ptr<const Policy>;
using DeterministicPolicyPtr = std::shared_ptr<const DeterministicPolicy>;

// Distribution table indexed by discrete state id.
class TabularPolicy final : public Policy {
 public:
  TabularPolicy(std::vector<std::vector<double>> table, std::string name);
  std::string describe() const override { return name_; }
  const std::vector<std::vector<double>>& table() const { return table_; }

 protected:
  double prob_at(const State& x, Action a) const override;
  void probs_at(const State& x, std::span<double> out) const override;

 private:
  const std::vector<double>& row(const State& x) const;
  std::vector<std::vector<double>> table_;
  std::string name_;
};

class UniformPolicy final : public Policy {
 public:
  explicit UniformPolicy(int num_actions) : Policy(num_actions) {}
  std::string describe() const override { return "neutral"; }

 protected:
  double prob_at(const State&, Action) const override { return 1.0 / action_count(); }
};

// Fixed action per discrete state id.
class TableDeterministicPolicy final : public DeterministicPolicy {
 public:
  TableDeterministicPolicy(std::vector<Action> actions, int num_actions, std::string name);
  std::string describe() const override { return name_; }

 protected:
  Action choose_at(const State& x) const override;

 private:
  std::vector<Action> actions_;
  std::string name_;
};

// argmax_a Q(x, a) of a linear model; ties go to the lowest index.
class GreedyLinearPolicy final : public DeterministicPolicy {
 public:
  explicit GreedyLinearPolicy(LinearQModel model, std::string name = "greedy");
  std::string describe() const override { return name_; }
  const LinearQModel& model() const { return model_; }

 protected:
  Action choose_at(const State& x) const override;

 private:
  LinearQModel model_;
  std::string name_;
};

// argmax_k w_k . [(x - mean) / scale, 1] over class weight rows.
class LinearClassifierPolicy final : public DeterministicPolicy {
 public:
  LinearClassifierPolicy(Eigen::MatrixXd weights, Eigen::VectorXd mean, Eigen::VectorXd scale);
  std::string describe() const override { return "logistic"; }
  const Eigen::MatrixXd& weights() const { return weights_; }
  Eigen::VectorXd scores(std::span<const double> features) const;

 protected:
  Action choose_at(const State& x) const override;

 private:
  Eigen::MatrixXd weights_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
};

enum class SofteningKind { Friendly, Adversarial, Neutral };

struct SofteningSpec {
  SofteningKind kind = SofteningKind::Friendly;
  double alpha = 1.0;
  double beta_soft = 0.0;

  // Throws InvalidInput unless 0 <= alpha +- beta_soft/2 <= 1.
  void validate() const;
  std::string describe() const;
};

// "friendly:0.9:0.05", "adversarial:0.3:0.2" or "neutral".
SofteningSpec parse_softening(std::string_view text);

// Stochastic policy built around a deterministic base action b(x), with
// p = alpha + beta_soft * u and u ~ U[-1/2, 1/2] drawn fresh per decision:
//   friendly:    b w.p. p, every other action (1 - p) / (l - 1)
//   adversarial: b w.p. (1 - p) / l, every other action p / (l - 1) + (1 - p) / l
//   neutral:     uniform
// prob() is the u-marginal, which is the same expression with p = alpha since
// the distribution is linear in p.
class SoftenedPolicy final : public Policy {
 public:
  SoftenedPolicy(DeterministicPolicyPtr base, SofteningSpec spec);
  std::string describe() const override { return spec_.describe(); }
  const SofteningSpec& spec() const { return spec_; }

 protected:
  double prob_at(const State& x, Action a) const override;
  void probs_at(const State& x, std::span<double> out) const override;
  Action sample_at(const State& x, Rng& rng) const override;

 private:
  void fill(Action base, double p, std::span<double> out) const;
  DeterministicPolicyPtr base_;
  SofteningSpec spec_;
};

PolicyPtr soften(DeterministicPolicyPtr base, const SofteningSpec& spec);

}  // namespace ope
