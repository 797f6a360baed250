#include "ope/policies.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace ope {

TabularPolicy::TabularPolicy(std::vector<std::vector<double>> table, std::string name)
    : Policy(table.empty() ? 0 : static_cast<int>(table.front().size())),
      table_(std::move(table)),
      name_(std::move(name)) {
  for (const auto& row : table_) {
    if (static_cast<int>(row.size()) != action_count()) throw InvalidInput("tabular policy rows differ in length");
    double s = 0.0;
    for (double p : row) {
      if (p < 0.0) throw InvalidInput("tabular policy has a negative probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) throw InvalidInput("tabular policy row does not sum to 1");
  }
}

const std::vector<double>& TabularPolicy::row(const State& x) const {
  if (!x.is_discrete() || x.id() >= static_cast<int>(table_.size())) {
    throw InvalidInput("tabular policy " + name_ + ": state out of range");
  }
  return table_[x.id()];
}

double TabularPolicy::prob_at(const State& x, Action a) const { return row(x)[a]; }

void TabularPolicy::probs_at(const State& x, std::span<double> out) const {
  const auto& r = row(x);
  std::copy(r.begin(), r.end(), out.begin());
}

TableDeterministicPolicy::TableDeterministicPolicy(std::vector<Action> actions, int num_actions, std::string name)
    : DeterministicPolicy(num_actions), actions_(std::move(actions)), name_(std::move(name)) {
  for (Action a : actions_) {
    if (a < 0 || a >= num_actions) throw InvalidInput("deterministic policy action out of range");
  }
}

Action TableDeterministicPolicy::choose_at(const State& x) const {
  if (!x.is_discrete() || x.id() >= static_cast<int>(actions_.size())) {
    throw InvalidInput("deterministic policy " + name_ + ": state out of range");
  }
  return actions_[x.id()];
}

GreedyLinearPolicy::GreedyLinearPolicy(LinearQModel model, std::string name)
    : DeterministicPolicy(model.features().action_count()), model_(std::move(model)), name_(std::move(name)) {}

Action GreedyLinearPolicy::choose_at(const State& x) const {
  Action best = 0;
  double best_q = model_.q(x, 0);
  for (Action a = 1; a < action_count(); ++a) {
    const double q = model_.q(x, a);
    if (q > best_q) {
      best_q = q;
      best = a;
    }
  }
  return best;
}

LinearClassifierPolicy::LinearClassifierPolicy(Eigen::MatrixXd weights, Eigen::VectorXd mean, Eigen::VectorXd scale)
    : DeterministicPolicy(static_cast<int>(weights.rows())),
      weights_(std::move(weights)),
      mean_(std::move(mean)),
      scale_(std::move(scale)) {
  if (weights_.cols() != mean_.size() + 1 || mean_.size() != scale_.size()) {
    throw InvalidInput("classifier weights do not match the feature dimension");
  }
}

Eigen::VectorXd LinearClassifierPolicy::scores(std::span<const double> f) const {
  const int d = static_cast<int>(mean_.size());
  if (static_cast<int>(f.size()) != d) throw InvalidInput("classifier: context dimension mismatch");
  Eigen::VectorXd z(d + 1);
  for (int i = 0; i < d; ++i) z[i] = (f[i] - mean_[i]) / scale_[i];
  z[d] = 1.0;
  return weights_ * z;
}

Action LinearClassifierPolicy::choose_at(const State& x) const {
  const Eigen::VectorXd s = scores(x.features());
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < s.size(); ++k) {
    if (s[k] > s[best]) best = k;
  }
  return static_cast<Action>(best);
}

void SofteningSpec::validate() const {
  if (kind == SofteningKind::Neutral) return;
  const double lo = alpha - 0.5 * beta_soft;
  const double hi = alpha + 0.5 * beta_soft;
  if (!(beta_soft >= 0.0) || !(lo >= 0.0) || !(hi <= 1.0)) {
    throw InvalidInput("softening parameters must satisfy 0 <= alpha +- beta/2 <= 1");
  }
}

std::string SofteningSpec::describe() const {
  if (kind == SofteningKind::Neutral) return "neutral";
  auto shortest = [](double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  return std::string(kind == SofteningKind::Friendly ? "friendly" : "adversarial") + ':' + shortest(alpha) + ':' +
         shortest(beta_soft);
}

namespace {

double parse_number(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw InvalidInput("bad number in policy spec: " + std::string(s));
  return v;
}

}  // namespace

SofteningSpec parse_softening(std::string_view text) {
  SofteningSpec spec;
  if (text == "neutral") {
    spec.kind = SofteningKind::Neutral;
    return spec;
  }
  const auto c1 = text.find(':');
  const auto c2 = c1 == std::string_view::npos ? c1 : text.find(':', c1 + 1);
  if (c2 == std::string_view::npos) {
    throw InvalidInput("policy spec must be neutral, friendly:ALPHA:BETA or adversarial:ALPHA:BETA, got " +
                       std::string(text));
  }
  const auto kind = text.substr(0, c1);
  if (kind == "friendly") {
    spec.kind = SofteningKind::Friendly;
  } else if (kind == "adversarial") {
    spec.kind = SofteningKind::Adversarial;
  } else {
    throw InvalidInput("unknown softening kind: " + std::string(kind));
  }
  spec.alpha = parse_number(text.substr(c1 + 1, c2 - c1 - 1));
  spec.beta_soft = parse_number(text.substr(c2 + 1));
  spec.validate();
  return spec;
}

SoftenedPolicy::SoftenedPolicy(DeterministicPolicyPtr base, SofteningSpec spec)
    : Policy(base->action_count()), base_(std::move(base)), spec_(spec) {
  spec_.validate();
  if (action_count() < 2 && spec_.kind != SofteningKind::Neutral) throw InvalidInput("softening needs two actions");
}

void SoftenedPolicy::fill(Action base, double p, std::span<double> out) const {
  const int l = action_count();
  switch (spec_.kind) {
    case SofteningKind::Neutral:
      for (int a = 0; a < l; ++a) out[a] = 1.0 / l;
      return;
    case SofteningKind::Friendly:
      for (int a = 0; a < l; ++a) out[a] = (1.0 - p) / (l - 1);
      out[base] = p;
      return;
    case SofteningKind::Adversarial:
      for (int a = 0; a < l; ++a) out[a] = p / (l - 1) + (1.0 - p) / l;
      out[base] = (1.0 - p) / l;
      return;
  }
}

double SoftenedPolicy::prob_at(const State& x, Action a) const {
  // Same expressions as fill(), evaluated for one action.
  const int l = action_count();
  const double p = spec_.alpha;
  switch (spec_.kind) {
    case SofteningKind::Neutral: return 1.0 / l;
    case SofteningKind::Friendly: return a == base_->choose(x) ? p : (1.0 - p) / (l - 1);
    case SofteningKind::Adversarial: return a == base_->choose(x) ? (1.0 - p) / l : p / (l - 1) + (1.0 - p) / l;
  }
  return 0.0;
}

void SoftenedPolicy::probs_at(const State& x, std::span<double> out) const {
  const Action b = spec_.kind == SofteningKind::Neutral ? 0 : base_->choose(x);
  fill(b, spec_.alpha, out);
}

Action SoftenedPolicy::sample_at(const State& x, Rng& rng) const {
  const int l = action_count();
  if (spec_.kind == SofteningKind::Neutral) return rng.uniform_int(l);
  const double u = rng.uniform() - 0.5;
  std::vector<double> p(l);
  fill(base_->choose(x), spec_.alpha + spec_.beta_soft * u, p);
  const double v = rng.uniform();
  double cdf = 0.0;
  Action last = 0;
  for (int a = 0; a < l; ++a) {
    if (p[a] <= 0.0) continue;
    cdf += p[a];
    last = a;
    if (v < cdf) return a;
  }
  return last;
}

PolicyPtr soften(DeterministicPolicyPtr base, const SofteningSpec& spec) {
  return std::make_shared<SoftenedPolicy>(std::move(base), spec);
}

}  // namespace ope
