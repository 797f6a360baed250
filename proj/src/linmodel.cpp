#include "ope/linmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include <Eigen/SparseCholesky>

#include "ope/numeric.hpp"

namespace ope {

Eigen::VectorXd FeatureMap::phi(const State& x, Action a) const {
  SparseVector sv;
  sparse_phi(x, a, sv);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
  for (const auto& e : sv) out[e.index] += e.value;
  return out;
}

namespace {

void check_action(const FeatureMap& fm, Action a) {
  if (a < 0 || a >= fm.action_count()) throw InvalidInput("feature map: action out of range");
}

class TabularFeatures final : public FeatureMap {
 public:
  TabularFeatures(int num_states, int num_actions) : states_(num_states), actions_(num_actions) {
    if (num_states < 1 || num_actions < 1) throw InvalidInput("tabular features need positive sizes");
  }
  int dim() const override { return states_ * actions_; }
  int action_count() const override { return actions_; }
  void sparse_phi(const State& x, Action a, SparseVector& out) const override {
    out.clear();
    check_action(*this, a);
    if (x.is_absorbing()) return;
    if (!x.is_discrete() || x.id() >= states_) throw InvalidInput("tabular features: state out of range");
    out.push_back({x.id() * actions_ + a, 1.0});
  }
  Json descriptor() const override {
    Json j;
    j["kind"] = "tabular";
    j["states"] = states_;
    j["actions"] = actions_;
    return j;
  }

 private:
  int states_;
  int actions_;
};

class TileFeatures final : public FeatureMap {
 public:
  explicit TileFeatures(TileSpec spec) : spec_(std::move(spec)) {
    const std::size_t d = spec_.lows.size();
    if (d == 0 || spec_.highs.size() != d || spec_.bins.size() != d) {
      throw InvalidInput("tile features: lows, highs and bins must have equal nonzero length");
    }
    cells_ = 1;
    for (std::size_t i = 0; i < d; ++i) {
      if (spec_.bins[i] < 1 || !(spec_.highs[i] > spec_.lows[i])) throw InvalidInput("tile features: bad range");
      cells_ *= spec_.bins[i];
    }
    if (spec_.num_actions < 1 || spec_.horizon_bins < 1 || spec_.horizon < 1) {
      throw InvalidInput("tile features: actions, horizon and horizon bins must be positive");
    }
    if (spec_.horizon_bins > 1 && spec_.time_index < 0) throw InvalidInput("tile features: time index missing");
  }
  int dim() const override { return cells_ * spec_.num_actions * spec_.horizon_bins; }
  int action_count() const override { return spec_.num_actions; }

  void sparse_phi(const State& x, Action a, SparseVector& out) const override {
    out.clear();
    check_action(*this, a);
    if (x.is_absorbing()) return;
    const auto f = x.features();
    const std::size_t d = spec_.lows.size();
    if (!x.is_continuous() || f.size() < d) throw InvalidInput("tile features: state has too few features");
    int cell = 0;
    for (std::size_t i = 0; i < d; ++i) cell = cell * spec_.bins[i] + bin(f[i], spec_.lows[i], spec_.highs[i], spec_.bins[i]);
    int hbin = 0;
    if (spec_.horizon_bins > 1) {
      if (static_cast<std::size_t>(spec_.time_index) >= f.size()) throw InvalidInput("tile features: no step index");
      hbin = bin(f[spec_.time_index], 0.0, spec_.horizon, spec_.horizon_bins);
    }
    out.push_back({(hbin * spec_.num_actions + a) * cells_ + cell, 1.0});
  }

  Json descriptor() const override {
    Json j;
    j["kind"] = "tile";
    j["lows"] = spec_.lows;
    j["highs"] = spec_.highs;
    j["bins"] = spec_.bins;
    j["actions"] = spec_.num_actions;
    j["horizon_bins"] = spec_.horizon_bins;
    j["horizon"] = spec_.horizon;
    j["time_index"] = spec_.time_index;
    return j;
  }

 private:
  static double edge(double lo, double hi, int n, int k) { return lo + (hi - lo) * k / n; }

  static int bin(double v, double lo, double hi, int n) {
    int k = static_cast<int>(std::floor((v - lo) / (hi - lo) * n));
    k = std::clamp(k, 0, n - 1);
    // Half-open bins; a value within rounding of an edge belongs to the upper bin.
    const double tol = 1e-12 * (hi - lo);
    while (k + 1 < n && v >= edge(lo, hi, n, k + 1) - tol) ++k;
    while (k > 0 && v < edge(lo, hi, n, k) - tol) --k;
    return k;
  }

  TileSpec spec_;
  int cells_ = 1;
};

class ActionLinearFeatures final : public FeatureMap {
 public:
  ActionLinearFeatures(int context_dim, int num_actions) : d_(context_dim), actions_(num_actions) {
    if (context_dim < 0 || num_actions < 1) throw InvalidInput("action-linear features: bad sizes");
  }
  int dim() const override { return actions_ * (d_ + 1); }
  int action_count() const override { return actions_; }
  void sparse_phi(const State& x, Action a, SparseVector& out) const override {
    out.clear();
    check_action(*this, a);
    if (x.is_absorbing()) return;
    const auto f = x.features();
    if (static_cast<int>(f.size()) != d_) throw InvalidInput("action-linear features: context dimension mismatch");
    const int base = a * (d_ + 1);
    for (int i = 0; i < d_; ++i) {
      if (f[i] != 0.0) out.push_back({base + i, f[i]});
    }
    out.push_back({base + d_, 1.0});
  }
  Json descriptor() const override {
    Json j;
    j["kind"] = "action-linear";
    j["dim"] = d_;
    j["actions"] = actions_;
    return j;
  }

 private:
  int d_;
  int actions_;
};

}  // namespace

FeatureMapPtr tabular_features(int num_states, int num_actions) {
  return std::make_shared<TabularFeatures>(num_states, num_actions);
}

FeatureMapPtr tile_features(TileSpec spec) { return std::make_shared<TileFeatures>(std::move(spec)); }

FeatureMapPtr mountaincar_features(int position_bins, int velocity_bins, int horizon_bins, int num_actions) {
  TileSpec s;
  s.lows = {-0.7, -0.07};
  s.highs = {0.5, 0.07};
  s.bins = {position_bins, velocity_bins};
  s.num_actions = num_actions;
  s.horizon_bins = horizon_bins;
  s.horizon = 250;
  s.time_index = 2;
  return tile_features(std::move(s));
}

FeatureMapPtr cartpole_features(int bins_per_dim, int horizon_bins) {
  TileSpec s;
  s.lows = {-2.4, -12.0 * M_PI / 180.0, -3.0, -3.5};
  s.highs = {2.4, 12.0 * M_PI / 180.0, 3.0, 3.5};
  s.bins = std::vector<int>(4, bins_per_dim);
  s.num_actions = 2;
  s.horizon_bins = horizon_bins;
  s.horizon = 250;
  s.time_index = 4;
  return tile_features(std::move(s));
}

FeatureMapPtr action_linear_features(int context_dim, int num_actions) {
  return std::make_shared<ActionLinearFeatures>(context_dim, num_actions);
}

FeatureMapPtr feature_map_from_descriptor(const Json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "tabular") return tabular_features(j.at("states").get<int>(), j.at("actions").get<int>());
    if (kind == "action-linear") return action_linear_features(j.at("dim").get<int>(), j.at("actions").get<int>());
    if (kind == "tile") {
      TileSpec s;
      s.lows = j.at("lows").get<std::vector<double>>();
      s.highs = j.at("highs").get<std::vector<double>>();
      s.bins = j.at("bins").get<std::vector<int>>();
      s.num_actions = j.at("actions").get<int>();
      s.horizon_bins = j.at("horizon_bins").get<int>();
      s.horizon = j.at("horizon").get<int>();
      s.time_index = j.at("time_index").get<int>();
      return tile_features(std::move(s));
    }
    throw InvalidInput("unknown feature map kind: " + kind);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed feature map descriptor: ") + e.what());
  }
}

LinearQModel::LinearQModel(FeatureMapPtr features, Eigen::VectorXd beta)
    : features_(std::move(features)), beta_(std::move(beta)) {
  if (!features_) throw InvalidInput("model needs a feature map");
  if (beta_.size() != features_->dim()) throw InvalidInput("beta length does not match feature dimension");
  if (!beta_.allFinite()) throw InvalidInput("beta has non-finite entries");
}

double LinearQModel::q(const State& x, Action a) const {
  thread_local SparseVector sv;
  features_->sparse_phi(x, a, sv);
  double s = 0.0;
  for (const auto& e : sv) s += e.value * beta_[e.index];
  return s;
}

double LinearQModel::v(const State& x, const Policy& pi) const {
  const auto p = pi.probs(x);
  double s = 0.0;
  for (int a = 0; a < static_cast<int>(p.size()); ++a) {
    if (p[a] != 0.0) s += p[a] * q(x, a);
  }
  return s;
}

Json model_to_json(const LinearQModel& model) {
  Json j;
  j["kappa"] = model.features().dim();
  j["beta"] = std::vector<double>(model.beta().data(), model.beta().data() + model.beta().size());
  j["feature_map"] = model.features().descriptor();
  return j;
}

LinearQModel model_from_json(const Json& j) {
  try {
    auto fm = feature_map_from_descriptor(j.at("feature_map"));
    const auto beta = j.at("beta").get<std::vector<double>>();
    if (j.at("kappa").get<int>() != static_cast<int>(beta.size())) throw InvalidInput("model kappa mismatch");
    return LinearQModel(std::move(fm), Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size()));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const LinearQModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << model_to_json(model).dump() << '\n';
}

LinearQModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open model " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed model file: ") + e.what());
  }
  return model_from_json(j);
}

void WlsProblem::add_row(SparseVector phi, double target, double weight) {
  if (!(weight >= 0.0) || !std::isfinite(weight)) throw InvalidInput("WLS weights must be finite and non-negative");
  rows.push_back({std::move(phi), target, weight});
}

void WlsProblem::add_row(const Eigen::VectorXd& phi, double target, double weight) {
  if (phi.size() != dim) throw InvalidInput("WLS row has wrong length");
  SparseVector sv;
  for (int i = 0; i < phi.size(); ++i) {
    if (phi[i] != 0.0) sv.push_back({i, phi[i]});
  }
  add_row(std::move(sv), target, weight);
}

double WlsProblem::objective(const Eigen::VectorXd& beta, Eigen::VectorXd* grad) const {
  Accumulator acc;
  if (grad) *grad = Eigen::VectorXd::Zero(dim);
  for (const auto& row : rows) {
    double pred = 0.0;
    for (const auto& e : row.phi) pred += e.value * beta[e.index];
    const double resid = row.target - pred;
    acc.add(row.weight * resid * resid);
    if (grad) {
      for (const auto& e : row.phi) (*grad)[e.index] -= 2.0 * row.weight * resid * e.value;
    }
  }
  if (ridge > 0.0) {
    acc.add(ridge * beta.squaredNorm());
    if (grad) *grad += 2.0 * ridge * beta;
  }
  return acc.value();
}

Eigen::VectorXd solve_spd(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b, bool require_full_rank) {
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw SingularSystemError("normal equations are singular");
  const Eigen::VectorXd d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (!(dmax > 0.0)) throw SingularSystemError("normal equations are zero");
  const double floor = require_full_rank ? 1e-13 * dmax : 0.0;
  for (int i = 0; i < d.size(); ++i) {
    if (d[i] <= floor) throw SingularSystemError("normal equations are rank-deficient");
  }
  Eigen::VectorXd x = ldlt.solve(b);
  if (ldlt.info() != Eigen::Success || !x.allFinite()) throw SingularSystemError("normal-equation solve failed");
  return x;
}

GramAccumulator::GramAccumulator(int dim) : dim_(dim) {
  if (dim_ <= kDenseLimit) dense_ = Eigen::MatrixXd::Zero(dim_, dim_);
}

void GramAccumulator::add_outer(const SparseVector& u, const SparseVector& v, double w) {
  if (w == 0.0) return;
  for (const auto& ei : u) {
    const double wi = w * ei.value;
    for (const auto& ej : v) {
      if (dim_ <= kDenseLimit) {
        dense_(ei.index, ej.index) += wi * ej.value;
      } else {
        triplets_.emplace_back(ei.index, ej.index, wi * ej.value);
      }
    }
  }
}

void GramAccumulator::add_diagonal(double value) {
  for (int i = 0; i < dim_; ++i) {
    if (dim_ <= kDenseLimit) {
      dense_(i, i) += value;
    } else {
      triplets_.emplace_back(i, i, value);
    }
  }
}

Eigen::SparseMatrix<double> GramAccumulator::matrix() const {
  if (dim_ <= kDenseLimit) return dense_.sparseView(0.0, 0.0);
  Eigen::SparseMatrix<double> m(dim_, dim_);
  m.setFromTriplets(triplets_.begin(), triplets_.end());
  return m;
}

Eigen::VectorXd wls_solve(const WlsProblem& problem) {
  if (problem.ridge < 0.0) throw InvalidInput("ridge must be non-negative");
  const int k = problem.dim;
  bool any_positive = false;
  GramAccumulator gram(k);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  for (const auto& row : problem.rows) {
    if (row.weight <= 0.0) continue;
    any_positive = true;
    gram.add_outer(row.phi, row.phi, row.weight);
    for (const auto& e : row.phi) rhs[e.index] += row.weight * e.value * row.target;
  }
  if (!any_positive) throw DegenerateWeightsError("WLS problem has no row with positive weight");
  if (problem.ridge > 0.0) gram.add_diagonal(problem.ridge);
  return solve_spd(gram.matrix(), rhs, problem.ridge == 0.0);
}

Eigen::VectorXd wls_solve_or_ridge(const WlsProblem& problem) {
  try {
    return wls_solve(problem);
  } catch (const SingularSystemError&) {
    if (problem.ridge > 0.0) throw;
    WlsProblem ridged = problem;
    ridged.ridge = kDefaultRidge;
    return wls_solve(ridged);
  }
}

double QuadraticObjective::value(const Eigen::VectorXd& beta, Eigen::VectorXd* grad) const {
  const Eigen::VectorXd Ab = A * beta;
  if (grad) *grad = 2.0 * (Ab - b);
  return beta.dot(Ab) - 2.0 * b.dot(beta) + c;
}

Eigen::VectorXd QuadraticObjective::minimizer(double ridge) const {
  if (ridge == 0.0) return solve_spd(A, b);
  Eigen::SparseMatrix<double> I(A.rows(), A.cols());
  I.setIdentity();
  return solve_spd(A + ridge * I, b, false);
}

GdResult gd_minimize(const Objective& objective, Eigen::VectorXd beta0, const GdConfig& config) {
  constexpr double kBlowup = 1e12;
  constexpr std::size_t kMemory = 10;  // non-monotone window for the Armijo reference value
  GdResult res;
  Eigen::VectorXd beta = std::move(beta0);
  Eigen::VectorXd g;
  double f = objective(beta, &g);
  if (!std::isfinite(f) || f > kBlowup) throw DivergenceError("objective is not finite or exceeds 1e12 at the start");
  double step = config.initial_step;
  res.beta = beta;
  res.value = f;
  res.grad_norm = g.lpNorm<Eigen::Infinity>();
  std::vector<double> recent{f};
  Eigen::VectorXd trial, g_trial;
  for (int it = 0;; ++it) {
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    if (gnorm <= config.grad_tol) {
      res.beta = beta;
      res.value = f;
      res.grad_norm = gnorm;
      res.iterations = it;
      res.converged = true;
      break;
    }
    res.iterations = it;
    if (it >= config.max_iters) break;
    const double gg = g.squaredNorm();
    const double f_ref = *std::max_element(recent.begin(), recent.end());
    double s = step;
    bool accepted = false;
    double f_trial = 0.0;
    for (int k = 0; k <= config.max_backtracks; ++k, s *= config.shrink) {
      trial = beta - s * g;
      f_trial = objective(trial, &g_trial);
      if (std::isfinite(f_trial) && f_trial <= f_ref - config.armijo * s * gg) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // no descent possible at machine precision
    if (f_trial > kBlowup) throw DivergenceError("objective exceeded 1e12");
    const Eigen::VectorXd sk = trial - beta;
    const Eigen::VectorXd yk = g_trial - g;
    const double sy = sk.dot(yk);
    step = sy > 0.0 ? sk.squaredNorm() / sy : 2.0 * s;
    beta.swap(trial);
    g.swap(g_trial);
    f = f_trial;
    recent.push_back(f);
    if (recent.size() > kMemory) recent.erase(recent.begin());
    if (f <= res.value) {
      res.beta = beta;
      res.value = f;
      res.grad_norm = g.lpNorm<Eigen::Infinity>();
    }
  }
  return res;
}

Eigen::VectorXd finite_difference_gradient(const Objective& objective, const Eigen::VectorXd& beta, double h) {
  Eigen::VectorXd g(beta.size());
  Eigen::VectorXd b = beta;
  for (int i = 0; i < beta.size(); ++i) {
    b[i] = beta[i] + h;
    const double fp = objective(b, nullptr);
    b[i] = beta[i] - h;
    const double fm = objective(b, nullptr);
    b[i] = beta[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double gradient_relative_error(const Objective& objective, const Eigen::VectorXd& beta, double h) {
  Eigen::VectorXd g;
  objective(beta, &g);
  const Eigen::VectorXd fd = finite_difference_gradient(objective, beta, h);
  const double scale = std::max({g.lpNorm<Eigen::Infinity>(), fd.lpNorm<Eigen::Infinity>(),
                                 std::numeric_limits<double>::min()});
  return (g - fd).lpNorm<Eigen::Infinity>() / scale;
}

}  // namespace ope
