#include "ope/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "ope/bandit.hpp"
#include "ope/fit_dm.hpp"
#include "ope/mrdr.hpp"
#include "ope/numeric.hpp"

namespace ope {

namespace {

std::vector<int> parse_ints(std::string_view spec, std::size_t from) {
  std::vector<int> out;
  std::string rest(spec.substr(from));
  std::stringstream ss(rest);
  std::string item;
  while (std::getline(ss, item, ':')) {
    char* end = nullptr;
    const long v = std::strtol(item.c_str(), &end, 10);
    if (item.empty() || *end != '\0' || v < 1 || v > 1000000)
      throw InvalidInput("bad feature spec '" + std::string(spec) + "'");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5f", v);
  return buf;
}

}  // namespace

FeatureMapPtr make_features(std::string_view spec, const Environment& env) {
  if (spec == "default") return env.default_features();
  if (spec == "tabular") {
    const TabularModel* mdp = env.tabular();
    if (!mdp) throw InvalidInput("tabular features need a tabular environment");
    return tabular_features(mdp->num_observations, mdp->num_actions);
  }
  if (spec.rfind("mountaincar:", 0) == 0) {
    const auto v = parse_ints(spec, 12);
    if (v.size() != 3) throw InvalidInput("expected mountaincar:PB:VB:HB");
    return mountaincar_features(v[0], v[1], v[2], env.action_count());
  }
  if (spec.rfind("cartpole:", 0) == 0) {
    const auto v = parse_ints(spec, 9);
    if (v.size() != 2) throw InvalidInput("expected cartpole:B:HB");
    return cartpole_features(v[0], v[1]);
  }
  throw InvalidInput("unknown feature spec '" + std::string(spec) +
                     "' (expected default, tabular, mountaincar:PB:VB:HB, cartpole:B:HB)");
}

namespace {

DmFitConfig dm_config(DmMode mode) {
  DmFitConfig c;
  c.mode = mode;
  return c;
}

}  // namespace

LinearQModel fit_model(ModelKind kind, const Dataset& data, const Policy& pi_e, const Policy& pi_b,
                       FeatureMapPtr features, const LinearQModel* dm) {
  switch (kind) {
    case ModelKind::DM0: return dm_fit_rl(data, pi_e, pi_b, std::move(features), dm_config(DmMode::DM0));
    case ModelKind::DM: return dm_fit_rl(data, pi_e, pi_b, std::move(features), dm_config(DmMode::DM));
    case ModelKind::MRDR0:
    case ModelKind::MRDR: {
      std::optional<LinearQModel> own;
      if (!dm) dm = &own.emplace(dm_fit_rl(data, pi_e, pi_b, features, dm_config(DmMode::DM)));
      MrdrFitConfig cfg;
      cfg.mode = kind == ModelKind::MRDR ? MrdrMode::MRDR : MrdrMode::MRDR0;
      return mrdr_fit(data, pi_e, pi_b, std::move(features), cfg, dm);
    }
  }
  throw InvalidInput("unknown model kind");
}

double rmse(std::span<const double> estimates, double truth) {
  if (estimates.empty()) throw InvalidInput("rmse needs at least one estimate");
  Accumulator acc;
  for (double e : estimates) acc.add((e - truth) * (e - truth));
  return std::sqrt(acc.value() / static_cast<double>(estimates.size()));
}

bool significance_test(std::span<const double> errors_a, std::span<const double> errors_b, double level) {
  if (errors_a.size() != errors_b.size()) throw InvalidInput("significance test needs paired sequences");
  const std::size_t n = errors_a.size();
  if (n < 2) throw InvalidInput("significance test needs at least two pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = errors_a[i] * errors_a[i] - errors_b[i] * errors_b[i];
  const double mean = compensated_mean(d);
  Accumulator ss;
  for (double x : d) ss.add((x - mean) * (x - mean));
  const double var = ss.value() / static_cast<double>(n - 1);
  if (!(var > 0.0)) return mean < 0.0;
  const double t = mean / std::sqrt(var / static_cast<double>(n));
  boost::math::students_t dist(static_cast<double>(n - 1));
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return mean < 0.0 && p < 1.0 - level;
}

namespace {

// Runs f(0..n-1) on a fixed pool; f must not throw.
template <class F>
void parallel_for(int n, int threads, F&& f) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int k = 0; k < threads; ++k) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

Dataset prefix(const Dataset& data, int n) {
  Dataset out;
  out.gamma = data.gamma;
  out.meta = data.meta;
  out.trajectories.assign(data.trajectories.begin(), data.trajectories.begin() + n);
  return out;
}

std::set<ModelKind> needed_models(const std::vector<EstimatorId>& ids) {
  std::set<ModelKind> kinds;
  for (auto id : ids)
    if (auto k = model_for(id)) kinds.insert(*k);
  return kinds;
}

std::map<ModelKind, LinearQModel> fit_models(const std::set<ModelKind>& kinds, const Dataset& train,
                                             const Policy& pi_e, const Policy& pi_b, const FeatureMapPtr& features) {
  std::map<ModelKind, LinearQModel> models;
  std::optional<LinearQModel> dm;
  if (kinds.count(ModelKind::DM) || kinds.count(ModelKind::MRDR) || kinds.count(ModelKind::MRDR0))
    dm = fit_model(ModelKind::DM, train, pi_e, pi_b, features);
  for (auto k : kinds) {
    if (k == ModelKind::DM) models.emplace(k, *dm);
    else models.emplace(k, fit_model(k, train, pi_e, pi_b, features, dm ? &*dm : nullptr));
  }
  return models;
}

// [estimator][row] for one replicate.
using ReplicateTable = std::vector<std::vector<double>>;

struct ReplicateOutcome {
  ReplicateTable table;
  std::string error;
};

TruthResult cached_truth(const ExperimentConfig& cfg, const Environment& env, const Policy& pi_e,
                         TruthMethod method) {
  if (method != TruthMethod::MonteCarlo || cfg.truth_cache.empty())
    return true_value(env, pi_e, cfg.gamma, method, cfg.truth_episodes);
  std::ostringstream key;
  key << env.id() << '|' << pi_e.describe() << '|' << std::hexfloat << cfg.gamma << std::defaultfloat << '|' << cfg.truth_episodes << '|'
      << kOracleSeed;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : key.str()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char name[40];
  std::snprintf(name, sizeof name, "truth-%016llx.json", static_cast<unsigned long long>(h));
  const auto path = std::filesystem::path(cfg.truth_cache) / name;
  if (std::ifstream in(path); in) {
    Json j = Json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.value("key", "") == key.str()) {
      TruthResult r;
      r.method = TruthMethod::MonteCarlo;
      r.value = j.at("value").get<double>();
      r.standard_error = j.at("standard_error").get<double>();
      r.episodes = j.at("episodes").get<long>();
      return r;
    }
  }
  TruthResult r = true_value(env, pi_e, cfg.gamma, method, cfg.truth_episodes);
  std::filesystem::create_directories(cfg.truth_cache);
  Json j;
  j["key"] = key.str();
  j["value"] = r.value;
  j["standard_error"] = r.standard_error;
  j["episodes"] = r.episodes;
  std::ofstream(path) << j.dump(2) << '\n';
  return r;
}

ExperimentResult assemble(const ExperimentConfig& cfg, std::vector<ReplicateOutcome>& outcomes,
                          std::vector<std::string> rows, std::string row_kind, const TruthResult& truth,
                          std::vector<std::uint64_t> seeds) {
  ExperimentResult res;
  res.config_hash = config_hash(cfg);
  res.config = config_to_json(cfg);
  res.truth = truth.value;
  res.truth_standard_error = truth.standard_error;
  res.truth_method = truth.method;
  res.rows = std::move(rows);
  res.row_kind = std::move(row_kind);
  res.estimators = cfg.estimators;
  res.replicate_seeds = std::move(seeds);

  int failed = 0;
  for (int j = 0; j < static_cast<int>(outcomes.size()); ++j) {
    if (outcomes[j].error.empty()) {
      res.used_replicates.push_back(j);
    } else {
      ++failed;
      res.warnings.push_back("replicate " + std::to_string(j) + " failed: " + outcomes[j].error);
    }
  }
  if (failed * 20 >= static_cast<int>(outcomes.size()))
    throw Error(std::to_string(failed) + " of " + std::to_string(outcomes.size()) +
                " replicates failed (5% or more); first: " + res.warnings.front());
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << " (excluded)\n";

  const std::size_t E = res.estimators.size(), R = res.rows.size();
  res.estimates.assign(E, std::vector<std::vector<double>>(R));
  res.rmse.assign(E, std::vector<double>(R, 0.0));
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t r = 0; r < R; ++r) {
      for (int j : res.used_replicates) res.estimates[e][r].push_back(outcomes[j].table[e][r]);
      res.rmse[e][r] = rmse(res.estimates[e][r], res.truth);
    }
  }
  auto index_of = [&](EstimatorId id) -> std::optional<std::size_t> {
    for (std::size_t e = 0; e < E; ++e)
      if (res.estimators[e] == id) return e;
    return std::nullopt;
  };
  const auto mrdr = index_of(EstimatorId::MRDR), dr = index_of(EstimatorId::DR);
  res.significance.assign(R, false);
  if (mrdr && dr) {
    res.significance_tested = true;
    for (std::size_t r = 0; r < R; ++r) {
      std::vector<double> a, b;
      for (double v : res.estimates[*mrdr][r]) a.push_back(v - res.truth);
      for (double v : res.estimates[*dr][r]) b.push_back(v - res.truth);
      res.significance[r] = significance_test(a, b, cfg.significance_level);
    }
  }
  return res;
}

ExperimentResult run_rl(const ExperimentConfig& cfg) {
  const EnvironmentPtr env = make_environment(cfg.env);
  const PolicyPtr pi_b = resolve_policy(*env, cfg.behavior);
  const PolicyPtr pi_e = resolve_policy(*env, cfg.evaluation);
  const FeatureMapPtr features = make_features(cfg.features, *env);
  const TruthMethod method = cfg.truth.value_or(env->is_tabular() ? TruthMethod::ExactDP : TruthMethod::MonteCarlo);
  const TruthResult truth = cached_truth(cfg, *env, *pi_e, method);
  const auto kinds = needed_models(cfg.estimators);
  const int max_n = *std::max_element(cfg.sizes.begin(), cfg.sizes.end());
  const int N = cfg.replicates;

  std::vector<std::uint64_t> seeds(N);
  for (int j = 0; j < N; ++j) seeds[j] = derive_seed(cfg.seed, static_cast<std::uint64_t>(j));
  std::vector<ReplicateOutcome> outcomes(N);
  parallel_for(N, cfg.threads, [&](int j) {
    try {
      const Dataset train = generate_trajectories(*env, *pi_b, cfg.train_size, derive_seed(seeds[j], 0), cfg.gamma);
      const auto models = fit_models(kinds, train, *pi_e, *pi_b, features);
      const Dataset eval_all = generate_trajectories(*env, *pi_b, max_n, derive_seed(seeds[j], 1), cfg.gamma);
      ReplicateTable table(cfg.estimators.size(), std::vector<double>(cfg.sizes.size()));
      for (std::size_t r = 0; r < cfg.sizes.size(); ++r) {
        const Dataset eval = prefix(eval_all, cfg.sizes[r]);
        for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
          const auto kind = model_for(cfg.estimators[e]);
          const LinearQModel* model = kind ? &models.at(*kind) : nullptr;
          table[e][r] = estimate(cfg.estimators[e], eval, *pi_e, *pi_b, model);
        }
      }
      outcomes[j].table = std::move(table);
    } catch (const std::exception& ex) {
      outcomes[j].error = ex.what();
    }
  });
  std::vector<std::string> rows;
  for (int s : cfg.sizes) rows.push_back(std::to_string(s));
  return assemble(cfg, outcomes, std::move(rows), "sample_size", truth, std::move(seeds));
}

ClassificationData load_bandit_data(const std::string& spec, std::uint64_t seed) {
  if (spec.rfind("blobs:", 0) != 0) return load_classification_csv(spec);
  std::vector<double> v;
  std::stringstream ss(spec.substr(6));
  std::string item;
  while (std::getline(ss, item, ':')) {
    char* end = nullptr;
    v.push_back(std::strtod(item.c_str(), &end));
    if (item.empty() || *end != '\0') throw InvalidInput("expected blobs:classes:dim:count:spread");
  }
  if (v.size() != 4) throw InvalidInput("expected blobs:classes:dim:count:spread");
  return make_blobs(static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]), v[3], seed);
}

ExperimentResult run_bandit(const ExperimentConfig& cfg) {
  const ClassificationData data = load_bandit_data(cfg.dataset, derive_seed(cfg.seed, 0xb10b5));
  const auto [train_cls, test] = split_classification(data, cfg.train_fraction, derive_seed(cfg.seed, 0x5b117));
  const auto base = train_logistic(train_cls.examples, data.num_classes);
  const SofteningSpec eval_spec =
      cfg.evaluation == "evaluation" ? SofteningSpec{SofteningKind::Friendly, 0.9, 0.0} : parse_softening(cfg.evaluation);
  const PolicyPtr pi_e = soften(base, eval_spec);
  std::vector<PolicyPtr> behaviors;
  for (const auto& b : cfg.behaviors) behaviors.push_back(soften(base, parse_softening(b)));
  if (cfg.features != "default") throw InvalidInput("bandit experiments use the default action-linear features");
  const FeatureMapPtr features = action_linear_features(data.dim, data.num_classes);
  TruthResult truth;
  truth.method = TruthMethod::Enumerate;
  truth.value = classification_value(test.examples, *pi_e);
  const auto kinds = needed_models(cfg.estimators);
  const int N = cfg.replicates;
  const std::size_t R = behaviors.size();

  std::vector<std::uint64_t> seeds(N);
  for (int j = 0; j < N; ++j) seeds[j] = derive_seed(cfg.seed, static_cast<std::uint64_t>(j));
  std::vector<ReplicateOutcome> outcomes(N);
  parallel_for(N, cfg.threads, [&](int j) {
    try {
      ReplicateTable table(cfg.estimators.size(), std::vector<double>(R));
      for (std::size_t r = 0; r < R; ++r) {
        const std::uint64_t row_seed = derive_seed(seeds[j], r);
        Rng train_rng(derive_seed(row_seed, 0)), eval_rng(derive_seed(row_seed, 1));
        const auto train = bandit_dataset(classification_to_bandit(test.examples, *behaviors[r], train_rng));
        const auto eval = bandit_dataset(classification_to_bandit(test.examples, *behaviors[r], eval_rng));
        const auto models = fit_models(kinds, train, *pi_e, *behaviors[r], features);
        for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
          const auto kind = model_for(cfg.estimators[e]);
          const LinearQModel* model = kind ? &models.at(*kind) : nullptr;
          table[e][r] = estimate(cfg.estimators[e], eval, *pi_e, *behaviors[r], model);
        }
      }
      outcomes[j].table = std::move(table);
    } catch (const std::exception& ex) {
      outcomes[j].error = ex.what();
    }
  });
  return assemble(cfg, outcomes, cfg.behaviors, "behavior", truth, std::move(seeds));
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  return config.is_bandit() ? run_bandit(config) : run_rl(config);
}

Json ExperimentResult::to_json() const {
  Json j;
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["truth"] = {{"value", truth}, {"standard_error", truth_standard_error}, {"method", to_string(truth_method)}};
  j["row_kind"] = row_kind;
  j["rows"] = rows;
  Json names = Json::array();
  for (auto e : estimators) names.push_back(to_string(e));
  j["estimators"] = names;
  Json table = Json::object();
  for (std::size_t e = 0; e < estimators.size(); ++e) table[to_string(estimators[e])] = rmse[e];
  j["rmse"] = table;
  j["significance"] = {{"tested", significance_tested},
                       {"comparison", "MRDR vs DR"},
                       {"level", config.value("significance_level", 0.95)},
                       {"flags", significance}};
  j["replicates"] = {{"requested", replicate_seeds.size()}, {"used", used_replicates}, {"seeds", replicate_seeds}};
  Json est = Json::object();
  for (std::size_t e = 0; e < estimators.size(); ++e) est[to_string(estimators[e])] = estimates[e];
  j["estimates"] = est;
  j["warnings"] = warnings;
  return j;
}

namespace {

bool marked(const ExperimentResult& res, std::size_t e, std::size_t r) {
  return res.significance_tested && res.estimators[e] == EstimatorId::MRDR && res.significance[r];
}

}  // namespace

std::string render_markdown(const ExperimentResult& res) {
  std::ostringstream out;
  out << "Truth " << format_number(res.truth) << " (" << to_string(res.truth_method);
  if (res.truth_standard_error > 0.0) out << ", SE " << format_number(res.truth_standard_error);
  out << "), RMSE over " << res.used_replicates.size() << " replicates\n\n";
  out << "| " << (res.row_kind == "behavior" ? "behavior" : "size");
  for (auto e : res.estimators) out << " | " << to_string(e);
  out << " |\n|---";
  for (std::size_t e = 0; e < res.estimators.size(); ++e) out << "|---";
  out << "|\n";
  for (std::size_t r = 0; r < res.rows.size(); ++r) {
    out << "| " << res.rows[r];
    for (std::size_t e = 0; e < res.estimators.size(); ++e) {
      const std::string v = format_number(res.rmse[e][r]);
      out << " | " << (marked(res, e, r) ? "**" + v + "**" : v);
    }
    out << " |\n";
  }
  if (res.significance_tested) out << "\nBold: MRDR beats DR at the configured significance level.\n";
  return out.str();
}

std::string render_csv(const ExperimentResult& res) {
  std::ostringstream out;
  out << (res.row_kind == "behavior" ? "behavior" : "size");
  for (auto e : res.estimators) out << ',' << to_string(e);
  out << '\n';
  for (std::size_t r = 0; r < res.rows.size(); ++r) {
    out << res.rows[r];
    for (std::size_t e = 0; e < res.estimators.size(); ++e)
      out << ',' << format_number(res.rmse[e][r]) << (marked(res, e, r) ? "*" : "");
    out << '\n';
  }
  return out.str();
}

void write_result(const ExperimentResult& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out << text;
  };
  write("result.json", res.to_json().dump(2) + "\n");
  write("result.csv", render_csv(res));
  write("result.md", render_markdown(res));
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  Json info = {{"timestamp", stamp}, {"config_hash", res.config_hash}};
  write("run_info.json", info.dump(2) + "\n");
}

}  // namespace ope
