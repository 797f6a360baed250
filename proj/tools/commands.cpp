#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>

#include "CLI11.hpp"
#include "ope/envs.hpp"
#include "ope/estimators.hpp"
#include "ope/harness.hpp"
#include "ope/linmodel.hpp"
#include "ope/numeric.hpp"
#include "ope/trajectory_io.hpp"

namespace ope::cli {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
}

struct GenerateArgs {
  std::string env;
  std::string policy = "behavior";
  int n = 100;
  std::uint64_t seed = 1;
  double gamma = 1.0;
  std::string out;
};

struct FitArgs {
  std::string data;
  std::string objective = "mrdr";
  std::string features = "default";
  std::string eval_policy = "evaluation";
  std::string out;
};

struct EstimateArgs {
  std::string data;
  std::string estimator;
  std::string model;
  std::string eval_policy = "evaluation";
  std::string out;
};

struct BenchmarkArgs {
  std::string config;
  std::string out = "results";
  int threads = -1;
};

struct TruthArgs {
  std::string env;
  std::string policy = "evaluation";
  std::string method = "auto";
  long m = 1000000;
  double gamma = 1.0;
  std::uint64_t seed = kOracleSeed;
  std::string out;
};

// The environment and behavior policy a dataset was generated with.
struct DatasetContext {
  Dataset data;
  EnvironmentPtr env;
  PolicyPtr pi_b;
  PolicyPtr pi_e;
};

DatasetContext open_dataset(const std::string& path, const std::string& eval_policy) {
  DatasetContext ctx;
  ctx.data = load_dataset(path);
  if (ctx.data.meta.env.empty() || ctx.data.meta.behavior.empty())
    throw InvalidInput(path + ": header lacks the env and policy needed to rebuild the policies");
  ctx.env = make_environment(ctx.data.meta.env);
  ctx.pi_b = resolve_policy(*ctx.env, ctx.data.meta.behavior);
  ctx.pi_e = resolve_policy(*ctx.env, eval_policy);
  return ctx;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const EnvironmentPtr env = make_environment(a.env);
  const PolicyPtr policy = resolve_policy(*env, a.policy);
  const Dataset data = generate_trajectories(*env, *policy, a.n, a.seed, a.gamma);
  save_dataset(a.out, data);
  Accumulator ret;
  for (const auto& t : data.trajectories) ret.add(discounted_return(t, data.gamma));
  out << "n=" << data.size() << " T=" << data.horizon() << " mean_return=" << fmt(ret.value() / data.size())
      << '\n';
  return 0;
}

int cmd_fit(const FitArgs& a, std::ostream& out) {
  const DatasetContext ctx = open_dataset(a.data, a.eval_policy);
  const ModelKind kind = parse_model_kind(a.objective);
  const FeatureMapPtr features = make_features(a.features, *ctx.env);
  const LinearQModel model = fit_model(kind, ctx.data, *ctx.pi_e, *ctx.pi_b, features);
  save_model(a.out, model);
  out << "objective=" << to_string(kind) << " kappa=" << features->dim() << " out=" << a.out << '\n';
  return 0;
}

int cmd_estimate(const EstimateArgs& a, std::ostream& out) {
  const DatasetContext ctx = open_dataset(a.data, a.eval_policy);
  const EstimatorId id = parse_estimator(a.estimator);
  std::optional<LinearQModel> model;
  if (const auto kind = model_for(id)) {
    if (!a.model.empty()) {
      model = load_model(a.model);
    } else {
      // Without a model file, fit on the same data.
      model = fit_model(*kind, ctx.data, *ctx.pi_e, *ctx.pi_b, ctx.env->default_features());
    }
  } else if (!a.model.empty()) {
    throw InvalidInput(to_string(id) + " does not use a model");
  }
  const double value = estimate(id, ctx.data, *ctx.pi_e, *ctx.pi_b, model ? &*model : nullptr);
  const EstimatorReport report{id, value, ctx.data.size(), ctx.data.meta.seed};
  if (!a.out.empty()) write_json(a.out, report.to_json());
  out << to_string(id) << ' ' << fmt(value) << '\n';
  return 0;
}

int cmd_benchmark(const BenchmarkArgs& a, std::ostream& out) {
  ExperimentConfig cfg = load_config(a.config);
  if (a.threads >= 0) cfg.threads = a.threads;
  const ExperimentResult res = run_experiment(cfg);
  write_result(res, a.out);
  out << render_markdown(res);
  return 0;
}

int cmd_truth(const TruthArgs& a, std::ostream& out) {
  const EnvironmentPtr env = make_environment(a.env);
  const PolicyPtr policy = resolve_policy(*env, a.policy);
  const TruthMethod method = a.method == "auto"
                                 ? (env->is_tabular() ? TruthMethod::ExactDP : TruthMethod::MonteCarlo)
                                 : parse_truth_method(a.method);
  const TruthResult r = true_value(*env, *policy, a.gamma, method, a.m, a.seed);
  Json j = {{"env", env->id()},
            {"policy", policy->describe()},
            {"method", to_string(r.method)},
            {"value", r.value},
            {"standard_error", r.standard_error},
            {"episodes", r.episodes}};
  if (!a.out.empty()) write_json(a.out, j);
  out << fmt(r.value);
  if (r.method == TruthMethod::MonteCarlo) out << " se=" << fmt(r.standard_error);
  out << '\n';
  return 0;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Off-policy evaluation toolkit: DM, IS, WIS, DR and MRDR estimators with benchmark environments."};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Roll out a policy and write trajectories as JSONL");
  g->add_option("--env", gen.env, "Environment id")->required();
  g->add_option("--policy-spec", gen.policy, "behavior, evaluation, neutral, friendly:A:B or adversarial:A:B");
  g->add_option("--n", gen.n, "Number of trajectories")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Master seed");
  g->add_option("--gamma", gen.gamma, "Discount factor")->check(CLI::Range(0.0, 1.0));
  g->add_option("--out", gen.out, "Output JSONL path")->required();

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit a linear Q model and write it as JSON");
  f->add_option("--data", fit.data, "Trajectory JSONL file")->required()->check(CLI::ExistingFile);
  f->add_option("--objective", fit.objective, "dm0, dm, mrdr0 or mrdr")
      ->check(CLI::IsMember({"dm0", "dm", "mrdr0", "mrdr"}));
  f->add_option("--features", fit.features, "default, tabular, mountaincar:PB:VB:HB or cartpole:B:HB");
  f->add_option("--eval-policy", fit.eval_policy, "Evaluation policy spec");
  f->add_option("--out", fit.out, "Output model path")->required();

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Estimate the value of the evaluation policy");
  e->add_option("--data", est.data, "Trajectory JSONL file")->required()->check(CLI::ExistingFile);
  e->add_option("--estimator", est.estimator, "DM0, DM, IS, StepIS, WIS, StepWIS, DR0, DR, MRDR0 or MRDR")
      ->required();
  e->add_option("--model", est.model, "Model file (fitted on the data itself when omitted)")
      ->check(CLI::ExistingFile);
  e->add_option("--eval-policy", est.eval_policy, "Evaluation policy spec");
  e->add_option("--out", est.out, "Write the report as JSON here");

  BenchmarkArgs bench;
  auto* b = app.add_subcommand("benchmark", "Run a replicated experiment and write RMSE tables");
  b->add_option("--config", bench.config, "Experiment config file")->required()->check(CLI::ExistingFile);
  b->add_option("--out", bench.out, "Output directory");
  b->add_option("--threads", bench.threads, "Worker threads; -1 keeps the config value");

  TruthArgs truth;
  auto* t = app.add_subcommand("truth", "Compute the true value of a policy");
  t->add_option("--env", truth.env, "Environment id")->required();
  t->add_option("--policy-spec", truth.policy, "Policy spec");
  t->add_option("--method", truth.method, "auto, exact-dp, enumerate or monte-carlo")
      ->check(CLI::IsMember({"auto", "exact-dp", "dp", "enumerate", "monte-carlo", "mc"}));
  t->add_option("--m", truth.m, "Monte Carlo episodes")->check(CLI::Range(2L, 1000000000L));
  t->add_option("--gamma", truth.gamma, "Discount factor")->check(CLI::Range(0.0, 1.0));
  t->add_option("--seed", truth.seed, "Monte Carlo seed");
  t->add_option("--out", truth.out, "Write the result as JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err) == 0 ? 0 : 2;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (f->parsed()) return cmd_fit(fit, out);
    if (e->parsed()) return cmd_estimate(est, out);
    if (b->parsed()) return cmd_benchmark(bench, out);
    if (t->parsed()) return cmd_truth(truth, out);
  } catch (const InvalidInput& ex) {
    err << "error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace ope::cli
