#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <numbers>
#include <sstream>

#include "helpers.hpp"
#include "ope/bandit.hpp"
#include "ope/envs.hpp"
#include "ope/tabular.hpp"
#include "ope/trajectory_io.hpp"
#include "ope/training.hpp"

using namespace ope;
using namespace testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double frequency_of_base(const Policy& pi, const DeterministicPolicy& base, const State& x, int draws, Rng& rng) {
  int hits = 0;
  for (int i = 0; i < draws; ++i) hits += pi.sample(x, rng) == base.choose(x);
  return static_cast<double>(hits) / draws;
}

}  // namespace

TEST_CASE("softening examples") {
  const auto base = std::make_shared<TableDeterministicPolicy>(std::vector<Action>{3}, 10, "base");
  const State x = State::discrete(0);

  const auto neutral4 = soften(std::make_shared<TableDeterministicPolicy>(std::vector<Action>{1}, 4, "b"),
                               parse_softening("neutral"));
  for (int a = 0; a < 4; ++a) CHECK(neutral4->prob(x, a) == 0.25);

  const auto friendly = soften(base, parse_softening("friendly:0.9:0"));
  CHECK(friendly->prob(x, 3) == doctest::Approx(0.9).epsilon(1e-15));
  for (int a = 0; a < 10; ++a)
    if (a != 3) CHECK(friendly->prob(x, a) == doctest::Approx(0.1 / 9).epsilon(1e-14));
  CHECK(friendly->describe() == "friendly:0.9:0");

  Rng rng(51);
  const auto f2 = soften(base, parse_softening("friendly:0.7:0.2"));
  const double p = f2->prob(x, 3);
  CHECK(p >= 0.6);
  CHECK(p <= 0.8);
  const double freq = frequency_of_base(*f2, *base, x, 200000, rng);
  CHECK(freq >= 0.6);
  CHECK(freq <= 0.8);
  CHECK(std::abs(freq - 0.7) < 5.0 * std::sqrt(0.21 / 200000));

  for (const char* spec : {"adversarial:0.7:0.2", "adversarial:0.5:1", "friendly:0.5:1", "neutral"}) {
    const auto pi = soften(base, parse_softening(spec));
    double s = 0.0;
    for (int a = 0; a < 10; ++a) s += pi->prob(x, a);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(parse_softening("friendly:0.9:0.4"), InvalidInput);
  CHECK_THROWS_AS(parse_softening("friendly:0.9"), InvalidInput);
  CHECK_THROWS_AS(parse_softening("hostile:0.5:0"), InvalidInput);
}

TEST_CASE("ModelFail") {
  const auto env = model_fail();
  CHECK(true_value(*env, *env->evaluation_policy(), 1.0, TruthMethod::ExactDP).value ==
        doctest::Approx(0.76).epsilon(1e-14));
  CHECK(true_value(*env, *env->evaluation_policy(), 1.0, TruthMethod::Enumerate).value ==
        doctest::Approx(0.76).epsilon(1e-14));
  CHECK(true_value(*env, *env->behavior_policy(), 1.0, TruthMethod::ExactDP).value ==
        doctest::Approx(-0.76).epsilon(1e-14));
  const Dataset d = generate_trajectories(*env, *env->behavior_policy(), 200, 52);
  for (const auto& t : d.trajectories) CHECK(t.horizon() == 2);
  CHECK(env->horizon() == 2);
}

TEST_CASE("ModelWin") {
  const auto env = model_win();
  const auto& mdp = *env->tabular();
  const double dp = true_value(*env, *env->evaluation_policy(), 1.0, TruthMethod::ExactDP).value;
  // Independent forward recursion over the three latent states.
  std::vector<double> dist{1.0, 0.0, 0.0};
  double value = 0.0;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> next(3, 0.0);
    for (int x = 0; x < 3; ++x)
      for (int a = 0; a < 2; ++a) {
        const double pa = env->evaluation_policy()->prob(mdp.observe(x), a);
        for (const auto& o : mdp.outcomes[x][a]) {
          next[o.next] += dist[x] * pa * o.prob;
          value += dist[x] * pa * o.prob * o.reward;
        }
      }
    dist = next;
  }
  CHECK(dp == doctest::Approx(value).epsilon(1e-12));
  const auto uniform = table_policy({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
  CHECK(true_value(*env, *uniform, 1.0, TruthMethod::ExactDP).value == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  const Dataset d = generate_trajectories(*env, *env->behavior_policy(), 100, 53);
  for (const auto& t : d.trajectories) CHECK(t.horizon() == 20);
}

TEST_CASE("Maze") {
  const auto env = maze_4x4();
  const auto& mdp = *env->tabular();
  int rewarding = 0;
  for (int x = 0; x < mdp.num_states; ++x)
    for (int a = 0; a < mdp.num_actions; ++a) {
      REQUIRE(mdp.outcomes[x][a].size() == 1);  // deterministic transitions
      const Outcome& o = mdp.outcomes[x][a][0];
      const bool special = o.next == 15 || o.next == 6 || o.next == 9;
      if (!special) CHECK(o.reward == 0.0);
      rewarding += o.reward != 0.0;
    }
  CHECK(rewarding > 0);
  Rng r1(54), r2(55);
  for (int x = 0; x < 15; ++x)
    for (int a = 0; a < 4; ++a)
      CHECK(env->step(State::discrete(x), a, r1).next == env->step(State::discrete(x), a, r2).next);
  CHECK(env->horizon() == 100);
  CHECK(env->action_count() == 4);
}

TEST_CASE("tabular transition rows sum to 1") {
  for (const auto& env : {model_fail(), model_win(), maze_4x4()}) {
    const auto& mdp = *env->tabular();
    for (int x = 0; x < mdp.num_states; ++x)
      for (int a = 0; a < mdp.num_actions; ++a) {
        double s = 0.0;
        for (const auto& o : mdp.outcomes[x][a]) s += o.prob;
        if (!mdp.terminal[x]) CHECK(std::abs(s - 1.0) <= 1e-12);
      }
  }
}

TEST_CASE("Mountain Car") {
  const auto env = mountain_car();
  Rng rng(56);
  // Standing still at the valley bottom never reaches the goal.
  State s = State::continuous({-std::numbers::pi / 6.0, 0.0, 0.0});
  double ret = 0.0;
  bool done = false;
  for (int t = 0; t < env->horizon() && !done; ++t) {
    const Transition tr = env->step(s, 1, rng);
    ret += tr.reward;
    done = tr.done;
    s = tr.next;
  }
  CHECK(!done);
  CHECK(ret == -250.0);

  for (int k = 0; k < 200; ++k) {
    const State s0 = env->reset(rng);
    CHECK(s0.features()[0] >= -0.6);
    CHECK(s0.features()[0] <= -0.4);
    CHECK(s0.features()[1] == 0.0);
  }
  const auto uniform = resolve_policy(*env, "neutral");
  const Dataset d = generate_trajectories(*env, *uniform, 20, 57);
  for (const auto& t : d.trajectories)
    for (const auto& st : t.steps)
      if (st.state.is_continuous()) CHECK(std::abs(st.state.features()[1]) <= 0.07);
}

TEST_CASE("Cart Pole") {
  const auto env = cart_pole();
  Rng rng(58);
  State s = State::continuous({0.0, 0.0, 0.0, 0.0, 0.0});
  int survived = 0;
  for (int t = 0; t < env->horizon(); ++t) {
    const Transition tr = env->step(s, t % 2, rng);
    if (tr.done) break;
    ++survived;
    s = tr.next;
  }
  CHECK(survived > 50);
  for (int k = 0; k < 200; ++k) {
    const State s0 = env->reset(rng);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(s0.features()[j]) <= 0.05);
  }
  const Dataset d = generate_trajectories(*env, *resolve_policy(*env, "neutral"), 50, 59);
  for (const auto& t : d.trajectories) CHECK(discounted_return(t, 1.0) <= 250.0);
}

TEST_CASE("generation is reproducible and logs exact behavior probabilities") {
  const auto dir = temp_dir("envs_gen");
  for (const auto& id : {"model-fail", "model-win", "maze", "cart-pole"}) {
    const auto env = make_environment(id);
    const auto pb = env->behavior_policy();
    const Dataset a = generate_trajectories(*env, *pb, 30, 60);
    const Dataset b = generate_trajectories(*env, *pb, 30, 60);
    save_dataset(dir / "a.jsonl", a);
    save_dataset(dir / "b.jsonl", b);
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
    for (const auto& t : a.trajectories)
      for (const auto& s : t.steps) CHECK(std::abs(s.behavior_prob - pb->prob(s.state, s.action)) <= 1e-12);
  }
  CHECK_THROWS_AS(make_environment("no-such-env"), InvalidInput);
  CHECK_THROWS_AS(true_value(*mountain_car(), *resolve_policy(*mountain_car(), "neutral"), 1.0, TruthMethod::ExactDP),
                  InvalidInput);
}

TEST_CASE("exact and Monte Carlo truths agree (10^6 episodes)") {
  for (const auto& env : {model_fail(), model_win()}) {
    const auto pe = env->evaluation_policy();
    const double dp = true_value(*env, *pe, 1.0, TruthMethod::ExactDP).value;
    const TruthResult mc = true_value(*env, *pe, 1.0, TruthMethod::MonteCarlo, 1000000);
    INFO(env->id() << " dp " << dp << " mc " << mc.value << " se " << mc.standard_error);
    CHECK(std::abs(dp - mc.value) <= 4.0 * mc.standard_error);
    if (env->id() == "model-fail") CHECK(std::abs(mc.value - 0.76) <= 3.0 * mc.standard_error);
  }
}

TEST_CASE("classification to bandit") {
  const ClassificationData data = make_blobs(4, 3, 400, 0.5, 61);
  Rng rng(62);
  std::vector<Action> labels;
  for (const auto& e : data.examples) labels.push_back(e.label);
  // An oracle that always answers correctly: a table over example indices.
  std::vector<LabeledExample> indexed;
  for (std::size_t i = 0; i < data.examples.size(); ++i) indexed.push_back({{static_cast<double>(i)}, labels[i]});
  class Oracle final : public DeterministicPolicy {
   public:
    explicit Oracle(std::vector<Action> l) : DeterministicPolicy(4), l_(std::move(l)) {}
    std::string describe() const override { return "oracle"; }

   protected:
    Action choose_at(const State& x) const override { return l_[static_cast<int>(x.features()[0])]; }

   private:
    std::vector<Action> l_;
  };
  const Oracle oracle(labels);
  for (const auto& s : classification_to_bandit(indexed, oracle, rng)) CHECK(s.reward == 1.0);

  const auto neutral = soften(std::make_shared<Oracle>(labels), parse_softening("neutral"));
  double mean = 0.0;
  const int reps = 50;
  for (int r = 0; r < reps; ++r)
    for (const auto& s : classification_to_bandit(indexed, *neutral, rng)) mean += s.reward;
  mean /= reps * indexed.size();
  CHECK(std::abs(mean - 0.25) < 5.0 * std::sqrt(0.25 * 0.75 / (reps * indexed.size())));

  const auto soft = soften(std::make_shared<Oracle>(labels), parse_softening("friendly:0.6:0.2"));
  double expected = 0.0;
  for (const auto& e : indexed) expected += soft->prob(State::continuous(e.features), e.label);
  CHECK(classification_value(indexed, *soft) == doctest::Approx(expected / indexed.size()).epsilon(1e-14));
  for (const auto& s : classification_to_bandit(indexed, *soft, rng))
    CHECK(s.behavior_prob == soft->prob(s.state, s.action));
}

TEST_CASE("logistic base classifier") {
  std::vector<LabeledExample> sep;
  Rng rng(63);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.normal(), y = rng.normal();
    sep.push_back({{x, y}, x + 0.5 * y > 0.3 ? 1 : 0});
  }
  const auto clf = train_logistic(sep, 2);
  int correct = 0;
  for (const auto& e : sep) correct += clf->choose(State::continuous(e.features)) == e.label;
  CHECK(correct == 200);

  std::vector<LabeledExample> single;
  for (int i = 0; i < 30; ++i) single.push_back({{rng.normal(), rng.normal()}, 2});
  const auto one = train_logistic(single, 3);
  for (int i = 0; i < 30; ++i) CHECK(one->choose(State::continuous({rng.normal() * 5, rng.normal() * 5})) == 2);

  const ClassificationData blobs = make_blobs(5, 4, 1000, 1.0, 64);
  const auto [train, test] = split_classification(blobs, 0.5, 65);
  const auto model = train_logistic(train.examples, 5);
  int hits = 0;
  for (const auto& e : test.examples) hits += model->choose(State::continuous(e.features)) == e.label;
  CHECK(static_cast<double>(hits) / test.examples.size() > 0.2);
}

TEST_CASE("classification CSV loader") {
  const auto dir = temp_dir("envs_csv");
  {
    std::ofstream out(dir / "d.csv");
    out << "f1,f2,label\n0.5,1.5,0\n-1,2,2\n3,0.25,1\n";
  }
  const ClassificationData d = load_classification_csv(dir / "d.csv");
  CHECK(d.examples.size() == 3);
  CHECK(d.num_classes == 3);
  CHECK(d.dim == 2);
  CHECK(d.examples[1].features == std::vector<double>{-1.0, 2.0});
  CHECK(d.examples[1].label == 2);
  {
    std::ofstream out(dir / "bad.csv");
    out << "1,2,0\n1,x,1\n";
  }
  CHECK_THROWS_AS(load_classification_csv(dir / "bad.csv"), InvalidInput);
}

TEST_CASE("control training") {
  // Q-learning on ModelWin picks the s1 action the DP oracle rates higher.
  const auto env = model_win();
  const auto& mdp = *env->tabular();
  const auto pe = env->evaluation_policy();
  const TabularEvaluation ev = evaluate_tabular(mdp, *pe, 1.0, env->horizon());
  ControlConfig cfg;
  cfg.algorithm = ControlAlgorithm::QLearning;
  cfg.episodes = 500;
  cfg.gamma = 1.0;
  cfg.seed = 66;
  const auto greedy = train_control_policy(*env, env->default_features(), cfg);
  const Action best = ev.q[0][0][0] > ev.q[0][0][1] ? 0 : 1;
  CHECK(greedy->choose(State::discrete(0)) == best);

  const auto mc = mountain_car();
  const auto base = mc->base_policy();
  Rng rng(67);
  for (int k = 0; k < 50; ++k) {
    const State s = mc->reset(rng);
    for (int a = 0; a < 3; ++a) {
      const double p = base->prob(s, a);
      CHECK((p == 0.0 || p == 1.0));
    }
  }
  const double trained = true_value(*mc, *base, 1.0, TruthMethod::MonteCarlo, 300).value;
  const double uniform = true_value(*mc, *resolve_policy(*mc, "neutral"), 1.0, TruthMethod::MonteCarlo, 300).value;
  CHECK(trained > uniform);
}
