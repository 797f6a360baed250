#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "helpers.hpp"
#include "ope/envs.hpp"
#include "ope/estimators.hpp"
#include "ope/mrdr.hpp"

using namespace ope;
using namespace testing;

namespace {

double min_eigenvalue(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().minCoeff();
}

Eigen::VectorXd random_beta(Rng& rng, int k) {
  Eigen::VectorXd b(k);
  for (int j = 0; j < k; ++j) b[j] = rng.normal();
  return b;
}

// Central finite differences of f at beta.
template <class F>
Eigen::VectorXd fd_gradient(F&& f, const Eigen::VectorXd& beta, double h = 1e-5) {
  Eigen::VectorXd g(beta.size());
  for (int j = 0; j < beta.size(); ++j) {
    Eigen::VectorXd p = beta, m = beta;
    p[j] += h;
    m[j] -= h;
    g[j] = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

std::vector<Step> bandit_samples(Rng& rng, int n, int S, const Policy& pi_b, double noise) {
  std::vector<Step> out;
  for (int i = 0; i < n; ++i) {
    const State x = State::discrete(rng.uniform_int(S));
    const Action a = pi_b.sample(x, rng);
    out.push_back({x, a, std::sin(1.0 + x.id() * 3 + a) + noise * rng.normal(), pi_b.prob(x, a)});
  }
  return out;
}

// The beta-dependent part of n * Var(DR) for one sample, from the variance formula:
// omega (E_pi_e[omega Q^2] - V^2 - 2 r (omega Q - V)).
double variance_beta_part(const Step& s, const LinearQModel& m, const Policy& pi_e, const Policy& pi_b) {
  const int A = pi_e.action_count();
  double eq2 = 0.0, v = 0.0;
  for (int a = 0; a < A; ++a) {
    const double pe = pi_e.prob(s.state, a), pb = pi_b.prob(s.state, a), q = m.q(s.state, a);
    eq2 += pe * (pe / pb) * q * q;
    v += pe * q;
  }
  const double w = pi_e.prob(s.state, s.action) / pi_b.prob(s.state, s.action);
  const double q = m.q(s.state, s.action);
  return w * (eq2 - v * v - 2.0 * s.reward * (w * q - v));
}

BanditSpec small_bandit(Rng& rng, int S, int A, bool deterministic_rewards) {
  BanditSpec spec;
  spec.p0.assign(S, 0.0);
  double tot = 0.0;
  for (auto& p : spec.p0) tot += (p = 0.2 + rng.uniform());
  for (auto& p : spec.p0) p /= tot;
  const auto pb = random_policy(S, A, rng, 0.2);
  const auto pe = random_policy(S, A, rng, 0.2);
  spec.pi_b.resize(S, A);
  spec.pi_e.resize(S, A);
  spec.reward_mean.resize(S, A);
  spec.reward_var.resize(S, A);
  for (int x = 0; x < S; ++x)
    for (int a = 0; a < A; ++a) {
      spec.pi_b(x, a) = pb->prob(State::discrete(x), a);
      spec.pi_e(x, a) = pe->prob(State::discrete(x), a);
      spec.reward_mean(x, a) = rng.normal();
      spec.reward_var(x, a) = deterministic_rewards ? 0.0 : 0.5 + rng.uniform();
    }
  spec.validate();
  return spec;
}

}  // namespace

TEST_CASE("Omega matrix examples") {
  const auto uniform2 = table_policy({{0.5, 0.5}});
  const OmegaMatrix o = omega_matrix(*uniform2, State::discrete(0));
  Eigen::Matrix2d expected;
  expected << 1, -1, -1, 1;
  CHECK((o.m - expected).cwiseAbs().maxCoeff() < 1e-15);
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(o.m).eigenvalues();
  CHECK(ev[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  CHECK(ev[1] == doctest::Approx(2.0).epsilon(1e-14));

  for (int l = 2; l <= 7; ++l) {
    const auto u = table_policy({std::vector<double>(l, 1.0 / l)});
    const OmegaMatrix ol = omega_matrix(*u, State::discrete(0));
    const Eigen::MatrixXd ref = l * Eigen::MatrixXd::Identity(l, l) - Eigen::MatrixXd::Ones(l, l);
    CHECK((ol.m - ref).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd e = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(ol.m).eigenvalues();
    CHECK(std::abs(e[0]) < 1e-12);
    CHECK(e[l - 1] == doctest::Approx(l).epsilon(1e-12));
  }
}

TEST_CASE("Omega is PSD for 10^4 random policies over 2 to 16 actions") {
  Rng rng(31);
  double worst = INFINITY;
  for (int k = 0; k < 10000; ++k) {
    const int l = 2 + k % 15;
    const auto pb = random_policy(1, l, rng, 1e-3);
    const OmegaMatrix o = omega_matrix(*pb, State::discrete(0));
    CHECK((o.m - o.m.transpose()).cwiseAbs().maxCoeff() == 0.0);
    worst = std::min(worst, min_eigenvalue(o.m));
  }
  CHECK(worst >= -1e-10);
}

TEST_CASE("Omega on the behavior support") {
  const auto pb = table_policy({{0.5, 0.0, 0.5}});
  CHECK_THROWS_AS(omega_matrix(*pb, State::discrete(0)), ZeroProbabilityError);
  const auto pe_ok = table_policy({{0.3, 0.0, 0.7}});
  const OmegaMatrix o = omega_on_support(*pb, *pe_ok, State::discrete(0));
  CHECK(o.support == std::vector<Action>{0, 2});
  CHECK(o.m.rows() == 2);
  const auto pe_bad = table_policy({{0.3, 0.1, 0.6}});
  CHECK_THROWS_AS(omega_on_support(*pb, *pe_bad, State::discrete(0)), ZeroProbabilityError);
}

TEST_CASE("q vector examples") {
  const auto fm = tabular_features(1, 3);
  const auto pe = table_policy({{0.2, 0.3, 0.5}});
  const State x = State::discrete(0);
  const LinearQModel zero(fm, Eigen::VectorXd::Zero(3));
  CHECK(q_vector(x, 1, 2.5, zero, *pe) == Eigen::Vector3d(0.0, -2.5, 0.0));
  const LinearQModel m(fm, Eigen::Vector3d(1.0, -2.0, 4.0));
  CHECK((q_vector(x, 2, 0.0, m, *pe) - Eigen::Vector3d(0.2, -0.6, 2.0)).cwiseAbs().maxCoeff() < 1e-15);
  // q . e = V-hat - r
  CHECK(q_vector(x, 0, 0.7, m, *pe).sum() == doctest::Approx(m.v(x, *pe) - 0.7).epsilon(1e-14));
  const auto det = table_policy({{0.0, 1.0, 0.0}});
  CHECK(q_vector(x, 1, -2.0, m, *det).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bandit MRDR objective: gradient, sign, and deterministic reduction") {
  Rng rng(32);
  const auto pb = random_policy(3, 3, rng);
  const auto pe = random_policy(3, 3, rng);
  const auto samples = bandit_samples(rng, 200, 3, *pb, 0.3);
  const LinearQModel base(tabular_features(3, 3), Eigen::VectorXd::Zero(9));
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::VectorXd beta = random_beta(rng, 9);
    const ObjectiveValue j = mrdr_objective_bandit(samples, base.with_beta(beta), *pe, *pb);
    CHECK(j.value >= 0.0);
    const auto f = [&](const Eigen::VectorXd& b) { return mrdr_objective_bandit(samples, base.with_beta(b), *pe, *pb).value; };
    CHECK(rel_err(j.gradient, fd_gradient(f, beta)) < 1e-4);
  }

  const auto det = std::make_shared<TableDeterministicPolicy>(std::vector<Action>{2, 0, 1}, 3, "det");
  const Dataset d = bandit_dataset(samples);
  const WlsProblem wls = mrdr_deterministic_problem(d, *det, *pb, *tabular_features(3, 3), Setting::Bandit);
  const Eigen::VectorXd b1 = random_beta(rng, 9), b2 = random_beta(rng, 9);
  const double dj = mrdr_objective_bandit(samples, base.with_beta(b1), *det, *pb).value -
                    mrdr_objective_bandit(samples, base.with_beta(b2), *det, *pb).value;
  CHECK(std::abs(dj - (wls.objective(b1) - wls.objective(b2))) < 1e-9);
}

TEST_CASE("J_n differences match the variance formula under the empirical distribution") {
  Rng rng(33);
  for (int rep = 0; rep < 10; ++rep) {
    const auto pb = random_policy(4, 3, rng, 0.1);
    const auto pe = random_policy(4, 3, rng, 0.1);
    const auto samples = bandit_samples(rng, 100, 4, *pb, 1.0);
    const LinearQModel m1(tabular_features(4, 3), random_beta(rng, 12));
    const LinearQModel m2 = m1.with_beta(random_beta(rng, 12));
    double v1 = 0.0, v2 = 0.0;
    for (const auto& s : samples) {
      v1 += variance_beta_part(s, m1, *pe, *pb);
      v2 += variance_beta_part(s, m2, *pe, *pb);
    }
    const double dv = (v1 - v2) / samples.size();
    const double dj = mrdr_objective_bandit(samples, m1, *pe, *pb).value - mrdr_objective_bandit(samples, m2, *pe, *pb).value;
    CHECK(std::abs(dj - dv) < 1e-8);
  }
}

TEST_CASE("RL MRDR objective") {
  Rng rng(34);
  const auto pb = random_policy(3, 2, rng);
  const auto pe = random_policy(3, 2, rng);

  const auto samples = bandit_samples(rng, 50, 3, *pb, 0.5);
  const Dataset one = bandit_dataset(samples);
  const LinearQModel m(tabular_features(3, 2), random_beta(rng, 6));
  const ObjectiveValue jb = mrdr_objective_bandit(samples, m, *pe, *pb);
  const ObjectiveValue jr = mrdr_objective_rl(one, m, *pe, *pb);
  CHECK(jb.value == jr.value);
  CHECK(jb.gradient == jr.gradient);

  for (int rep = 0; rep < 5; ++rep) {
    const Dataset d = random_dataset(rng, 40, 4, 3, *pb, 0.9);
    const Eigen::VectorXd beta = random_beta(rng, 6);
    const ObjectiveValue j = mrdr_objective_rl(d, m.with_beta(beta), *pe, *pb);
    CHECK(j.value >= 0.0);
    const auto f = [&](const Eigen::VectorXd& b) { return mrdr_objective_rl(d, m.with_beta(b), *pe, *pb).value; };
    CHECK(rel_err(j.gradient, fd_gradient(f, beta)) < 1e-4);
    // The expanded quadratic is the same function of beta.
    const QuadraticObjective quad = mrdr_quadratic(d, *pe, *pb, m.features());
    CHECK(quad.value(beta) == doctest::Approx(j.value).epsilon(1e-10));
  }
}

TEST_CASE("MRDR fit optimality and agreement with the deterministic WLS path") {
  Rng rng(35);
  const auto pb = random_policy(3, 3, rng);
  const auto det = std::make_shared<TableDeterministicPolicy>(std::vector<Action>{1, 0, 2}, 3, "det");
  const Dataset d = random_dataset(rng, 300, 3, 3, *pb, 0.95);
  const auto fm = tabular_features(3, 3);
  const LinearQModel fit = mrdr_fit(d, *det, *pb, fm);
  const LinearQModel wls = mrdr_wls_deterministic(d, *det, *pb, fm, Setting::RL);
  // Only the (x, pi_e(x)) cells are identified by either objective.
  for (int x = 0; x < 3; ++x) {
    const int k = x * 3 + det->choose(State::discrete(x));
    CHECK(std::abs(fit.beta()[k] - wls.beta()[k]) < 1e-6);
  }
  CHECK(mrdr_objective_rl(d, fit, *det, *pb).gradient.cwiseAbs().maxCoeff() <= 1e-5);

  const auto pe = random_policy(3, 3, rng);
  const LinearQModel stoch = mrdr_fit(d, *pe, *pb, fm);
  CHECK(mrdr_objective_rl(d, stoch, *pe, *pb).gradient.cwiseAbs().maxCoeff() <= 1e-5);
  MrdrFitConfig gd;
  gd.solver = Solver::GD;
  gd.gd.grad_tol = 1e-10;
  gd.gd.max_iters = 200000;
  const LinearQModel stoch_gd = mrdr_fit(d, *pe, *pb, fm, gd);
  CHECK((stoch_gd.beta() - stoch.beta()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("MRDR on an on-policy bandit with deterministic rewards recovers the rewards") {
  // The minimizer is Q-hat = r when each context's action frequencies equal pi_b, so the
  // samples are laid out with exactly those frequencies (probabilities in eighths).
  const std::vector<std::vector<double>> rows{{0.25, 0.25, 0.5}, {0.125, 0.375, 0.5}, {0.5, 0.25, 0.25}, {0.375, 0.375, 0.25}};
  const auto pb = table_policy(rows);
  std::vector<Step> samples;
  for (int rep = 0; rep < 5; ++rep)
    for (int x = 0; x < 4; ++x)
      for (int a = 0; a < 3; ++a)
        for (int k = 0; k < static_cast<int>(rows[x][a] * 8); ++k)
          samples.push_back({State::discrete(x), a, std::sin(1.0 + x * 3 + a), rows[x][a]});
  const Dataset d = bandit_dataset(samples);
  const LinearQModel fit = mrdr_fit(d, *pb, *pb, tabular_features(4, 3));
  for (const auto& s : samples) CHECK(std::abs(fit.q(s.state, s.action) - s.reward) < 1e-8);
  CHECK(mrdr_objective_rl(d, fit, *pb, *pb).gradient.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("MRDR0 minimizes the empirical second moment of the DR terms") {
  Rng rng(37);
  const auto pb = random_policy(3, 2, rng);
  const auto pe = random_policy(3, 2, rng);
  const Dataset d = random_dataset(rng, 200, 3, 3, *pb);
  const auto fm = tabular_features(3, 2);
  MrdrFitConfig cfg;
  cfg.mode = MrdrMode::MRDR0;
  const LinearQModel fit = mrdr_fit(d, *pe, *pb, fm, cfg);
  const auto second_moment = [&](const Eigen::VectorXd& b) {
    double s = 0.0;
    for (double v : dr_terms(d, fit.with_beta(b), *pe, *pb)) s += v * v;
    return s / d.size();
  };
  CHECK(fd_gradient(second_moment, fit.beta()).cwiseAbs().maxCoeff() < 1e-5);
  const double at_fit = second_moment(fit.beta());
  for (int rep = 0; rep < 20; ++rep) CHECK(second_moment(fit.beta() + 0.01 * random_beta(rng, 6)) >= at_fit);
}

TEST_CASE("deterministic WLS weights") {
  const auto det = std::make_shared<TableDeterministicPolicy>(std::vector<Action>{0, 0, 0}, 2, "det");
  const auto half = table_policy({{0.5, 0.5}, {0.2, 0.8}, {0.999999, 0.000001}});
  std::vector<Step> s{{State::discrete(0), 0, 1.0, 0.5}, {State::discrete(1), 0, 1.0, 0.2},
                      {State::discrete(2), 0, 1.0, 0.999999}, {State::discrete(0), 1, 1.0, 0.5}};
  const Dataset d = bandit_dataset(s);
  const WlsProblem mr = mrdr_deterministic_problem(d, *det, *half, *tabular_features(3, 2), Setting::Bandit);
  const WlsProblem dm = dm_bandit_problem(s, *det, *tabular_features(3, 2));
  REQUIRE(mr.rows.size() == 3);
  REQUIRE(dm.rows.size() == 3);
  const double n = 4.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const int x = mr.rows[k].phi[0].index / 2;
    if (x == 0) CHECK(mr.rows[k].weight * n == doctest::Approx(2.0).epsilon(1e-14));
    if (x == 1) CHECK(mr.rows[k].weight * n / dm.rows[k].weight == doctest::Approx(4.0).epsilon(1e-12));
    if (x == 2) CHECK(mr.rows[k].weight * n < 1e-5);
  }
}

TEST_CASE("bandit DR variance: closed form examples") {
  Rng rng(38);
  // pi_e = pi_b, Q-hat = true Q, deterministic rewards: only the context variance remains.
  BanditSpec spec = small_bandit(rng, 3, 3, true);
  spec.pi_e = spec.pi_b;
  Eigen::VectorXd beta(9);
  for (int x = 0; x < 3; ++x)
    for (int a = 0; a < 3; ++a) beta[x * 3 + a] = spec.reward_mean(x, a);
  const LinearQModel exact(tabular_features(3, 3), beta);
  double m1 = 0.0, m2 = 0.0;
  for (int x = 0; x < 3; ++x) {
    const double v = spec.pi_e.row(x).dot(spec.reward_mean.row(x));
    m1 += spec.p0[x] * v;
    m2 += spec.p0[x] * v * v;
  }
  CHECK(bandit_dr_variance_closed_form(spec, exact) == doctest::Approx(m2 - m1 * m1).epsilon(1e-12));

  for (int rep = 0; rep < 10; ++rep) {
    const BanditSpec s = small_bandit(rng, 1 + rep % 4, 2 + rep % 3, rep % 2 == 0);
    const int k = s.contexts() * s.actions();
    const LinearQModel m(tabular_features(s.contexts(), s.actions()), random_beta(rng, k));
    const double cf = bandit_dr_variance_closed_form(s, m);
    CHECK(std::abs(cf - bandit_dr_variance_delta_form(s, m)) < 1e-9);
    CHECK(std::abs(cf - (bandit_mrdr_objective_exact(s, m) + bandit_variance_constant(s))) < 1e-9);
  }
}

TEST_CASE("bandit DR variance agrees with 10^5 simulated single-sample estimates") {
  Rng rng(39);
  const BanditSpec spec = small_bandit(rng, 2, 3, false);
  const LinearQModel m(tabular_features(2, 3), random_beta(rng, 6));
  const auto pe = spec.evaluation();
  const auto samples = sample_bandit(spec, 100000, rng);
  double s1 = 0.0, s2 = 0.0;
  for (const auto& s : samples) {
    const double v = bandit_dr_estimate(std::span<const Step>(&s, 1), m, *pe);
    s1 += v;
    s2 += v * v;
  }
  const double n = samples.size();
  const double var = (s2 - s1 * s1 / n) / (n - 1);
  const double cf = bandit_dr_variance_closed_form(spec, m);
  INFO("empirical " << var << " closed form " << cf);
  CHECK(std::abs(var - cf) <= 0.05 * cf);
}

TEST_CASE("MRDR has no more DR variance than DM on ModelFail (n = 512, 100 replicates)") {
  const auto env = model_fail();
  const auto pe = env->evaluation_policy();
  const auto pb = env->behavior_policy();
  const auto fm = env->default_features();
  std::vector<double> dm, mr;
  for (int rep = 0; rep < 100; ++rep) {
    const Dataset train = generate_trajectories(*env, *pb, 512, derive_seed(40, 2 * rep));
    const Dataset eval = generate_trajectories(*env, *pb, 512, derive_seed(40, 2 * rep + 1));
    const LinearQModel dm_model = dm_fit_rl(train, *pe, *pb, fm);
    const LinearQModel mrdr_model = mrdr_fit(train, *pe, *pb, fm, {}, &dm_model);
    dm.push_back(dr_estimate(eval, dm_model, *pe, *pb));
    mr.push_back(dr_estimate(eval, mrdr_model, *pe, *pb));
  }
  const auto var = [](const std::vector<double>& xs) {
    double m = 0.0, v = 0.0;
    for (double x : xs) m += x;
    m /= xs.size();
    for (double x : xs) v += (x - m) * (x - m);
    return v / (xs.size() - 1);
  };
  INFO("var DR(MRDR) " << var(mr) << " var DR(DM) " << var(dm));
  CHECK(var(mr) <= 1.05 * var(dm));
}
