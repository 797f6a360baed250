#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include <Eigen/Dense>

#include "helpers.hpp"
#include "ope/linmodel.hpp"

using namespace ope;
using namespace testing;

namespace {

WlsProblem random_problem(Rng& rng, int m, int d) {
  WlsProblem p(d);
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd phi(d);
    for (int j = 0; j < d; ++j) phi[j] = rng.normal();
    p.add_row(phi, rng.normal(), 0.1 + rng.uniform());
  }
  return p;
}

// Dense oracle: minimizer via the pseudo-inverse of W^{1/2} Phi.
Eigen::VectorXd pinv_oracle(const WlsProblem& p) {
  const int m = static_cast<int>(p.rows.size());
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(m, p.dim);
  Eigen::VectorXd y(m);
  for (int i = 0; i < m; ++i) {
    const double s = std::sqrt(p.rows[i].weight);
    for (const auto& e : p.rows[i].phi) X(i, e.index) += s * e.value;
    y[i] = s * p.rows[i].target;
  }
  return X.completeOrthogonalDecomposition().pseudoInverse() * y;
}

}  // namespace

TEST_CASE("wls weighted means") {
  WlsProblem p(1);
  p.add_row(Eigen::VectorXd::Ones(1), 3.0, 1.0);
  p.add_row(Eigen::VectorXd::Ones(1), 5.0, 1.0);
  CHECK(wls_solve(p)[0] == doctest::Approx(4.0).epsilon(1e-14));
  WlsProblem q(1);
  q.add_row(Eigen::VectorXd::Ones(1), 3.0, 3.0);
  q.add_row(Eigen::VectorXd::Ones(1), 5.0, 1.0);
  CHECK(wls_solve(q)[0] == doctest::Approx(3.5).epsilon(1e-14));
}

TEST_CASE("wls matches the pseudo-inverse oracle on a random 50x5 problem") {
  Rng rng(17);
  const WlsProblem p = random_problem(rng, 50, 5);
  const Eigen::VectorXd beta = wls_solve(p);
  CHECK((beta - pinv_oracle(p)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("wls recovers exactly linear targets for any positive weights") {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const int d = 2 + rep % 5;
    Eigen::VectorXd beta0(d);
    for (int j = 0; j < d; ++j) beta0[j] = rng.normal();
    WlsProblem p(d);
    for (int i = 0; i < 4 * d; ++i) {
      Eigen::VectorXd phi(d);
      for (int j = 0; j < d; ++j) phi[j] = rng.normal();
      p.add_row(phi, phi.dot(beta0), std::exp(3.0 * rng.normal()));
    }
    CHECK((wls_solve(p) - beta0).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("wls singular handling") {
  WlsProblem p(2);
  p.add_row(Eigen::Vector2d(1.0, 0.0), 2.0, 1.0);
  CHECK_THROWS_AS(wls_solve(p), SingularSystemError);
  const Eigen::VectorXd beta = wls_solve_or_ridge(p);
  CHECK(beta[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(beta[1] == 0.0);
  WlsProblem z(1);
  z.add_row(Eigen::VectorXd::Ones(1), 1.0, 0.0);
  CHECK_THROWS_AS(wls_solve(z), DegenerateWeightsError);
}

TEST_CASE("wls with ridge matches the regularized normal equations") {
  Rng rng(4);
  WlsProblem p = random_problem(rng, 30, 4);
  p.ridge = 0.5;
  Eigen::MatrixXd A = 0.5 * Eigen::MatrixXd::Identity(4, 4);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(4);
  for (const auto& r : p.rows) {
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(4);
    for (const auto& e : r.phi) phi[e.index] += e.value;
    A += r.weight * phi * phi.transpose();
    b += r.weight * r.target * phi;
  }
  CHECK((wls_solve(p) - A.ldlt().solve(b)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("gd_minimize examples") {
  Objective scalar = [](const Eigen::VectorXd& b, Eigen::VectorXd* g) {
    if (g) *g = Eigen::VectorXd::Constant(1, 2.0 * (b[0] - 2.0));
    return (b[0] - 2.0) * (b[0] - 2.0);
  };
  const GdResult r = gd_minimize(scalar, Eigen::VectorXd::Zero(1));
  CHECK(std::abs(r.beta[0] - 2.0) < 1e-6);
  CHECK(r.converged);

  Rng rng(8);
  Eigen::MatrixXd M(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) M(i, j) = rng.normal();
  const Eigen::MatrixXd A = M * M.transpose() + Eigen::MatrixXd::Identity(6, 6);
  Eigen::VectorXd b(6);
  for (int i = 0; i < 6; ++i) b[i] = rng.normal();
  Objective quad = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = A * x - b;
    return 0.5 * x.dot(A * x) - b.dot(x);
  };
  GdConfig cfg;
  cfg.grad_tol = 1e-9;
  const GdResult q = gd_minimize(quad, Eigen::VectorXd::Zero(6), cfg);
  CHECK((q.beta - A.ldlt().solve(b)).cwiseAbs().maxCoeff() < 1e-5);

  Objective constant = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = Eigen::VectorXd::Zero(x.size());
    return 3.0;
  };
  const Eigen::Vector3d start(1.0, -2.0, 0.5);
  const GdResult c = gd_minimize(constant, start);
  CHECK(c.beta == start);
  CHECK(c.iterations == 0);
}

TEST_CASE("gd_minimize divergence") {
  Objective not_finite = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = Eigen::VectorXd::Ones(x.size());
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(gd_minimize(not_finite, Eigen::VectorXd::Zero(1)), DivergenceError);
  Objective huge = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = Eigen::VectorXd::Ones(x.size());
    return 1e13;
  };
  CHECK_THROWS_AS(gd_minimize(huge, Eigen::VectorXd::Zero(1)), DivergenceError);
  Objective nan = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = Eigen::VectorXd::Ones(x.size());
    return std::nan("");
  };
  CHECK_THROWS_AS(gd_minimize(nan, Eigen::VectorXd::Zero(1)), DivergenceError);
}

TEST_CASE("gd_minimize agrees with wls_solve in objective value") {
  Rng rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    const WlsProblem p = random_problem(rng, 40, 6);
    Objective f = [&](const Eigen::VectorXd& b, Eigen::VectorXd* g) { return p.objective(b, g); };
    const GdResult r = gd_minimize(f, Eigen::VectorXd::Zero(6));
    CHECK(std::abs(r.value - p.objective(wls_solve(p))) < 1e-4);
  }
}

TEST_CASE("WLS objective gradient matches finite differences") {
  Rng rng(6);
  const WlsProblem p = random_problem(rng, 30, 5);
  Objective f = [&](const Eigen::VectorXd& b, Eigen::VectorXd* g) { return p.objective(b, g); };
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd beta(5);
    for (int j = 0; j < 5; ++j) beta[j] = rng.normal();
    CHECK(gradient_relative_error(f, beta) < 1e-4);
  }
}

TEST_CASE("tabular features") {
  const auto fm = tabular_features(3, 2);
  CHECK(fm->dim() == 6);
  const Eigen::VectorXd phi = fm->phi(State::discrete(1), 0);
  CHECK(phi.size() == 6);
  CHECK(phi[2] == 1.0);
  CHECK(phi.sum() == 1.0);
  for (int x = 0; x < 3; ++x)
    for (int a = 0; a < 2; ++a)
      for (int y = 0; y < 3; ++y)
        for (int b = 0; b < 2; ++b) {
          const double dot = fm->phi(State::discrete(x), a).dot(fm->phi(State::discrete(y), b));
          CHECK(dot == ((x == y && a == b) ? 1.0 : 0.0));
        }
  const auto one = tabular_features(1, 1);
  CHECK(one->phi(State::discrete(0), 0) == Eigen::VectorXd::Ones(1));
  CHECK(fm->phi(State::absorbing(), 0).isZero());
  CHECK_THROWS_AS(fm->phi(State::discrete(3), 0), InvalidInput);
  CHECK_THROWS_AS(fm->phi(State::discrete(0), 2), InvalidInput);
}

TEST_CASE("mountain car tile features") {
  const auto flat = mountaincar_features(8, 8, 1, 3);
  CHECK(flat->dim() == 8 * 8 * 3);
  const State early = State::continuous({-0.3, 0.01, 0.0});
  const State late = State::continuous({-0.3, 0.01, 240.0});
  CHECK(flat->phi(early, 1) == flat->phi(late, 1));

  const auto timed = mountaincar_features(8, 8, 10, 3);
  CHECK(timed->dim() == 8 * 8 * 3 * 10);
  CHECK(timed->phi(early, 1).dot(timed->phi(late, 1)) == 0.0);

  // Position bins are 0.15 wide starting at -0.7: -0.55 sits on the boundary of bins 0 and 1.
  const auto pos_only = mountaincar_features(8, 1, 1, 1);
  SparseVector sv;
  pos_only->sparse_phi(State::continuous({-0.55, 0.0, 0.0}), 0, sv);
  REQUIRE(sv.size() == 1);
  CHECK(sv[0].index == 1);
  pos_only->sparse_phi(State::continuous({-5.0, 0.0, 0.0}), 0, sv);
  CHECK(sv[0].index == 0);
  pos_only->sparse_phi(State::continuous({5.0, 0.0, 0.0}), 0, sv);
  CHECK(sv[0].index == 7);
  pos_only->sparse_phi(State::continuous({0.5, 0.0, 0.0}), 0, sv);
  CHECK(sv[0].index == 7);
}

TEST_CASE("action-linear features") {
  const auto fm = action_linear_features(2, 3);
  CHECK(fm->dim() == 9);
  const Eigen::VectorXd phi = fm->phi(State::continuous({0.5, -2.0}), 1);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(9);
  expected.segment(3, 3) << 0.5, -2.0, 1.0;
  CHECK(phi == expected);
}

TEST_CASE("model files round trip exactly") {
  Rng rng(12);
  for (const auto& fm : {tabular_features(4, 3), mountaincar_features(4, 5, 2, 3), cartpole_features(3, 2),
                         action_linear_features(3, 2)}) {
    Eigen::VectorXd beta(fm->dim());
    for (int j = 0; j < beta.size(); ++j) beta[j] = rng.normal() / 3.0;
    const LinearQModel m(fm, beta);
    const auto dir = temp_dir("model_rt");
    save_model(dir / "m.json", m);
    const LinearQModel back = load_model(dir / "m.json");
    CHECK(back.beta() == beta);
    CHECK(back.features().descriptor() == fm->descriptor());
    CHECK(model_to_json(back).dump() == model_to_json(m).dump());
  }
}

TEST_CASE("linear Q model readouts") {
  const auto fm = tabular_features(2, 2);
  const LinearQModel m(fm, Eigen::Vector4d(1.0, 2.0, 3.0, 4.0));
  CHECK(m.q(State::discrete(1), 0) == 3.0);
  const auto pi = table_policy({{0.5, 0.5}, {0.25, 0.75}});
  CHECK(m.v(State::discrete(1), *pi) == doctest::Approx(0.25 * 3 + 0.75 * 4));
  CHECK(m.q(State::absorbing(), 0) == 0.0);
}
