#include <doctest.h>

#include <cmath>
#include <random>

#include "cftraj/cpm.hpp"
#include "oracles.hpp"

using namespace cftraj;

namespace {

// Feasible coupling with the given marginals: alpha columns sum to omega, beta rows to lambda.
VariationalCoupling random_coupling(std::mt19937_64& rng, const GaussianMixture& p, const GaussianMixture& q) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  VariationalCoupling c{CouplingMatrix(q.size(), p.size()), CouplingMatrix(q.size(), p.size())};
  for (std::size_t j = 0; j < p.size(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += c.alpha(i, j) = u(rng);
    for (std::size_t i = 0; i < q.size(); ++i) c.alpha(i, j) *= p.weights[j] / s;
  }
  for (std::size_t i = 0; i < q.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) s += c.beta(i, j) = u(rng);
    for (std::size_t j = 0; j < p.size(); ++j) c.beta(i, j) *= q.weights[i] / s;
  }
  return c;
}

double bound_by_hand(const GaussianMixture& p, const GaussianMixture& q, const VariationalCoupling& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double a = c.alpha(i, j);
      if (a <= 0.0) continue;
      s += a * (gaussian_kl(p.components[j], q.components[i]) + std::log(a / c.beta(i, j)));
    }
  }
  return s;
}

}  // namespace

TEST_CASE("pairwise KL table and independence coupling") {
  std::mt19937_64 rng(73);
  const auto p = oracle::random_mixture(rng, 3, 2), q = oracle::random_mixture(rng, 2, 2);
  const auto kl = pairwise_kl(p, q);
  CHECK(kl.rows == 2);
  CHECK(kl.cols == 3);
  CHECK(kl(1, 2) == gaussian_kl(p.components[2], q.components[1]));
  const auto c = independence_coupling(p, q);
  CHECK(c.alpha == c.beta);
  CHECK(c.alpha(1, 0) == doctest::Approx(q.weights[1] * p.weights[0]));
  CHECK(coupling_kl(c.alpha, c.beta) == 0.0);
  CHECK_NOTHROW(check_marginals(p, q, c));
  CHECK(upper_bound_L1(p, q, c) == doctest::Approx(bound_by_hand(p, q, c)).epsilon(1e-12));
}

TEST_CASE("broken marginals are rejected") {
  std::mt19937_64 rng(79);
  const auto p = oracle::random_mixture(rng, 2, 1), q = oracle::random_mixture(rng, 2, 1);
  auto c = independence_coupling(p, q);
  c.alpha(0, 0) += 0.01;
  CHECK_THROWS_AS(check_marginals(p, q, c), std::invalid_argument);
}

TEST_CASE("coupling KL handles zero entries") {
  CouplingMatrix a(1, 2), b(1, 2);
  a(0, 0) = 0.0;
  a(0, 1) = 1.0;
  b(0, 0) = 0.5;
  b(0, 1) = 0.5;
  CHECK(coupling_kl(a, b) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("alpha and beta updates keep their marginals and beat random feasible couplings") {
  std::mt19937_64 rng(83);
  for (int rep = 0; rep < 30; ++rep) {
    const auto p = oracle::random_mixture(rng, 1 + rep % 4, 1 + rep % 2);
    const auto q = oracle::random_mixture(rng, 1 + (rep / 4) % 4, 1 + rep % 2);
    VariationalCoupling c = random_coupling(rng, p, q);
    VariationalCoupling with_alpha = c;
    with_alpha.alpha = update_alpha(p, q, c);
    const auto cs = with_alpha.alpha.col_sums();
    for (std::size_t j = 0; j < p.size(); ++j) CHECK(std::abs(cs[j] - p.weights[j]) <= 1e-12);
    VariationalCoupling with_beta = with_alpha;
    with_beta.beta = update_beta(with_alpha, q.weights);
    const auto rs = with_beta.beta.row_sums();
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(std::abs(rs[i] - q.weights[i]) <= 1e-12);

    const double after_alpha = bound_by_hand(p, q, with_alpha);
    const double after_beta = bound_by_hand(p, q, with_beta);
    CHECK(after_alpha <= bound_by_hand(p, q, c) + 1e-12);
    CHECK(after_beta <= after_alpha + 1e-12);
    // Each closed form is the exact minimiser over its block.
    for (int k = 0; k < 20; ++k) {
      VariationalCoupling other = random_coupling(rng, p, q);
      other.beta = with_alpha.beta;
      CHECK(after_alpha <= bound_by_hand(p, q, other) + 1e-12);
      VariationalCoupling other_b = random_coupling(rng, p, q);
      other_b.alpha = with_beta.alpha;
      CHECK(after_beta <= bound_by_hand(p, q, other_b) + 1e-12);
    }
  }
}

TEST_CASE("closed-form component step matches numeric minimisation in 1-D") {
  std::mt19937_64 rng(89);
  for (int rep = 0; rep < 50; ++rep) {
    const auto p = oracle::random_mixture(rng, 2, 1);
    const auto q = oracle::random_mixture(rng, 3, 1, 3.0, 0.2, 3.0);
    const auto c = random_coupling(rng, p, q);
    const std::size_t j = rep % 2;
    const DiagGaussian got = p_step_closed_form(q, c.alpha, j);
    auto objective = [&](double m, double v) {
      double s = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) {
        const double mi = q.components[i].mean[0], vi = q.components[i].var[0];
        s += c.alpha(i, j) * 0.5 * (std::log(vi / v) + v / vi + (m - mi) * (m - mi) / vi - 1.0);
      }
      return s;
    };
    // The objective separates: the mean term does not depend on v and vice versa.
    const double m_num = oracle::minimize_1d([&](double m) { return objective(m, 1.0); }, -10.0, 10.0);
    const double v_num = oracle::minimize_1d([&](double v) { return objective(0.0, v); }, 1e-3, 10.0);
    CHECK(std::abs(got.mean[0] - m_num) < 1e-4);
    CHECK(std::abs(got.var[0] - v_num) < 1e-4);
  }
}

TEST_CASE("weight step does not increase the bound") {
  std::mt19937_64 rng(97);
  for (int rep = 0; rep < 30; ++rep) {
    const auto q = oracle::random_mixture(rng, 3, 2);
    auto p = oracle::random_mixture(rng, 3, 2);
    auto c = independence_coupling(p, q);
    c.alpha = update_alpha(p, q, c);
    c.beta = update_beta(c, q.weights);
    const double before = bound_by_hand(p, q, c);
    const auto w = weight_step(p, q, c);
    double total = 0.0;
    for (double x : w) total += x;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t j = 0; j < p.size(); ++j) {
      for (std::size_t i = 0; i < q.size(); ++i) c.alpha(i, j) *= w[j] / p.weights[j];
    }
    p.weights = w;
    CHECK(bound_by_hand(p, q, c) <= before + 1e-12);
  }
}

TEST_CASE("solver trace is non-increasing and marginals hold after each step") {
  std::mt19937_64 rng(101);
  for (int rep = 0; rep < 20; ++rep) {
    const auto p0 = oracle::random_mixture(rng, 1 + rep % 4, 1 + rep % 3);
    const auto q = oracle::random_mixture(rng, 1 + (rep + 1) % 4, 1 + rep % 3);
    double worst = 0.0;
    auto checked_step = [&](const GaussianMixture& p, const VariationalCoupling& c) {
      const auto cs = c.alpha.col_sums();
      const auto rs = c.beta.row_sums();
      for (std::size_t j = 0; j < p.size(); ++j) worst = std::max(worst, std::abs(cs[j] - p.weights[j]));
      for (std::size_t i = 0; i < q.size(); ++i) worst = std::max(worst, std::abs(rs[i] - q.weights[i]));
      GaussianMixture out = p;
      for (std::size_t j = 0; j < p.size(); ++j) out.components[j] = p_step_closed_form(q, c.alpha, j);
      return out;
    };
    const CpmResult r = cpm_solve(p0, q, {}, std::nullopt, checked_step);
    for (std::size_t k = 1; k < r.report.bound_trace.size(); ++k) {
      CHECK(r.report.bound_trace[k] <= r.report.bound_trace[k - 1] + 1e-12);
    }
    CHECK(worst <= 1e-12);
    CHECK_NOTHROW(check_marginals(r.p, q, r.coupling, 1e-12));
  }
}

TEST_CASE("P equal to Q with the diagonal coupling is a fixed point") {
  std::mt19937_64 rng(103);
  for (int rep = 0; rep < 10; ++rep) {
    const auto q = oracle::random_mixture(rng, 1 + rep % 4, 1 + rep % 2);
    CouplingMatrix diag(q.size(), q.size());
    for (std::size_t i = 0; i < q.size(); ++i) diag(i, i) = q.weights[i];
    const CpmResult r = cpm_solve(q, q, {.max_iters = 2}, VariationalCoupling{diag, diag});
    CHECK(r.report.converged);
    CHECK(r.report.iterations <= 2);
    CHECK(r.report.bound_trace.back() < 1e-9);
    for (std::size_t j = 0; j < q.size(); ++j) {
      for (std::size_t k = 0; k < q.dim(); ++k) {
        CHECK(r.p.components[j].mean[k] == doctest::Approx(q.components[j].mean[k]).epsilon(1e-12));
        CHECK(r.p.components[j].var[k] == doctest::Approx(q.components[j].var[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("default initialisation reaches zero for P equal to a well-separated Q") {
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t m = 1 + rep % 4;
    GaussianMixture q;
    for (std::size_t i = 0; i < m; ++i) {
      q.weights.push_back(u(rng));
      q.components.push_back({{40.0 * static_cast<double>(i)}, {u(rng)}});
    }
    double s = 0.0;
    for (double w : q.weights) s += w;
    for (double& w : q.weights) w /= s;
    const CpmResult r = cpm_solve(q, q, {.max_iters = 2});
    CHECK(r.report.bound_trace.back() < 1e-9);
  }
}

TEST_CASE("default initialisation with overlapping P equal to Q still descends") {
  std::mt19937_64 rng(113);
  for (int rep = 0; rep < 10; ++rep) {
    const auto q = oracle::random_mixture(rng, 2 + rep % 3, 1 + rep % 2);
    const CpmResult r = cpm_solve(q, q);
    CHECK(r.report.bound_trace.back() <= r.report.bound_trace.front());
    CHECK(r.report.bound_trace.back() >= -1e-12);
  }
}

TEST_CASE("bound dominates a Monte-Carlo KL estimate") {
  std::mt19937_64 rng(107);
  for (int rep = 0; rep < 5; ++rep) {
    const auto p = oracle::random_mixture(rng, 1 + rep % 4, 1 + rep % 2);
    const auto q = oracle::random_mixture(rng, 1 + (rep + 2) % 4, 1 + rep % 2);
    auto c = independence_coupling(p, q);
    c.alpha = update_alpha(p, q, c);
    c.beta = update_beta(c, q.weights);
    const auto mc = oracle::mc_kl(p, q, 100000, 7 + rep);
    CHECK(upper_bound_L1(p, q, c) >= mc.mean - 3.0 * mc.se);
  }
}

TEST_CASE("library Monte-Carlo KL agrees with an independent estimate") {
  std::mt19937_64 rng(109);
  const auto p = oracle::random_mixture(rng, 3, 2), q = oracle::random_mixture(rng, 2, 2);
  const auto ours = monte_carlo_kl(p, q, 200000, 5);
  const auto ref = oracle::mc_kl(p, q, 200000, 6);
  const double se = std::hypot(ours.standard_error, ref.se);
  CHECK(std::abs(ours.estimate - ref.mean) <= 4.0 * se);
  const auto unit = monte_carlo_kl({{1.0}, {{{0.0}, {1.0}}}}, {{1.0}, {{{1.0}, {1.0}}}}, 200000, 9);
  CHECK(std::abs(unit.estimate - 0.5) <= 4.0 * unit.standard_error);
}

TEST_CASE("frozen components with zero weight are left alone") {
  GaussianMixture p{{1.0, 0.0}, {{{0.0}, {1.0}}, {{5.0}, {2.0}}}};
  GaussianMixture q{{0.5, 0.5}, {{{-1.0}, {1.0}}, {{1.0}, {1.0}}}};
  const CpmResult r = cpm_solve(p, q, {.optimize_weights = false});
  CHECK(r.p.components[1] == p.components[1]);
  CHECK(r.coupling.alpha(0, 1) == 0.0);
  CHECK(r.coupling.alpha(1, 1) == 0.0);
}
