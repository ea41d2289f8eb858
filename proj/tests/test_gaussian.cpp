#include <doctest.h>

#include <cmath>
#include <random>

#include "cftraj/gaussian.hpp"
#include "oracles.hpp"

using namespace cftraj;

TEST_CASE("KL of unit normals one apart is one half") {
  const DiagGaussian p{{0.0}, {1.0}}, q{{1.0}, {1.0}};
  CHECK(gaussian_kl(p, q) == 0.5);
  CHECK(gaussian_kl(p, p) == 0.0);
}

TEST_CASE("KL matches quadrature for random 1-D pairs") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> m(-3.0, 3.0), v(0.2, 4.0);
  for (int k = 0; k < 40; ++k) {
    const double mp = m(rng), vp = v(rng), mq = m(rng), vq = v(rng);
    const double want = oracle::kl_quadrature_1d(mp, vp, mq, vq);
    CHECK(gaussian_kl({{mp}, {vp}}, {{mq}, {vq}}) == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("diagonal KL is the sum of per-axis KLs") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> m(-2.0, 2.0), v(0.3, 3.0);
  for (int k = 0; k < 20; ++k) {
    DiagGaussian p, q;
    double want = 0.0;
    for (int d = 0; d < 3; ++d) {
      p.mean.push_back(m(rng));
      p.var.push_back(v(rng));
      q.mean.push_back(m(rng));
      q.var.push_back(v(rng));
      want += oracle::kl_quadrature_1d(p.mean[d], p.var[d], q.mean[d], q.var[d]);
    }
    CHECK(gaussian_kl(p, q) == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("KL is nonnegative and equals cross entropy minus entropy") {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> m(-10.0, 10.0), v(1e-3, 50.0);
  for (int k = 0; k < 1000; ++k) {
    DiagGaussian p, q;
    for (int d = 0; d < 1 + k % 4; ++d) {
      p.mean.push_back(m(rng));
      p.var.push_back(v(rng));
      q.mean.push_back(m(rng));
      q.var.push_back(v(rng));
    }
    const double kl = gaussian_kl(p, q);
    CHECK(kl >= 0.0);
    const double diff = gaussian_cross_entropy(p, q) - gaussian_entropy(p);
    CHECK(std::abs(diff - kl) <= 1e-12 * std::max(1.0, std::abs(kl)));
  }
}

TEST_CASE("entropy of a standard normal") {
  CHECK(gaussian_entropy({{0.0, 0.0}, {1.0, 1.0}}) == doctest::Approx(1.0 + std::log(2.0 * M_PI)));
}

TEST_CASE("mixture density and responsibilities agree with a direct evaluation") {
  std::mt19937_64 rng(53);
  std::normal_distribution<double> z(0.0, 2.0);
  for (int k = 0; k < 20; ++k) {
    const GaussianMixture g = oracle::random_mixture(rng, 1 + k % 4, 1 + k % 3);
    std::vector<double> x(g.dim());
    for (auto& v : x) v = z(rng);
    CHECK(gmm_log_pdf(g, x) == doctest::Approx(oracle::mixture_log_density(g, x)).epsilon(1e-12));
    const auto r = gmm_responsibilities(g, x);
    double total = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double lj = std::log(g.weights[j]) + g.components[j].log_pdf(x);
      CHECK(r[j] == doctest::Approx(std::exp(lj - oracle::mixture_log_density(g, x))).epsilon(1e-10));
      total += r[j];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("log-sum-exp is stable for large magnitudes") {
  CHECK(log_sum_exp({1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(log_sum_exp({-1000.0, -1001.0}) == doctest::Approx(-1000.0 + std::log1p(std::exp(-1.0))));
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(log_sum_exp({ninf, 0.0}) == 0.0);
}

TEST_CASE("mixture validation and serialisation") {
  GaussianMixture g{{0.25, 0.75}, {{{0.0}, {1.0}}, {{2.0}, {0.5}}}};
  CHECK_NOTHROW(g.validate());
  CHECK(GaussianMixture::from_json(g.to_json()) == g);
  CHECK(g.mean()[0] == doctest::Approx(1.5));
  GaussianMixture off = g;
  off.weights = {0.3, 0.3};
  CHECK_THROWS_AS(off.validate(), std::invalid_argument);
  GaussianMixture neg = g;
  neg.components[1].var[0] = -1.0;
  CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
  GaussianMixture dims = g;
  dims.components[1].mean.push_back(0.0);
  dims.components[1].var.push_back(1.0);
  CHECK_THROWS_AS(dims.validate(), std::invalid_argument);
}

TEST_CASE("samples reproduce mixture moments") {
  const GaussianMixture g{{0.3, 0.7}, {{{-2.0}, {0.5}}, {{1.0}, {2.0}}}};
  std::mt19937_64 rng(59);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double x = gmm_sample(g, rng)[0];
    s += x;
    s2 += x * x;
  }
  const double mean = 0.3 * -2.0 + 0.7 * 1.0;
  const double second = 0.3 * (0.5 + 4.0) + 0.7 * (2.0 + 1.0);
  CHECK(std::abs(s / n - mean) < 0.02);
  CHECK(s2 / n == doctest::Approx(second).epsilon(0.02));
}

TEST_CASE("batch EM never decreases the log-likelihood and recovers separated components") {
  std::mt19937_64 rng(61);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<std::vector<double>> xs;
  for (int k = 0; k < 2000; ++k) xs.push_back({(k % 2 ? 5.0 : -5.0) + z(rng)});
  const EmResult r = fit_em(xs, {.components = 2, .seed = 3, .max_iters = 200});
  for (std::size_t k = 1; k < r.log_likelihood.size(); ++k) {
    CHECK(r.log_likelihood[k] >= r.log_likelihood[k - 1] - 1e-9);
  }
  double lo = r.mixture.components[0].mean[0], hi = r.mixture.components[1].mean[0];
  if (lo > hi) std::swap(lo, hi);
  CHECK(std::abs(lo + 5.0) <= 0.3);
  CHECK(std::abs(hi - 5.0) <= 0.3);
}

TEST_CASE("EM monotonicity on random multi-dimensional data") {
  std::mt19937_64 rng(67);
  for (int rep = 0; rep < 10; ++rep) {
    const GaussianMixture truth = oracle::random_mixture(rng, 3, 2, 4.0);
    std::vector<std::vector<double>> xs;
    for (int k = 0; k < 500; ++k) xs.push_back(gmm_sample(truth, rng));
    const EmResult r = fit_em(xs, {.components = 1 + static_cast<std::size_t>(rep % 4), .seed = 5u + rep});
    for (std::size_t k = 1; k < r.log_likelihood.size(); ++k) {
      CHECK(r.log_likelihood[k] >= r.log_likelihood[k - 1] - 1e-9);
    }
    CHECK_NOTHROW(r.mixture.validate());
  }
}

TEST_CASE("EM on identical samples stays finite") {
  std::vector<std::vector<double>> xs(50, std::vector<double>{1.5, -2.0});
  const EmResult r = fit_em(xs, {.components = 3, .seed = 1});
  CHECK_NOTHROW(r.mixture.validate());
  for (const auto& c : r.mixture.components) {
    for (double v : c.var) CHECK(v >= kVarianceFloor);
  }
  CHECK(std::abs(r.mixture.mean()[0] - 1.5) < 1e-9);
}

TEST_CASE("stochastic EM produces a valid mixture") {
  std::mt19937_64 rng(71);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<std::vector<double>> xs;
  for (int k = 0; k < 1000; ++k) xs.push_back({(k % 2 ? 4.0 : -4.0) + z(rng)});
  const EmResult r =
      fit_em(xs, {.components = 2, .seed = 2, .max_iters = 100, .mode = EmMode::stochastic, .minibatch = 128});
  CHECK_NOTHROW(r.mixture.validate());
  double lo = r.mixture.components[0].mean[0], hi = r.mixture.components[1].mean[0];
  if (lo > hi) std::swap(lo, hi);
  CHECK(std::abs(lo + 4.0) < 0.5);
  CHECK(std::abs(hi - 4.0) < 0.5);
}
