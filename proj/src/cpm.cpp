#include "cftraj/cpm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cftraj {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

void check_shapes(const GaussianMixture& p, const GaussianMixture& q) {
  if (p.dim() != q.dim()) {
    throw std::invalid_argument("cpm: mixture dimensions differ (" + std::to_string(p.dim()) + " vs " +
                                std::to_string(q.dim()) + ")");
  }
}

}  // namespace

std::vector<double> CouplingMatrix::row_sums() const {
  std::vector<double> s(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) s[i] += (*this)(i, j);
  }
  return s;
}

std::vector<double> CouplingMatrix::col_sums() const {
  std::vector<double> s(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) s[j] += (*this)(i, j);
  }
  return s;
}

CouplingMatrix pairwise_kl(const GaussianMixture& p, const GaussianMixture& q) {
  check_shapes(p, q);
  CouplingMatrix kl(q.size(), p.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) kl(i, j) = gaussian_kl(p.components[j], q.components[i]);
  }
  return kl;
}

VariationalCoupling independence_coupling(const GaussianMixture& p, const GaussianMixture& q) {
  CouplingMatrix a(q.size(), p.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) a(i, j) = q.weights[i] * p.weights[j];
  }
  return {a, a};
}

double coupling_kl(const CouplingMatrix& alpha, const CouplingMatrix& beta) {
  double s = 0.0;
  for (std::size_t k = 0; k < alpha.data.size(); ++k) {
    const double a = alpha.data[k];
    if (a <= 0.0) continue;
    const double b = beta.data[k];
    if (b <= 0.0) return std::numeric_limits<double>::infinity();
    s += a * std::log(a / b);
  }
  return s;
}

void check_marginals(const GaussianMixture& p, const GaussianMixture& q, const VariationalCoupling& c, double tol) {
  check_shapes(p, q);
  const auto& a = c.alpha;
  const auto& b = c.beta;
  if (a.rows != q.size() || a.cols != p.size() || b.rows != q.size() || b.cols != p.size()) {
    throw std::invalid_argument("cpm: coupling shape does not match mixtures");
  }
  const auto cs = a.col_sums();
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (std::abs(cs[j] - p.weights[j]) > tol) {
      throw std::invalid_argument("cpm: alpha column " + std::to_string(j) + " sums to " + std::to_string(cs[j]) +
                                  ", expected omega_j = " + std::to_string(p.weights[j]));
    }
  }
  const auto rs = b.row_sums();
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (std::abs(rs[i] - q.weights[i]) > tol) {
      throw std::invalid_argument("cpm: beta row " + std::to_string(i) + " sums to " + std::to_string(rs[i]) +
                                  ", expected lambda_i = " + std::to_string(q.weights[i]));
    }
  }
  for (double v : a.data) {
    if (!(v >= 0.0)) throw std::invalid_argument("cpm: alpha has a negative entry");
  }
  for (double v : b.data) {
    if (!(v >= 0.0)) throw std::invalid_argument("cpm: beta has a negative entry");
  }
}

double upper_bound_L1(const GaussianMixture& p, const GaussianMixture& q, const VariationalCoupling& c) {
  check_marginals(p, q, c);
  const auto kl = pairwise_kl(p, q);
  double s = 0.0;
  for (std::size_t k = 0; k < kl.data.size(); ++k) {
    if (c.alpha.data[k] > 0.0) s += c.alpha.data[k] * kl.data[k];
  }
  return s + coupling_kl(c.alpha, c.beta);
}

CouplingMatrix update_alpha(const GaussianMixture& p, const GaussianMixture& q, const VariationalCoupling& c) {
  const auto kl = pairwise_kl(p, q);
  CouplingMatrix alpha(q.size(), p.size());
  std::vector<double> logits(q.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double omega = p.weights[j];
    if (omega <= 0.0) continue;  // frozen component carries no mass
    for (std::size_t i = 0; i < q.size(); ++i) logits[i] = safe_log(c.beta(i, j)) - kl(i, j);
    const double lse = log_sum_exp(logits);
    if (!std::isfinite(lse)) {
      throw std::invalid_argument("cpm: beta column " + std::to_string(j) + " has no mass");
    }
    // Entries that would come out below 1e-290 are set to exactly zero (the largest share is always
    // kept). Otherwise beta can underflow to 0 under a positive alpha entry and KL(alpha || beta)
    // becomes infinite.
    const std::size_t top = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    double kept = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double share = std::exp(logits[i] - lse);
      alpha(i, j) = i == top || omega * share >= 1e-290 ? share : 0.0;
      kept += alpha(i, j);
    }
    for (std::size_t i = 0; i < q.size(); ++i) alpha(i, j) = omega * (alpha(i, j) / kept);
  }
  return alpha;
}

CouplingMatrix update_beta(const VariationalCoupling& c, const std::vector<double>& lambda) {
  const auto& a = c.alpha;
  if (lambda.size() != a.rows) throw std::invalid_argument("cpm: lambda length does not match coupling");
  CouplingMatrix beta(a.rows, a.cols);
  const auto rs = a.row_sums();
  const auto cs = a.col_sums();
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) {
      // A row of alpha without mass leaves beta's row free; spread it like the independence coupling.
      beta(i, j) = rs[i] > 0.0 ? lambda[i] * a(i, j) / rs[i] : lambda[i] * cs[j];
      // Keep beta positive under positive alpha so KL(alpha || beta) stays finite.
      if (beta(i, j) == 0.0 && a(i, j) > 0.0) beta(i, j) = std::numeric_limits<double>::denorm_min();
    }
  }
  return beta;
}

DiagGaussian p_step_closed_form(const GaussianMixture& q, const CouplingMatrix& alpha, std::size_t j) {
  if (j >= alpha.cols || alpha.rows != q.size()) throw std::invalid_argument("p_step: coupling shape mismatch");
  double mass = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) mass += alpha(i, j);
  if (!(mass > 0.0)) throw std::invalid_argument("p_step: column " + std::to_string(j) + " of alpha has no mass");
  const std::size_t d = q.dim();
  std::vector<double> precision(d, 0.0), weighted_mean(d, 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double w = alpha(i, j) / mass;
    if (w == 0.0) continue;
    const auto& qi = q.components[i];
    for (std::size_t k = 0; k < d; ++k) {
      precision[k] += w / qi.var[k];
      weighted_mean[k] += w * qi.mean[k] / qi.var[k];
    }
  }
  DiagGaussian out{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t k = 0; k < d; ++k) {
    out.var[k] = 1.0 / precision[k];
    out.mean[k] = weighted_mean[k] * out.var[k];
  }
  return out;
}

std::vector<double> weight_step(const GaussianMixture& p, const GaussianMixture& q, const VariationalCoupling& c) {
  const auto kl = pairwise_kl(p, q);
  std::vector<double> neg_cost(p.size(), kNegInf);
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double omega = p.weights[j];
    if (omega <= 0.0) continue;
    double cost = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double a = c.alpha(i, j) / omega;
      if (a <= 0.0) continue;
      cost += a * (kl(i, j) + std::log(a) - std::log(c.beta(i, j)));
    }
    neg_cost[j] = -cost;
  }
  const double lse = log_sum_exp(neg_cost);
  std::vector<double> w(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) w[j] = std::exp(neg_cost[j] - lse);
  return w;
}

CpmResult cpm_solve(const GaussianMixture& p0, const GaussianMixture& q, const CpmConfig& cfg,
                    std::optional<VariationalCoupling> init, PStepFn p_step) {
  check_shapes(p0, q);
  p0.validate();
  q.validate();
  CpmResult res;
  res.p = p0;
  if (init) {
    res.coupling = *init;
  } else {
    res.coupling = independence_coupling(p0, q);
    res.coupling.alpha = update_alpha(res.p, q, res.coupling);
    res.coupling.beta = update_beta(res.coupling, q.weights);
  }
  auto& c = res.coupling;
  double prev = upper_bound_L1(res.p, q, c);
  res.report.bound_trace.push_back(prev);

  for (int it = 1; it <= cfg.max_iters; ++it) {
    // Component step.
    if (p_step) {
      res.p = p_step(res.p, c);
    } else {
      for (std::size_t j = 0; j < res.p.size(); ++j) {
        if (res.p.weights[j] > 0.0) res.p.components[j] = p_step_closed_form(q, c.alpha, j);
      }
    }
    if (cfg.optimize_weights) {
      const auto w = weight_step(res.p, q, c);
      for (std::size_t j = 0; j < res.p.size(); ++j) {
        const double old = res.p.weights[j];
        for (std::size_t i = 0; i < q.size(); ++i) c.alpha(i, j) = old > 0.0 ? c.alpha(i, j) / old * w[j] : 0.0;
      }
      res.p.weights = w;
    }
    // Coupling step.
    c.alpha = update_alpha(res.p, q, c);
    c.beta = update_beta(c, q.weights);

    const double cur = upper_bound_L1(res.p, q, c);
    if (!std::isfinite(cur)) {
      throw std::runtime_error("cpm: bound became non-finite at iteration " + std::to_string(it));
    }
    res.report.bound_trace.push_back(cur);
    res.report.iterations = it;
    const double change = std::abs(prev - cur);
    prev = cur;
    if (change <= cfg.abs_tol || change <= cfg.rel_tol * std::abs(cur)) {
      res.report.converged = true;
      break;
    }
  }
  return res;
}

MonteCarloKl monte_carlo_kl(const GaussianMixture& p, const GaussianMixture& q, std::size_t samples,
                            std::uint64_t seed) {
  check_shapes(p, q);
  if (samples < 2) throw std::invalid_argument("monte_carlo_kl: need at least 2 samples");
  std::mt19937_64 rng(seed);
  double s = 0.0, s2 = 0.0;
  std::discrete_distribution<std::size_t> pick(p.weights.begin(), p.weights.end());
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> x(p.dim());
  for (std::size_t k = 0; k < samples; ++k) {
    const auto& comp = p.components[pick(rng)];
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = comp.mean[d] + std::sqrt(comp.var[d]) * n01(rng);
    const double v = gmm_log_pdf(p, x) - gmm_log_pdf(q, x);
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(samples);
  const double mean = s / n;
  const double var = std::max(s2 / n - mean * mean, 0.0) * n / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

}  // namespace cftraj
