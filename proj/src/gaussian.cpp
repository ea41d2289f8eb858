#include "cftraj/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace cftraj {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

void check_dims(const DiagGaussian& p, const DiagGaussian& q) {
  if (p.dim() != q.dim() || p.var.size() != p.dim() || q.var.size() != q.dim()) {
    throw std::invalid_argument("Gaussian dimension mismatch: " + std::to_string(p.dim()) + " vs " +
                                std::to_string(q.dim()));
  }
}

}  // namespace

double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double DiagGaussian::log_pdf(const std::vector<double>& x) const {
  if (x.size() != dim()) throw std::invalid_argument("log_pdf: dimension mismatch");
  double s = 0.0;
  for (std::size_t d = 0; d < dim(); ++d) {
    const double r = x[d] - mean[d];
    s += kLog2Pi + std::log(var[d]) + r * r / var[d];
  }
  return -0.5 * s;
}

std::vector<double> GaussianMixture::mean() const {
  std::vector<double> m(dim(), 0.0);
  for (std::size_t k = 0; k < size(); ++k) {
    for (std::size_t d = 0; d < dim(); ++d) m[d] += weights[k] * components[k].mean[d];
  }
  return m;
}

void GaussianMixture::validate() const {
  if (components.empty() || weights.size() != components.size()) {
    throw std::invalid_argument("mixture: weights/components size mismatch");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("mixture: negative or NaN weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture: weights do not sum to 1");
  const auto d = dim();
  for (const auto& c : components) {
    if (c.mean.size() != d || c.var.size() != d) throw std::invalid_argument("mixture: component dimension mismatch");
    for (double v : c.var) {
      if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("mixture: variance must be positive");
    }
  }
}

nlohmann::json GaussianMixture::to_json() const {
  nlohmann::json means = nlohmann::json::array(), vars = nlohmann::json::array();
  for (const auto& c : components) {
    means.push_back(c.mean);
    vars.push_back(c.var);
  }
  return {{"weights", weights}, {"means", means}, {"vars", vars}};
}

GaussianMixture GaussianMixture::from_json(const nlohmann::json& j) {
  GaussianMixture m;
  m.weights = j.at("weights").get<std::vector<double>>();
  const auto means = j.at("means").get<std::vector<std::vector<double>>>();
  const auto vars = j.at("vars").get<std::vector<std::vector<double>>>();
  if (means.size() != m.weights.size() || vars.size() != m.weights.size()) {
    throw std::invalid_argument("mixture JSON: weights, means and vars must have equal length");
  }
  for (std::size_t k = 0; k < means.size(); ++k) m.components.push_back({means[k], vars[k]});
  m.validate();
  return m;
}

double gaussian_kl(const DiagGaussian& p, const DiagGaussian& q) {
  check_dims(p, q);
  double s = 0.0;
  for (std::size_t d = 0; d < p.dim(); ++d) {
    const double r = p.mean[d] - q.mean[d];
    const double ratio = p.var[d] / q.var[d];
    // ratio - 1 - log(ratio) >= 0 term by term.
    s += ratio - 1.0 - std::log(ratio) + r * r / q.var[d];
  }
  return std::max(0.5 * s, 0.0);
}

double gaussian_cross_entropy(const DiagGaussian& p, const DiagGaussian& q) {
  check_dims(p, q);
  double s = 0.0;
  for (std::size_t d = 0; d < p.dim(); ++d) {
    const double r = p.mean[d] - q.mean[d];
    s += kLog2Pi + std::log(q.var[d]) + (p.var[d] + r * r) / q.var[d];
  }
  return 0.5 * s;
}

double gaussian_entropy(const DiagGaussian& p) {
  double s = 0.0;
  for (double v : p.var) s += kLog2Pi + 1.0 + std::log(v);
  return 0.5 * s;
}

double gmm_log_pdf(const GaussianMixture& m, const std::vector<double>& x) {
  std::vector<double> terms(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    terms[k] = std::log(m.weights[k]) + m.components[k].log_pdf(x);
  }
  return log_sum_exp(terms);
}

std::vector<double> gmm_responsibilities(const GaussianMixture& m, const std::vector<double>& x) {
  std::vector<double> terms(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    terms[k] = std::log(m.weights[k]) + m.components[k].log_pdf(x);
  }
  const double lse = log_sum_exp(terms);
  for (auto& t : terms) t = std::exp(t - lse);
  return terms;
}

std::vector<double> gmm_sample(const GaussianMixture& m, std::mt19937_64& rng) {
  std::discrete_distribution<std::size_t> pick(m.weights.begin(), m.weights.end());
  const auto& c = m.components[pick(rng)];
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> x(c.dim());
  for (std::size_t d = 0; d < c.dim(); ++d) x[d] = c.mean[d] + std::sqrt(c.var[d]) * n01(rng);
  return x;
}

namespace {

struct Stats {
  std::vector<double> n;                     // per component
  std::vector<std::vector<double>> sx, sxx;  // per component, per dim
};

Stats zero_stats(std::size_t k, std::size_t d) {
  return {std::vector<double>(k, 0.0), std::vector<std::vector<double>>(k, std::vector<double>(d, 0.0)),
          std::vector<std::vector<double>>(k, std::vector<double>(d, 0.0))};
}

// E-step over the given sample indices; returns total log-likelihood and accumulates stats.
double e_step(const GaussianMixture& m, const std::vector<std::vector<double>>& samples,
              const std::vector<std::size_t>& idx, Stats& st) {
  const std::size_t k = m.size(), d = m.dim();
  std::vector<double> logw(k);
  for (std::size_t c = 0; c < k; ++c) logw[c] = std::log(m.weights[c]);
  std::vector<double> terms(k);
  double ll = 0.0;
  for (std::size_t i : idx) {
    const auto& x = samples[i];
    for (std::size_t c = 0; c < k; ++c) terms[c] = logw[c] + m.components[c].log_pdf(x);
    const double lse = log_sum_exp(terms);
    ll += lse;
    for (std::size_t c = 0; c < k; ++c) {
      const double r = std::exp(terms[c] - lse);
      if (r == 0.0) continue;
      st.n[c] += r;
      for (std::size_t j = 0; j < d; ++j) {
        st.sx[c][j] += r * x[j];
        st.sxx[c][j] += r * x[j] * x[j];
      }
    }
  }
  return ll;
}

void m_step(GaussianMixture& m, const Stats& st, double total) {
  const std::size_t k = m.size(), d = m.dim();
  for (std::size_t c = 0; c < k; ++c) {
    m.weights[c] = st.n[c] / total;
    if (st.n[c] <= 1e-300) continue;  // empty component keeps its shape, weight 0
    auto& comp = m.components[c];
    for (std::size_t j = 0; j < d; ++j) {
      const double mu = st.sx[c][j] / st.n[c];
      comp.mean[j] = mu;
      comp.var[j] = std::max(st.sxx[c][j] / st.n[c] - mu * mu, kVarianceFloor);
    }
  }
  const double s = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
  for (auto& w : m.weights) w /= s;
}

// Batch E-step storing responsibilities row-major (N x K); returns the log-likelihood.
double e_step_resp(const GaussianMixture& m, const std::vector<std::vector<double>>& samples,
                   std::vector<double>& resp) {
  const std::size_t k = m.size();
  resp.assign(samples.size() * k, 0.0);
  std::vector<double> logw(k), terms(k);
  for (std::size_t c = 0; c < k; ++c) logw[c] = std::log(m.weights[c]);
  double ll = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c) terms[c] = logw[c] + m.components[c].log_pdf(samples[i]);
    const double lse = log_sum_exp(terms);
    ll += lse;
    for (std::size_t c = 0; c < k; ++c) resp[i * k + c] = std::exp(terms[c] - lse);
  }
  return ll;
}

// Two-pass weighted mean/variance M-step.
void m_step_resp(GaussianMixture& m, const std::vector<std::vector<double>>& samples,
                 const std::vector<double>& resp) {
  const std::size_t k = m.size(), d = m.dim(), N = samples.size();
  for (std::size_t c = 0; c < k; ++c) {
    double nk = 0.0;
    for (std::size_t i = 0; i < N; ++i) nk += resp[i * k + c];
    m.weights[c] = nk / static_cast<double>(N);
    if (nk <= 1e-300) continue;
    auto& comp = m.components[c];
    std::vector<double> mu(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      const double r = resp[i * k + c];
      for (std::size_t j = 0; j < d; ++j) mu[j] += r * samples[i][j];
    }
    for (auto& v : mu) v /= nk;
    for (std::size_t i = 0; i < N; ++i) {
      const double r = resp[i * k + c];
      for (std::size_t j = 0; j < d; ++j) {
        const double e = samples[i][j] - mu[j];
        var[j] += r * e * e;
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      comp.mean[j] = mu[j];
      comp.var[j] = std::max(var[j] / nk, kVarianceFloor);
    }
  }
  const double s = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
  for (auto& w : m.weights) w /= s;
}

}  // namespace

EmResult fit_em(const std::vector<std::vector<double>>& samples, const EmOptions& opts) {
  const std::size_t M = opts.components;
  if (M < 1) throw std::invalid_argument("fit_em: need at least one component");
  if (samples.size() < M) throw std::invalid_argument("fit_em: fewer samples than components");
  const std::size_t d = samples.front().size();
  for (const auto& s : samples) {
    if (s.size() != d) throw std::invalid_argument("fit_em: inconsistent sample dimension");
  }
  const std::size_t N = samples.size();

  std::vector<double> mu(d, 0.0), var(d, 0.0);
  for (const auto& s : samples) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += s[j];
  }
  for (auto& v : mu) v /= static_cast<double>(N);
  for (const auto& s : samples) {
    for (std::size_t j = 0; j < d; ++j) var[j] += (s[j] - mu[j]) * (s[j] - mu[j]);
  }
  for (auto& v : var) v = std::max(v / static_cast<double>(N), kVarianceFloor);

  EmResult out;
  GaussianMixture& m = out.mixture;

  const bool degenerate =
      std::all_of(samples.begin(), samples.end(), [&](const auto& s) { return s == samples.front(); });
  if (degenerate) {
    m.weights.assign(M, 0.0);
    m.weights[0] = 1.0;
    m.components.assign(M, DiagGaussian{samples.front(), std::vector<double>(d, kVarianceFloor)});
    return out;
  }

  std::mt19937_64 rng(opts.seed);
  // Initial means: distinct samples picked k-means++ style, each with probability proportional to
  // its squared distance from the nearest mean already chosen.
  auto dist2 = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (samples[a][j] - samples[b][j]) * (samples[a][j] - samples[b][j]);
    return s;
  };
  std::vector<std::size_t> chosen{std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)};
  std::vector<double> nearest(N);
  for (std::size_t i = 0; i < N; ++i) nearest[i] = dist2(i, chosen[0]);
  while (chosen.size() < M) {
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    if (!(total > 0.0)) {
      chosen.push_back(chosen.back());  // fewer distinct points than components
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double r = u(rng);
    std::size_t pick = N;
    for (std::size_t i = 0; i < N; ++i) {
      if (nearest[i] <= 0.0) continue;
      pick = i;
      r -= nearest[i];
      if (r < 0.0) break;
    }
    chosen.push_back(pick);
    for (std::size_t i = 0; i < N; ++i) nearest[i] = std::min(nearest[i], dist2(i, pick));
  }
  m.weights.assign(M, 1.0 / static_cast<double>(M));
  for (std::size_t c = 0; c < M; ++c) m.components.push_back({samples[chosen[c]], var});

  std::vector<std::size_t> all(N);
  std::iota(all.begin(), all.end(), 0);

  if (opts.mode == EmMode::batch) {
    std::vector<double> resp;
    for (int it = 0; it < opts.max_iters; ++it) {
      const double ll = e_step_resp(m, samples, resp);
      out.log_likelihood.push_back(ll);
      const auto L = out.log_likelihood.size();
      if (L >= 2 && std::abs(ll - out.log_likelihood[L - 2]) <= opts.tol * std::abs(ll)) break;
      m_step_resp(m, samples, resp);
    }
    return out;
  }

  // Stochastic: minibatch E-step with Robbins-Monro averaging of sufficient statistics.
  Stats running = zero_stats(M, d);
  const std::size_t B = std::min(opts.minibatch, N);
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  for (int it = 0; it < opts.max_iters; ++it) {
    std::vector<std::size_t> batch(B);
    for (auto& b : batch) b = pick(rng);
    Stats st = zero_stats(M, d);
    e_step(m, samples, batch, st);
    // rho = 1 on the first step, so the first minibatch replaces the empty statistics.
    const double rho = std::pow(static_cast<double>(it) + 1.0, -0.6);
    for (std::size_t c = 0; c < M; ++c) {
      running.n[c] = (1 - rho) * running.n[c] + rho * st.n[c] / static_cast<double>(B);
      for (std::size_t j = 0; j < d; ++j) {
        running.sx[c][j] = (1 - rho) * running.sx[c][j] + rho * st.sx[c][j] / static_cast<double>(B);
        running.sxx[c][j] = (1 - rho) * running.sxx[c][j] + rho * st.sxx[c][j] / static_cast<double>(B);
      }
    }
    m_step(m, running, 1.0);
    Stats scratch = zero_stats(M, d);
    out.log_likelihood.push_back(e_step(m, samples, all, scratch));
  }
  return out;
}

}  // namespace cftraj
