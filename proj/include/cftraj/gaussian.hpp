#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

namespace cftraj {

inline constexpr double kVarianceFloor = 1e-6;

/// Diagonal-covariance Gaussian.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> var;

  std::size_t dim() const { return mean.size(); }
  double log_pdf(const std::vector<double>& x) const;
  bool operator==(const DiagGaussian&) const = default;
};

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<DiagGaussian> components;

  std::size_t size() const { return components.size(); }
  std::size_t dim() const { return components.empty() ? 0 : components.front().dim(); }
  std::vector<double> mean() const;

  /// Throws std::invalid_argument when weights are off the simplex or shapes disagree.
  void validate() const;

  nlohmann::json to_json() const;
  static GaussianMixture from_json(const nlohmann::json& j);

  bool operator==(const GaussianMixture&) const = default;
};

double gaussian_kl(const DiagGaussian& p, const DiagGaussian& q);
double gaussian_cross_entropy(const DiagGaussian& p, const DiagGaussian& q);
double gaussian_entropy(const DiagGaussian& p);

double gmm_log_pdf(const GaussianMixture& m, const std::vector<double>& x);
std::vector<double> gmm_sample(const GaussianMixture& m, std::mt19937_64& rng);
/// Posterior component probabilities of `x`; sums to 1.
std::vector<double> gmm_responsibilities(const GaussianMixture& m, const std::vector<double>& x);

double log_sum_exp(const std::vector<double>& v);

enum class EmMode { batch, stochastic };

struct EmOptions {
  std::size_t components = 1;
  std::uint64_t seed = 0;
  int max_iters = 200;
  EmMode mode = EmMode::batch;
  double tol = 1e-10;            // relative log-likelihood change for early stop (batch)
  std::size_t minibatch = 256;   // stochastic mode
};

struct EmResult {
  GaussianMixture mixture;
  std::vector<double> log_likelihood;  // total training log-likelihood per E-step
};
/// EM for a diagonal mixture. Means start at distinct samples drawn k-means++ style, variances at the data
/// EM for a diagonal mixture. Means start at distinct random samples, variances at the data
/// variance, weights uniform. All-identical data yields one effective component.
EmResult fit_em(const std::vector<std::vector<double>>& samples, const EmOptions& opts);

}  // namespace cftraj
