#pragma once

// Congestion pattern matching: a variational upper bound on KL(P || Q) between two diagonal
// Gaussian mixtures, minimised by alternating component, weight and coupling updates.
//
//   L1 = sum_ij alpha_ij KL(p_j || q_i) + KL(alpha || beta)
//
// with alpha's column sums fixed to P's weights and beta's row sums fixed to Q's weights.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "cftraj/gaussian.hpp"

namespace cftraj {

/// Row-major M_Q x M_P matrix.
struct CouplingMatrix {
  std::size_t rows = 0;  // M_Q
  std::size_t cols = 0;  // M_P
  std::vector<double> data;

  CouplingMatrix() = default;
  CouplingMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::vector<double> row_sums() const;
  std::vector<double> col_sums() const;
  bool operator==(const CouplingMatrix&) const = default;
};

struct VariationalCoupling {
  CouplingMatrix alpha;
  CouplingMatrix beta;
};

struct CpmReport {
  std::vector<double> bound_trace;
  int iterations = 0;
  bool converged = false;
};

struct CpmConfig {
  int max_iters = 200;
  double rel_tol = 1e-6;
  double abs_tol = 1e-12;
  /// Also re-fit P's mixture weights with alpha's column-conditionals held fixed.
  bool optimize_weights = true;
};

struct CpmResult {
  GaussianMixture p;
  VariationalCoupling coupling;
  CpmReport report;
};

/// KL(p_j || q_i) for all pairs, as an M_Q x M_P matrix.
CouplingMatrix pairwise_kl(const GaussianMixture& p, const GaussianMixture& q);

/// alpha = beta = lambda omega^T.
VariationalCoupling independence_coupling(const GaussianMixture& p, const GaussianMixture& q);

/// Entrywise KL over the joint table with 0 log(0/x) = 0.
double coupling_kl(const CouplingMatrix& alpha, const CouplingMatrix& beta);

/// Throws std::invalid_argument if the coupling's marginals disagree with the mixtures' weights.
void check_marginals(const GaussianMixture& p, const GaussianMixture& q, const VariationalCoupling& c,
                     double tol = 1e-8);

double upper_bound_L1(const GaussianMixture& p, const GaussianMixture& q, const VariationalCoupling& c);

/// Closed-form alpha given beta (log-domain). Throws if a column of beta carries no mass.
CouplingMatrix update_alpha(const GaussianMixture& p, const GaussianMixture& q, const VariationalCoupling& c);
/// Closed-form beta given alpha.
CouplingMatrix update_beta(const VariationalCoupling& c, const std::vector<double>& lambda);

/// Minimiser over p_j of sum_i alpha_ij KL(p_j || q_i): precision-weighted geometric mean.
DiagGaussian p_step_closed_form(const GaussianMixture& q, const CouplingMatrix& alpha, std::size_t j);

/// Minimiser over P's weights with alpha_ij / omega_j and beta held fixed. Returns new weights.
std::vector<double> weight_step(const GaussianMixture& p, const GaussianMixture& q, const VariationalCoupling& c);

/// Caller-supplied component update used in coupled (gradient) mode.
using PStepFn = std::function<GaussianMixture(const GaussianMixture&, const VariationalCoupling&)>;

/// Algorithm loop. The coupling starts at the independence coupling followed by one
/// alpha/beta update against `p0` unless `init` is given.
CpmResult cpm_solve(const GaussianMixture& p0, const GaussianMixture& q, const CpmConfig& cfg = {},
                    std::optional<VariationalCoupling> init = std::nullopt, PStepFn p_step = {});

struct MonteCarloKl {
  double estimate = 0.0;
  double standard_error = 0.0;
};

/// Monte-Carlo estimate of KL(P || Q) from samples of P.
MonteCarloKl monte_carlo_kl(const GaussianMixture& p, const GaussianMixture& q, std::size_t samples,
                            std::uint64_t seed);

}  // namespace cftraj
