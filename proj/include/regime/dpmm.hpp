#pragma once

#include "regime/core.hpp"

#include <cstdint>
#include <vector>

namespace regime::dpmm {

// Normal-inverse-Wishart: Sigma ~ IW(scatter, dof), mu | Sigma ~ N(mean, Sigma / scale).
struct NiwParams {
  Vector mean;
  double scale = 1.0;
  double dof = 1.0;
  Matrix scatter;
};

struct DpmmConfig {
  double alpha = 1.0;    // DP concentration
  int truncation = 20;   // T
  Vector base_mean;      // empty: zeros
  double base_scale = 0.01;
  double base_dof = 0.0;  // <= 0: dimension + 2
  Matrix base_scatter;   // empty: identity
  int max_iters = 500;
  double elbo_tol = 1e-6;  // relative
  int restarts = 5;
  double prune_weight = 0.01;
  int prune_min_points = 3;

  // Copy with the dimension-dependent defaults filled in; validates.
  DpmmConfig resolved(Eigen::Index dimension) const;
  NiwParams base() const;
};

struct VariationalState {
  Matrix gamma;                  // (T-1) x 2 Beta parameters of the stick fractions
  std::vector<NiwParams> tau;    // T atom posteriors
  Matrix phi;                    // N x T responsibilities
  std::vector<double> elbo_trace;
  bool converged = false;
};

struct ClusteringResult {
  int n_clusters = 0;
  std::vector<int> labels;       // 1-based cluster ids
  Matrix responsibilities;       // N x K
  Vector weights;                // expected mixing proportions of survivors
  Matrix cluster_means;          // K x D
  std::vector<Matrix> cluster_covs;
  bool converged = false;        // false when max_iters was hit
  double elbo = 0.0;
  double max_elbo_drop = 0.0;    // largest per-sweep ELBO decrease over all restarts
};

struct FitOutput {
  VariationalState state;
  ClusteringResult result;
};

// pi_k = v_k prod_{j<k} (1 - v_j); the final entry takes the remaining mass.
Vector stick_breaking_weights(const Vector& v);

// Mean-field coordinate ascent, best of cfg.restarts initializations.
FitOutput fit(const Matrix& data, const DpmmConfig& cfg, std::uint64_t seed);

double elbo(const VariationalState& state, const Matrix& data, const DpmmConfig& cfg);

// Posterior cluster membership of a new joint point.
Vector predict_responsibility(const ClusteringResult& result, const Vector& w);

// Building blocks of the coordinate ascent, exposed for testing.
VariationalState initial_state(const Matrix& data, const DpmmConfig& cfg, std::uint64_t seed);
void update_phi(VariationalState& state, const Matrix& data, const DpmmConfig& cfg);
void update_gamma(VariationalState& state, const DpmmConfig& cfg);
void update_tau(VariationalState& state, const Matrix& data, const DpmmConfig& cfg);

// KL(q || p) between two Normal-inverse-Wishart laws.
double niw_kl(const NiwParams& q, const NiwParams& p);

// E_q[log N(w_i | mu_t, Sigma_t)], N x T. The parallel version splits rows.
Matrix expected_log_likelihood(const Matrix& data, const std::vector<NiwParams>& tau);
namespace reference {
Matrix expected_log_likelihood(const Matrix& data, const std::vector<NiwParams>& tau);
}

// E_q[log pi_t] for t = 1..T under the truncated stick.
Vector expected_log_stick(const Matrix& gamma);

}  // namespace regime::dpmm
