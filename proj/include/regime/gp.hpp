#pragma once

#include "regime/core.hpp"
#include "regime/kernels.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace regime::gp {

struct TrendSpec {
  int degree = 0;  // 0: constant, 1: linear

  Eigen::Index basis_size(Eigen::Index input_dim) const { return degree == 0 ? 1 : 1 + input_dim; }
};

// Rows f(x_i)^T of the trend basis.
Matrix trend_matrix(const TrendSpec& trend, const Matrix& x);
Vector trend_vector(const TrendSpec& trend, const Eigen::Ref<const Vector>& x);

struct FitOptions {
  TrendSpec trend;
  CorrelationFamily family = CorrelationFamily::Matern52;
  CorrelationFamily categorical_family = CorrelationFamily::Gaussian;
  double log10_theta_min = -2.0;
  double log10_theta_max = 2.0;
  double nugget = 1e-8;
  bool optimize_nugget = false;
  double log10_nugget_min = -12.0;
  double log10_nugget_max = -2.0;
  double theta_cat_min = 1e-3;
  double theta_cat_max = 10.0;
  int restarts = 3;
  int evals_per_restart = 0;  // 0: 50 (d + 1) for d search dimensions

  void validate() const;
};

struct GpModel {
  TrendSpec trend;
  CorrelationFamily family = CorrelationFamily::Matern52;
  Vector lengthscales;
  double nugget = 0.0;  // effective value, including any jitter added for the factorization
  Matrix training_inputs;
  Vector training_outputs;
  Matrix F;             // n0 x p
  Matrix chol_R;        // lower factor of R + nugget I
  Vector beta_hat;
  double sigma2_hat = 0.0;
  double nll = 0.0;
  // Cached solves with R + nugget I.
  Vector weights;       // R^-1 (Y - F beta)
  Matrix Linv_F;        // chol_R^-1 F
  Matrix chol_FtRF;     // lower factor of F^T R^-1 F

  Correlation correlation() const { return {family, lengthscales}; }
};

struct CategoricalGpModel {
  GpModel base;  // continuous kernel; its factorization covers the combined correlation
  double theta_cat = 1.0;
  std::vector<int> training_labels;
};

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

struct BatchPrediction {
  Vector mean;
  Vector variance;
};

// Profile negative log-likelihood with beta and sigma^2 concentrated out.
// Throws NumericalError when R + nugget I stays indefinite after jitter.
double negative_log_likelihood(const Matrix& x, const Vector& y, const TrendSpec& trend, CorrelationFamily family,
                               const Vector& theta, double nugget);
double negative_log_likelihood_categorical(const Matrix& x, std::span<const int> labels, const Vector& y,
                                           const TrendSpec& trend, CorrelationFamily family, const Vector& theta,
                                           double theta_cat, double nugget);

// Model with fixed hyperparameters (no optimization, no deduplication).
GpModel assemble(const Matrix& x, const Vector& y, const TrendSpec& trend, CorrelationFamily family,
                 const Vector& theta, double nugget);
CategoricalGpModel assemble_categorical(const Matrix& x, std::span<const int> labels, const Vector& y,
                                        const TrendSpec& trend, CorrelationFamily family, const Vector& theta,
                                        double theta_cat, double nugget);

// Maximum-likelihood fit. Duplicate rows are merged with averaged outputs.
GpModel fit(const Matrix& x, const Vector& y, const FitOptions& opts, std::uint64_t seed);
CategoricalGpModel fit_categorical(const Matrix& x, std::span<const int> labels, const Vector& y,
                                   const FitOptions& opts, std::uint64_t seed);

GpPrediction predict(const GpModel& model, const Eigen::Ref<const Vector>& x);
GpPrediction predict_categorical(const CategoricalGpModel& model, const Eigen::Ref<const Vector>& x, int label);

// Blocked predictions; blocks of rows are distributed over threads. The
// serial reference walks the same blocks in order and agrees bit for bit.
BatchPrediction predict_batch(const GpModel& model, const Matrix& x);
BatchPrediction predict_categorical_batch(const CategoricalGpModel& model, const Matrix& x,
                                          std::span<const int> labels);

namespace reference {
BatchPrediction predict_batch(const GpModel& model, const Matrix& x);
BatchPrediction predict_categorical_batch(const CategoricalGpModel& model, const Matrix& x,
                                          std::span<const int> labels);
}

}  // namespace regime::gp
