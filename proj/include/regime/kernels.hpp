#pragma once

#include "regime/core.hpp"

#include <cmath>

namespace regime {

// How the Gaussian classification kernel uses its lengthscales.
//   Printed:      exp(-1/2 sum ((a_l - b_l) / theta_l^2)^2)
//   Conventional: exp(-1/2 sum ((a_l - b_l) / theta_l)^2)
enum class GaussianConvention { Printed, Conventional };

double gaussian_kernel(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                       const Eigen::Ref<const Vector>& theta,
                       GaussianConvention convention = GaussianConvention::Printed);

// Anisotropic Matern-5/2 correlation, a product of one-dimensional factors.
double matern52(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                const Eigen::Ref<const Vector>& theta);

// Compound-symmetry correlation embedded in a Gaussian kernel: 1 within a
// class, exp(-1/(2 theta_cat^2)) across classes.
double categorical_correlation(int l1, int l2, double theta_cat);

enum class CorrelationFamily { Matern52, Gaussian };

// Stateless correlation functor used by the regression module.
struct Correlation {
  CorrelationFamily family = CorrelationFamily::Matern52;
  Vector theta;

  double operator()(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) const {
    return family == CorrelationFamily::Matern52
               ? matern52(a, b, theta)
               : gaussian_kernel(a, b, theta, GaussianConvention::Conventional);
  }
};

void require_positive_lengthscales(const Eigen::Ref<const Vector>& theta);

// Dense matrix assembly. The OpenMP versions split rows across threads; each
// entry is computed exactly as in the serial reference, so results agree
// bit for bit.
namespace reference {

template <class Kernel>
Matrix gram_matrix(const Matrix& x, const Kernel& k) {
  const Eigen::Index n = x.rows();
  Matrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i, i) = k(x.row(i).transpose(), x.row(i).transpose());
    for (Eigen::Index j = 0; j < i; ++j) {
      g(i, j) = k(x.row(i).transpose(), x.row(j).transpose());
      g(j, i) = g(i, j);
    }
  }
  return g;
}

template <class Kernel>
Matrix cross_matrix(const Matrix& a, const Matrix& b, const Kernel& k) {
  Matrix g(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) g(i, j) = k(a.row(i).transpose(), b.row(j).transpose());
  }
  return g;
}

}  // namespace reference

template <class Kernel>
Matrix gram_matrix(const Matrix& x, const Kernel& k) {
  const Eigen::Index n = x.rows();
  Matrix g(n, n);
#pragma omp parallel for schedule(dynamic, 16) if (n > 128)
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) g(i, j) = k(x.row(i).transpose(), x.row(j).transpose());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) g(j, i) = g(i, j);
  }
  return g;
}

template <class Kernel>
Matrix cross_matrix(const Matrix& a, const Matrix& b, const Kernel& k) {
  Matrix g(a.rows(), b.rows());
#pragma omp parallel for schedule(static) if (a.rows() * b.rows() > 16384)
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) g(i, j) = k(a.row(i).transpose(), b.row(j).transpose());
  }
  return g;
}

}  // namespace regime
