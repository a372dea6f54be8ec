#include "regime/kernels.hpp"

#include "regime/error.hpp"

namespace regime {

void require_positive_lengthscales(const Eigen::Ref<const Vector>& theta) {
  for (Eigen::Index l = 0; l < theta.size(); ++l) {
    if (!(theta[l] > 0.0) || !std::isfinite(theta[l])) {
      throw ArgumentError("lengthscale " + std::to_string(l) + " must be positive and finite");
    }
  }
}

double gaussian_kernel(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                       const Eigen::Ref<const Vector>& theta, GaussianConvention convention) {
  if (a.size() != b.size() || a.size() != theta.size()) {
    throw ArgumentError("gaussian_kernel: dimension mismatch");
  }
  double s = 0.0;
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    if (!(theta[l] > 0.0)) throw ArgumentError("gaussian_kernel: lengthscales must be positive");
    const double scale = convention == GaussianConvention::Printed ? theta[l] * theta[l] : theta[l];
    const double h = (a[l] - b[l]) / scale;
    s += h * h;
  }
  return std::exp(-0.5 * s);
}

double matern52(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                const Eigen::Ref<const Vector>& theta) {
  if (a.size() != b.size() || a.size() != theta.size()) {
    throw ArgumentError("matern52: dimension mismatch");
  }
  static const double kSqrt5 = std::sqrt(5.0);
  double poly = 1.0;
  double expo = 0.0;
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    if (!(theta[l] > 0.0)) throw ArgumentError("matern52: lengthscales must be positive");
    const double h = std::abs(a[l] - b[l]) / theta[l];
    poly *= 1.0 + kSqrt5 * h + (5.0 / 3.0) * h * h;
    expo += kSqrt5 * h;
  }
  return poly * std::exp(-expo);
}

double categorical_correlation(int l1, int l2, double theta_cat) {
  if (!(theta_cat > 0.0)) throw ArgumentError("categorical_correlation: theta_cat must be positive");
  if (l1 == l2) return 1.0;
  return std::exp(-0.5 / (theta_cat * theta_cat));
}

}  // namespace regime
