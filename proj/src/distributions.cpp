#include "regime/distributions.hpp"

#include "regime/error.hpp"

#include <boost/math/constants/constants.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <string>

namespace regime {

std::string_view to_string(Family f) {
  switch (f) {
    case Family::Gaussian: return "gaussian";
    case Family::Lognormal: return "lognormal";
    case Family::Gumbel: return "gumbel";
  }
  return "unknown";
}

Family family_from_string(std::string_view name) {
  if (name == "gaussian") return Family::Gaussian;
  if (name == "lognormal") return Family::Lognormal;
  if (name == "gumbel") return Family::Gumbel;
  throw ArgumentError("unknown distribution family '" + std::string(name) + "'");
}

MarginalDistribution::MarginalDistribution(Family family, double mean, double cov)
    : family_(family), mean_(mean), cov_(cov) {
  if (!std::isfinite(mean) || !std::isfinite(cov) || !(cov > 0.0)) {
    throw ArgumentError("marginal distribution: coefficient of variation must be positive and finite");
  }
  if (family == Family::Lognormal && !(mean > 0.0)) {
    throw ArgumentError("marginal distribution: lognormal mean must be positive");
  }
  if (mean == 0.0) {
    throw ArgumentError("marginal distribution: zero mean leaves the standard deviation undefined");
  }
}

double MarginalDistribution::gumbel_scale() const {
  return stddev() * std::sqrt(6.0) / boost::math::constants::pi<double>();
}

double MarginalDistribution::gumbel_location() const {
  return mean_ - boost::math::constants::euler<double>() * gumbel_scale();
}

double MarginalDistribution::log_sigma() const { return std::sqrt(std::log1p(cov_ * cov_)); }

double MarginalDistribution::log_mu() const {
  const double s = log_sigma();
  return std::log(mean_) - 0.5 * s * s;
}

double inverse_cdf(const MarginalDistribution& dist, double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw ArgumentError("inverse_cdf: u must lie in (0, 1), got " + std::to_string(u));
  }
  static const boost::math::normal_distribution<double> standard;
  switch (dist.family()) {
    case Family::Gaussian:
      return dist.mean() + dist.stddev() * boost::math::quantile(standard, u);
    case Family::Lognormal:
      return std::exp(dist.log_mu() + dist.log_sigma() * boost::math::quantile(standard, u));
    case Family::Gumbel:
      return dist.gumbel_location() - dist.gumbel_scale() * std::log(-std::log(u));
  }
  throw ArgumentError("inverse_cdf: unknown family");
}

InputModel::InputModel(std::vector<MarginalDistribution> marginals) : marginals_(std::move(marginals)) {
  if (marginals_.empty()) throw ArgumentError("input model needs at least one marginal");
}

Matrix InputModel::transform(const Matrix& unit) const {
  if (unit.cols() != dimension()) {
    throw ArgumentError("input model: design has " + std::to_string(unit.cols()) +
                        " columns, model has " + std::to_string(dimension()));
  }
  Matrix out(unit.rows(), unit.cols());
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    for (Eigen::Index j = 0; j < unit.cols(); ++j) {
      out(i, j) = inverse_cdf(marginals_[static_cast<std::size_t>(j)], unit(i, j));
    }
  }
  return out;
}

}  // namespace regime
