#pragma once

#include "regime/core.hpp"

#include <string_view>
#include <vector>

namespace regime {

enum class Family { Gaussian, Lognormal, Gumbel };

std::string_view to_string(Family f);
Family family_from_string(std::string_view name);

// A marginal given by its mean and coefficient of variation; native
// parameters follow from exact moment matching.
class MarginalDistribution {
public:
  MarginalDistribution(Family family, double mean, double cov);

  Family family() const noexcept { return family_; }
  double mean() const noexcept { return mean_; }
  double cov() const noexcept { return cov_; }
  double stddev() const noexcept { return cov_ * std::abs(mean_); }

  // Gumbel scale and location; meaningful for Family::Gumbel only.
  double gumbel_scale() const;
  double gumbel_location() const;
  // Parameters of the underlying normal for Family::Lognormal.
  double log_mu() const;
  double log_sigma() const;

private:
  Family family_;
  double mean_;
  double cov_;
};

// Quantile function; u must lie strictly inside (0, 1).
double inverse_cdf(const MarginalDistribution& dist, double u);

// Independent marginals, one per input dimension.
class InputModel {
public:
  explicit InputModel(std::vector<MarginalDistribution> marginals);

  const std::vector<MarginalDistribution>& marginals() const noexcept { return marginals_; }
  int dimension() const noexcept { return static_cast<int>(marginals_.size()); }

  // Maps each row of a unit-hypercube design through the marginal quantiles.
  Matrix transform(const Matrix& unit) const;

private:
  std::vector<MarginalDistribution> marginals_;
};

}  // namespace regime
