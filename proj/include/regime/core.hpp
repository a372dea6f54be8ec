#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>

namespace regime {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Training data: N rows of M inputs with one scalar output each.
class ExperimentalDesign {
public:
  ExperimentalDesign(Matrix inputs, Vector outputs);

  const Matrix& inputs() const noexcept { return inputs_; }
  const Vector& outputs() const noexcept { return outputs_; }
  Eigen::Index size() const noexcept { return inputs_.rows(); }
  Eigen::Index dimension() const noexcept { return inputs_.cols(); }

  // [inputs | outputs], the space clustered by the mixture model.
  Matrix joint() const;

private:
  Matrix inputs_;
  Vector outputs_;
};

// Per-column affine map of the joint (x, y) space to zero mean and unit
// standard deviation. The last column is the output.
class Standardizer {
public:
  Standardizer(Vector means, Vector stds);

  const Vector& means() const noexcept { return means_; }
  const Vector& stds() const noexcept { return stds_; }
  Eigen::Index input_dimension() const noexcept { return means_.size() - 1; }

  // The identity map for M inputs.
  static Standardizer identity(Eigen::Index input_dim);

  Matrix standardize_inputs(const Matrix& x) const;
  Vector standardize_input(const Vector& x) const;
  Vector standardize_outputs(const Vector& y) const;
  Matrix standardize_joint(const Matrix& w) const;

  double destandardize_output(double y) const;
  double destandardize_variance(double v) const;
  Matrix destandardize_joint(const Matrix& w) const;

private:
  Vector means_;
  Vector stds_;
};

// Mean and unbiased standard deviation of every column; throws
// DegenerateDataError naming the first constant column.
Standardizer fit_standardizer(const ExperimentalDesign& ed);

// Normalized mean-square error.
double nmse(std::span<const double> y_true, std::span<const double> y_pred);
double nmse(const Vector& y_true, const Vector& y_pred);

double mae(std::span<const double> y_true, std::span<const double> y_pred);
double mae(const Vector& y_true, const Vector& y_pred);

// Independent 64-bit seed derivation (splitmix64 over the parts).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace regime
