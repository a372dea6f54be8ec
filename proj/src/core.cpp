#include "regime/core.hpp"

#include "regime/error.hpp"

#include <cmath>
#include <string>

namespace regime {

namespace {

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) {
    throw ArgumentError("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

ExperimentalDesign::ExperimentalDesign(Matrix inputs, Vector outputs)
    : inputs_(std::move(inputs)), outputs_(std::move(outputs)) {
  if (inputs_.rows() < 1 || inputs_.cols() < 1) {
    throw ArgumentError("experimental design needs at least one row and one input column");
  }
  if (inputs_.rows() != outputs_.size()) {
    throw ArgumentError("experimental design: " + std::to_string(inputs_.rows()) +
                        " input rows but " + std::to_string(outputs_.size()) + " outputs");
  }
  if (!inputs_.allFinite() || !outputs_.allFinite()) {
    throw ArgumentError("experimental design contains non-finite values");
  }
}

Matrix ExperimentalDesign::joint() const {
  Matrix w(inputs_.rows(), inputs_.cols() + 1);
  w.leftCols(inputs_.cols()) = inputs_;
  w.col(inputs_.cols()) = outputs_;
  return w;
}

Standardizer::Standardizer(Vector means, Vector stds) : means_(std::move(means)), stds_(std::move(stds)) {
  if (means_.size() != stds_.size() || means_.size() < 2) {
    throw ArgumentError("standardizer needs matching mean/std vectors of length M+1");
  }
  for (Eigen::Index j = 0; j < stds_.size(); ++j) {
    if (!(stds_[j] > 0.0) || !std::isfinite(stds_[j]) || !std::isfinite(means_[j])) {
      throw DegenerateDataError("standardizer: column " + std::to_string(j) +
                                " has non-positive or non-finite scale");
    }
  }
}

Standardizer Standardizer::identity(Eigen::Index input_dim) {
  return Standardizer(Vector::Zero(input_dim + 1), Vector::Ones(input_dim + 1));
}

Matrix Standardizer::standardize_inputs(const Matrix& x) const {
  const auto m = input_dimension();
  if (x.cols() != m) throw ArgumentError("standardize_inputs: expected " + std::to_string(m) + " columns");
  return (x.rowwise() - means_.head(m).transpose()).array().rowwise() / stds_.head(m).transpose().array();
}

Vector Standardizer::standardize_input(const Vector& x) const {
  const auto m = input_dimension();
  if (x.size() != m) throw ArgumentError("standardize_input: expected length " + std::to_string(m));
  return (x - means_.head(m)).cwiseQuotient(stds_.head(m));
}

Vector Standardizer::standardize_outputs(const Vector& y) const {
  const auto m = input_dimension();
  return (y.array() - means_[m]) / stds_[m];
}

Matrix Standardizer::standardize_joint(const Matrix& w) const {
  if (w.cols() != means_.size()) throw ArgumentError("standardize_joint: column count mismatch");
  return (w.rowwise() - means_.transpose()).array().rowwise() / stds_.transpose().array();
}

double Standardizer::destandardize_output(double y) const {
  const auto m = input_dimension();
  return y * stds_[m] + means_[m];
}

double Standardizer::destandardize_variance(double v) const {
  const auto s = stds_[input_dimension()];
  return v * s * s;
}

Matrix Standardizer::destandardize_joint(const Matrix& w) const {
  if (w.cols() != means_.size()) throw ArgumentError("destandardize_joint: column count mismatch");
  return (w.array().rowwise() * stds_.transpose().array()).matrix().rowwise() + means_.transpose();
}

Standardizer fit_standardizer(const ExperimentalDesign& ed) {
  const auto n = ed.size();
  if (n < 2) throw DegenerateDataError("fit_standardizer: need at least two rows");
  const Matrix w = ed.joint();
  Vector means = w.colwise().mean();
  Vector stds(w.cols());
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const double ss = (w.col(j).array() - means[j]).square().sum();
    stds[j] = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(stds[j] > 0.0)) {
      const std::string name =
          j == ed.dimension() ? std::string("output") : "input " + std::to_string(j);
      throw DegenerateDataError("fit_standardizer: column " + std::to_string(j) + " (" + name +
                                ") is constant");
    }
  }
  return Standardizer(std::move(means), std::move(stds));
}

double nmse(std::span<const double> y_true, std::span<const double> y_pred) {
  require_same_length(y_true.size(), y_pred.size());
  if (y_true.size() < 2) throw ArgumentError("nmse: need at least two values");
  double mean = 0.0;
  for (double y : y_true) mean += y;
  mean /= static_cast<double>(y_true.size());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    num += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
    den += (y_true[i] - mean) * (y_true[i] - mean);
  }
  if (!(den > 0.0)) throw DegenerateDataError("nmse: reference values are constant");
  return num / den;
}

double nmse(const Vector& y_true, const Vector& y_pred) { return nmse(as_span(y_true), as_span(y_pred)); }

double mae(std::span<const double> y_true, std::span<const double> y_pred) {
  require_same_length(y_true.size(), y_pred.size());
  if (y_true.empty()) throw ArgumentError("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += std::abs(y_true[i] - y_pred[i]);
  return s / static_cast<double>(y_true.size());
}

double mae(const Vector& y_true, const Vector& y_pred) { return mae(as_span(y_true), as_span(y_pred)); }

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

}  // namespace regime
