#include "regime/gp.hpp"

#include "regime/error.hpp"
#include "regime/optim.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <string>

namespace regime::gp {

namespace {

constexpr double kMaxJitter = 1e-4;
constexpr double kSigma2Floor = 1e-300;

void check_inputs(const Matrix& x, const Vector& y) {
  if (x.rows() != y.size()) throw ArgumentError("gp: input and output row counts differ");
  if (x.rows() == 0 || x.cols() == 0) throw ArgumentError("gp: empty training set");
  if (!x.allFinite() || !y.allFinite()) throw ArgumentError("gp: non-finite training data");
}

void check_theta(const Vector& theta, Eigen::Index m) {
  if (theta.size() != m) {
    throw ArgumentError("gp: expected " + std::to_string(m) + " lengthscales, got " + std::to_string(theta.size()));
  }
  require_positive_lengthscales(theta);
}

// Fills the factorization fields of `model` from the correlation matrix R.
void factorize(GpModel& model, Matrix r, double nugget) {
  if (!(nugget >= 0.0)) throw ArgumentError("gp: nugget must be non-negative");
  const Eigen::Index n = r.rows();
  double eff = nugget;
  Eigen::LLT<Matrix> llt;
  for (;;) {
    Matrix k = r;
    k.diagonal().array() += eff;
    llt.compute(k);
    if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 0.0) break;
    eff = eff <= 0.0 ? 1e-10 : eff * 10.0;
    if (eff > kMaxJitter * (1.0 + 1e-12)) {
      throw NumericalError("gp: correlation matrix (n=" + std::to_string(n) +
                           ") is not positive definite even with jitter 1e-4");
    }
  }
  if (eff != nugget) spdlog::debug("gp: jitter raised nugget from {:g} to {:g}", nugget, eff);
  model.nugget = eff;
  model.chol_R = llt.matrixL();
  const auto L = model.chol_R.triangularView<Eigen::Lower>();
  model.Linv_F = L.solve(model.F);
  const Matrix a = model.Linv_F.transpose() * model.Linv_F;
  Eigen::LLT<Matrix> a_llt(a);
  if (a_llt.info() != Eigen::Success) {
    throw NumericalError("gp: trend design F^T R^-1 F is singular; the trend is not identifiable from these inputs");
  }
  model.chol_FtRF = a_llt.matrixL();
  const Vector linv_y = L.solve(model.training_outputs);
  model.beta_hat = a_llt.solve(model.Linv_F.transpose() * linv_y);
  const Vector linv_resid = linv_y - model.Linv_F * model.beta_hat;
  model.weights = model.chol_R.transpose().triangularView<Eigen::Upper>().solve(linv_resid);
  const double nn = static_cast<double>(n);
  model.sigma2_hat = std::max(linv_resid.squaredNorm() / nn, kSigma2Floor);
  const double log_det = 2.0 * model.chol_R.diagonal().array().log().sum();
  model.nll = 0.5 * nn * std::log(model.sigma2_hat) + 0.5 * log_det +
              0.5 * nn * (1.0 + std::log(2.0 * std::numbers::pi));
}

GpModel make_model(const Matrix& x, const Vector& y, const TrendSpec& trend, CorrelationFamily family,
                   const Vector& theta) {
  check_inputs(x, y);
  check_theta(theta, x.cols());
  if (trend.degree != 0 && trend.degree != 1) throw ArgumentError("gp: trend degree must be 0 or 1");
  const Eigen::Index p = trend.basis_size(x.cols());
  if (x.rows() <= p) {
    throw IdentifiabilityError("gp: " + std::to_string(x.rows()) + " points cannot identify a trend with " +
                               std::to_string(p) + " coefficients");
  }
  GpModel m;
  m.trend = trend;
  m.family = family;
  m.lengthscales = theta;
  m.training_inputs = x;
  m.training_outputs = y;
  m.F = trend_matrix(trend, x);
  return m;
}

Matrix categorical_gram(const Matrix& x, std::span<const int> labels, const Correlation& k, double theta_cat) {
  Matrix r = gram_matrix(x, k);
  const double cross = categorical_correlation(1, 2, theta_cat);
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      if (labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(j)]) r(i, j) *= cross;
    }
  }
  return r;
}

GpPrediction predict_with(const GpModel& model, const Vector& r, const Eigen::Ref<const Vector>& x) {
  const auto L = model.chol_R.triangularView<Eigen::Lower>();
  const Vector f = trend_vector(model.trend, x);
  GpPrediction out;
  out.mean = f.dot(model.beta_hat) + r.dot(model.weights);
  const Vector v = L.solve(r);
  const Vector u = model.Linv_F.transpose() * v - f;
  const Vector z = model.chol_FtRF.triangularView<Eigen::Lower>().solve(u);
  out.variance = std::max(0.0, model.sigma2_hat * (1.0 - v.squaredNorm() + z.squaredNorm()));
  return out;
}

struct Dedup {
  Matrix x;
  Vector y;
  std::vector<int> labels;
};

// Merges repeated (x, label) rows, averaging their outputs; keeps the order of
// first occurrence.
Dedup deduplicate(const Matrix& x, std::span<const int> labels, const Vector& y) {
  std::map<std::pair<std::vector<double>, int>, std::size_t> index;
  std::vector<Eigen::Index> first;
  std::vector<double> sum;
  std::vector<int> count;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> key(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) key[static_cast<std::size_t>(c)] = x(i, c);
    const int lab = labels.empty() ? 0 : labels[static_cast<std::size_t>(i)];
    auto [it, inserted] = index.try_emplace({std::move(key), lab}, first.size());
    if (inserted) {
      first.push_back(i);
      sum.push_back(y[i]);
      count.push_back(1);
    } else {
      sum[it->second] += y[i];
      ++count[it->second];
    }
  }
  Dedup d;
  const auto n = static_cast<Eigen::Index>(first.size());
  if (n != x.rows()) spdlog::debug("gp: merged {} duplicate rows", x.rows() - n);
  d.x.resize(n, x.cols());
  d.y.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    d.x.row(k) = x.row(first[kk]);
    d.y[k] = sum[kk] / count[kk];
    if (!labels.empty()) d.labels.push_back(labels[static_cast<std::size_t>(first[kk])]);
  }
  return d;
}

optim::OptimConfig search_config(const FitOptions& opts, int n_theta, bool with_cat, std::uint64_t seed) {
  const int dim = n_theta + (with_cat ? 1 : 0) + (opts.optimize_nugget ? 1 : 0);
  optim::OptimConfig cfg;
  cfg.lower.resize(dim);
  cfg.upper.resize(dim);
  cfg.lower.head(n_theta).setConstant(opts.log10_theta_min);
  cfg.upper.head(n_theta).setConstant(opts.log10_theta_max);
  int at = n_theta;
  if (with_cat) {
    cfg.lower[at] = std::log10(opts.theta_cat_min);
    cfg.upper[at] = std::log10(opts.theta_cat_max);
    ++at;
  }
  if (opts.optimize_nugget) {
    cfg.lower[at] = opts.log10_nugget_min;
    cfg.upper[at] = opts.log10_nugget_max;
  }
  cfg.max_evals = opts.evals_per_restart > 0 ? opts.evals_per_restart : 50 * (dim + 1);
  cfg.population = std::min(optim::default_population(dim), cfg.max_evals);
  cfg.seed = seed;
  return cfg;
}

// Per-dimension absolute differences of the training inputs, so that the
// likelihood search rebuilds R with array operations only.
class DistanceCache {
public:
  explicit DistanceCache(const Matrix& x) {
    const Eigen::Index n = x.rows();
    diffs_.reserve(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index l = 0; l < x.cols(); ++l) {
      Eigen::ArrayXXd d(n, n);
      for (Eigen::Index j = 0; j < n; ++j) d.col(j) = (x.col(l).array() - x(j, l)).abs();
      diffs_.push_back(std::move(d));
    }
  }

  Matrix correlation(CorrelationFamily family, const Vector& theta) const {
    require_positive_lengthscales(theta);
    const Eigen::Index n = diffs_.front().rows();
    Eigen::ArrayXXd expo = Eigen::ArrayXXd::Zero(n, n);
    if (family == CorrelationFamily::Gaussian) {
      for (std::size_t l = 0; l < diffs_.size(); ++l) {
        expo += (diffs_[l] / theta[static_cast<Eigen::Index>(l)]).square();
      }
      return (-0.5 * expo).exp().matrix();
    }
    const double s5 = std::sqrt(5.0);
    Eigen::ArrayXXd poly = Eigen::ArrayXXd::Ones(n, n);
    for (std::size_t l = 0; l < diffs_.size(); ++l) {
      const Eigen::ArrayXXd h = diffs_[l] / theta[static_cast<Eigen::Index>(l)];
      poly *= 1.0 + s5 * h + (5.0 / 3.0) * h.square();
      expo += s5 * h;
    }
    return (poly * (-expo).exp()).matrix();
  }

private:
  std::vector<Eigen::ArrayXXd> diffs_;
};

Vector pow10(const Eigen::Ref<const Vector>& v) { return v.unaryExpr([](double a) { return std::pow(10.0, a); }); }

}  // namespace

void FitOptions::validate() const {
  if (trend.degree != 0 && trend.degree != 1) throw ConfigError("gp.trend: degree must be 0 or 1");
  if (!(log10_theta_min < log10_theta_max)) throw ConfigError("gp: log10 lengthscale bounds are empty");
  if (!(nugget >= 0.0)) throw ConfigError("gp.nugget: must be non-negative");
  if (optimize_nugget && !(log10_nugget_min < log10_nugget_max)) throw ConfigError("gp: nugget bounds are empty");
  if (!(theta_cat_min > 0.0 && theta_cat_min < theta_cat_max)) throw ConfigError("gp: theta_cat bounds are invalid");
  if (restarts < 1) throw ConfigError("gp.restarts: must be at least 1");
  if (evals_per_restart < 0) throw ConfigError("gp.evals_per_restart: must be non-negative");
}

Matrix trend_matrix(const TrendSpec& trend, const Matrix& x) {
  Matrix f(x.rows(), trend.basis_size(x.cols()));
  f.col(0).setOnes();
  if (trend.degree == 1) f.rightCols(x.cols()) = x;
  return f;
}

Vector trend_vector(const TrendSpec& trend, const Eigen::Ref<const Vector>& x) {
  Vector f(trend.basis_size(x.size()));
  f[0] = 1.0;
  if (trend.degree == 1) f.tail(x.size()) = x;
  return f;
}

GpModel assemble(const Matrix& x, const Vector& y, const TrendSpec& trend, CorrelationFamily family,
                 const Vector& theta, double nugget) {
  GpModel m = make_model(x, y, trend, family, theta);
  factorize(m, gram_matrix(x, m.correlation()), nugget);
  return m;
}

CategoricalGpModel assemble_categorical(const Matrix& x, std::span<const int> labels, const Vector& y,
                                        const TrendSpec& trend, CorrelationFamily family, const Vector& theta,
                                        double theta_cat, double nugget) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw ArgumentError("gp: label count differs from rows");
  if (!(theta_cat > 0.0)) throw ArgumentError("gp: theta_cat must be positive");
  CategoricalGpModel cm;
  cm.base = make_model(x, y, trend, family, theta);
  cm.theta_cat = theta_cat;
  cm.training_labels.assign(labels.begin(), labels.end());
  factorize(cm.base, categorical_gram(x, labels, cm.base.correlation(), theta_cat), nugget);
  return cm;
}

double negative_log_likelihood(const Matrix& x, const Vector& y, const TrendSpec& trend, CorrelationFamily family,
                               const Vector& theta, double nugget) {
  return assemble(x, y, trend, family, theta, nugget).nll;
}

double negative_log_likelihood_categorical(const Matrix& x, std::span<const int> labels, const Vector& y,
                                           const TrendSpec& trend, CorrelationFamily family, const Vector& theta,
                                           double theta_cat, double nugget) {
  return assemble_categorical(x, labels, y, trend, family, theta, theta_cat, nugget).base.nll;
}

GpModel fit(const Matrix& x_in, const Vector& y_in, const FitOptions& opts, std::uint64_t seed) {
  opts.validate();
  check_inputs(x_in, y_in);
  const Dedup d = deduplicate(x_in, {}, y_in);
  const Eigen::Index p = opts.trend.basis_size(d.x.cols());
  if (d.x.rows() <= p) {
    throw IdentifiabilityError("gp: " + std::to_string(d.x.rows()) + " distinct points cannot identify a trend with " +
                               std::to_string(p) + " coefficients");
  }
  const int m = static_cast<int>(d.x.cols());
  auto nugget_of = [&](const Vector& v) { return opts.optimize_nugget ? std::pow(10.0, v[m]) : opts.nugget; };
  const DistanceCache cache(d.x);
  const GpModel shape = make_model(d.x, d.y, opts.trend, opts.family, Vector::Ones(m));
  auto objective = [&](const Vector& v) {
    try {
      GpModel trial = shape;
      factorize(trial, cache.correlation(opts.family, pow10(v.head(m))), nugget_of(v));
      return trial.nll;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const auto cfg = search_config(opts, m, false, seed);
  const auto best = optim::minimize_restarts(objective, cfg, opts.restarts);
  if (!std::isfinite(best.f_best)) throw NumericalError("gp: likelihood could not be evaluated anywhere in the box");
  return assemble(d.x, d.y, opts.trend, opts.family, pow10(best.x_best.head(m)), nugget_of(best.x_best));
}

CategoricalGpModel fit_categorical(const Matrix& x_in, std::span<const int> labels_in, const Vector& y_in,
                                   const FitOptions& opts, std::uint64_t seed) {
  opts.validate();
  check_inputs(x_in, y_in);
  if (static_cast<Eigen::Index>(labels_in.size()) != x_in.rows()) {
    throw ArgumentError("gp: label count differs from rows");
  }
  const std::set<int> distinct(labels_in.begin(), labels_in.end());
  if (distinct.size() == 1) {
    // The categorical factor is identically 1; this is the plain model.
    FitOptions plain = opts;
    plain.family = opts.categorical_family;
    CategoricalGpModel cm;
    cm.base = fit(x_in, y_in, plain, seed);
    cm.theta_cat = 1.0;
    cm.training_labels.assign(static_cast<std::size_t>(cm.base.training_inputs.rows()), *distinct.begin());
    return cm;
  }
  const Dedup d = deduplicate(x_in, labels_in, y_in);
  const Eigen::Index p = opts.trend.basis_size(d.x.cols());
  if (d.x.rows() <= p) {
    throw IdentifiabilityError("gp: " + std::to_string(d.x.rows()) + " distinct points cannot identify a trend with " +
                               std::to_string(p) + " coefficients");
  }
  const int m = static_cast<int>(d.x.cols());
  auto nugget_of = [&](const Vector& v) { return opts.optimize_nugget ? std::pow(10.0, v[m + 1]) : opts.nugget; };
  const DistanceCache cache(d.x);
  const GpModel shape = make_model(d.x, d.y, opts.trend, opts.categorical_family, Vector::Ones(m));
  Eigen::ArrayXXd same(d.x.rows(), d.x.rows());
  for (Eigen::Index i = 0; i < same.rows(); ++i) {
    for (Eigen::Index j = 0; j < same.cols(); ++j) same(i, j) = d.labels[static_cast<std::size_t>(i)] == d.labels[static_cast<std::size_t>(j)];
  }
  auto objective = [&](const Vector& v) {
    try {
      const double cross = categorical_correlation(1, 2, std::pow(10.0, v[m]));
      Matrix r = cache.correlation(opts.categorical_family, pow10(v.head(m)));
      r.array() *= same + (1.0 - same) * cross;
      GpModel trial = shape;
      factorize(trial, std::move(r), nugget_of(v));
      return trial.nll;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const auto cfg = search_config(opts, m, true, seed);
  const auto best = optim::minimize_restarts(objective, cfg, opts.restarts);
  if (!std::isfinite(best.f_best)) throw NumericalError("gp: likelihood could not be evaluated anywhere in the box");
  return assemble_categorical(d.x, d.labels, d.y, opts.trend, opts.categorical_family, pow10(best.x_best.head(m)),
                              std::pow(10.0, best.x_best[m]), nugget_of(best.x_best));
}

GpPrediction predict(const GpModel& model, const Eigen::Ref<const Vector>& x) {
  if (x.size() != model.training_inputs.cols()) throw ArgumentError("gp predict: input dimension mismatch");
  if (!x.allFinite()) throw ArgumentError("gp predict: non-finite input");
  const Correlation k = model.correlation();
  Vector r(model.training_inputs.rows());
  for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = k(model.training_inputs.row(i).transpose(), x);
  return predict_with(model, r, x);
}

GpPrediction predict_categorical(const CategoricalGpModel& model, const Eigen::Ref<const Vector>& x, int label) {
  const auto& labels = model.training_labels;
  if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
    throw ArgumentError("gp predict_categorical: label " + std::to_string(label) + " not seen in training");
  }
  const GpModel& base = model.base;
  if (x.size() != base.training_inputs.cols()) throw ArgumentError("gp predict: input dimension mismatch");
  if (!x.allFinite()) throw ArgumentError("gp predict: non-finite input");
  const Correlation k = base.correlation();
  const double cross = categorical_correlation(1, 2, model.theta_cat);
  Vector r(base.training_inputs.rows());
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    r[i] = k(base.training_inputs.row(i).transpose(), x);
    if (labels[static_cast<std::size_t>(i)] != label) r[i] *= cross;
  }
  return predict_with(base, r, x);
}

namespace {

constexpr Eigen::Index kBlock = 256;

// Predictions for rows [start, start + len) given the transposed cross
// correlations (n0 x len).
void predict_block(const GpModel& model, const Matrix& x, Eigen::Index start, const Matrix& rt, BatchPrediction& out) {
  const Eigen::Index len = rt.cols();
  const Matrix f = trend_matrix(model.trend, x.middleRows(start, len));
  out.mean.segment(start, len) = f * model.beta_hat + rt.transpose() * model.weights;
  const Matrix v = model.chol_R.triangularView<Eigen::Lower>().solve(rt);
  const Matrix u = model.Linv_F.transpose() * v - f.transpose();
  const Matrix z = model.chol_FtRF.triangularView<Eigen::Lower>().solve(u);
  for (Eigen::Index j = 0; j < len; ++j) {
    const double s = 1.0 - v.col(j).squaredNorm() + z.col(j).squaredNorm();
    out.variance[start + j] = std::max(0.0, model.sigma2_hat * s);
  }
}

void check_batch(const GpModel& model, const Matrix& x) {
  if (x.cols() != model.training_inputs.cols()) throw ArgumentError("gp predict: input dimension mismatch");
  if (!x.allFinite()) throw ArgumentError("gp predict: non-finite input");
}

void plain_block(const GpModel& model, const Matrix& x, Eigen::Index b, BatchPrediction& out) {
  const Eigen::Index start = b * kBlock;
  const Eigen::Index len = std::min(kBlock, x.rows() - start);
  const Matrix rt = regime::reference::cross_matrix(model.training_inputs, x.middleRows(start, len), model.correlation());
  predict_block(model, x, start, rt, out);
}

void categorical_block(const CategoricalGpModel& model, const Matrix& x, std::span<const int> labels,
                       Eigen::Index b, BatchPrediction& out) {
  const Eigen::Index start = b * kBlock;
  const Eigen::Index len = std::min(kBlock, x.rows() - start);
  Matrix rt = regime::reference::cross_matrix(model.base.training_inputs, x.middleRows(start, len), model.base.correlation());
  const double cross = categorical_correlation(1, 2, model.theta_cat);
  for (Eigen::Index j = 0; j < len; ++j) {
    const int lab = labels[static_cast<std::size_t>(start + j)];
    for (Eigen::Index i = 0; i < rt.rows(); ++i) {
      if (model.training_labels[static_cast<std::size_t>(i)] != lab) rt(i, j) *= cross;
    }
  }
  predict_block(model.base, x, start, rt, out);
}

void check_labels(const CategoricalGpModel& model, const Matrix& x, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw ArgumentError("gp predict: label count mismatch");
  const std::set<int> known(model.training_labels.begin(), model.training_labels.end());
  for (int l : labels) {
    if (!known.contains(l)) {
      throw ArgumentError("gp predict_categorical: label " + std::to_string(l) + " not seen in training");
    }
  }
}

Eigen::Index block_count(const Matrix& x) { return (x.rows() + kBlock - 1) / kBlock; }

}  // namespace

BatchPrediction predict_batch(const GpModel& model, const Matrix& x) {
  check_batch(model, x);
  BatchPrediction out{Vector(x.rows()), Vector(x.rows())};
  const Eigen::Index blocks = block_count(x);
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index b = 0; b < blocks; ++b) plain_block(model, x, b, out);
  return out;
}

BatchPrediction predict_categorical_batch(const CategoricalGpModel& model, const Matrix& x,
                                          std::span<const int> labels) {
  check_batch(model.base, x);
  check_labels(model, x, labels);
  BatchPrediction out{Vector(x.rows()), Vector(x.rows())};
  const Eigen::Index blocks = block_count(x);
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index b = 0; b < blocks; ++b) categorical_block(model, x, labels, b, out);
  return out;
}

namespace reference {

BatchPrediction predict_batch(const GpModel& model, const Matrix& x) {
  check_batch(model, x);
  BatchPrediction out{Vector(x.rows()), Vector(x.rows())};
  for (Eigen::Index b = 0; b < block_count(x); ++b) plain_block(model, x, b, out);
  return out;
}

BatchPrediction predict_categorical_batch(const CategoricalGpModel& model, const Matrix& x,
                                          std::span<const int> labels) {
  check_batch(model.base, x);
  check_labels(model, x, labels);
  BatchPrediction out{Vector(x.rows()), Vector(x.rows())};
  for (Eigen::Index b = 0; b < block_count(x); ++b) categorical_block(model, x, labels, b, out);
  return out;
}

}  // namespace reference

}  // namespace regime::gp
