#include "regime/svc.hpp"

#include "regime/error.hpp"
#include "regime/optim.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <string>

namespace regime::svc {

namespace {

constexpr double kTau = 1e-12;
constexpr double kSupportThreshold = 1e-8;
constexpr double kPairClamp = 1e-7;

std::atomic<long> g_slow_couplings{0};

void check_binary_labels(std::span<const int> labels, Eigen::Index n) {
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ArgumentError("svc: label count differs from row count");
  bool pos = false;
  bool neg = false;
  for (int l : labels) {
    if (l == 1) pos = true;
    else if (l == -1) neg = true;
    else throw ArgumentError("svc: binary labels must be +1 or -1");
  }
  if (!pos || !neg) throw ArgumentError("svc: both classes must be present");
}

bool is_upper(double a, double c) { return a >= c; }
bool is_lower(double a) { return a <= 0.0; }

}  // namespace

namespace {

// SMO on the signed kernel q (Q_ab = y_a y_b K_ab). Variables with
// active[t] == 0 stay at zero and take no part in the problem.
DualSolution smo(const Matrix& q, const Vector& yy, const std::vector<char>& active, double c, const SmoOptions& opts,
                 Vector alpha_init) {
  const Eigen::Index n = q.rows();
  const Vector qd = q.diagonal();
  DualSolution sol;
  sol.alpha = std::move(alpha_init);
  Vector& alpha = sol.alpha;

  // G = Q alpha - 1
  Vector grad = Vector::Constant(n, -1.0);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (alpha[j] != 0.0) grad.noalias() += q.col(j) * alpha[j];
  }

  const long max_iter = opts.max_iter > 0 ? opts.max_iter : std::max<long>(10'000'000L, 100L * n);
  long iter = 0;
  double gap = 0.0;
  for (;; ++iter) {
    double gmax = -std::numeric_limits<double>::infinity();
    Eigen::Index i = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double yt = yy[t];
      if (!active[static_cast<std::size_t>(t)]) continue;
      if ((yt > 0 && !is_upper(alpha[t], c)) || (yt < 0 && !is_lower(alpha[t]))) {
        const double v = -yt * grad[t];
        if (v >= gmax) {
          gmax = v;
          i = t;
        }
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    Eigen::Index j = -1;
    double obj_min = std::numeric_limits<double>::infinity();
    if (i >= 0) {
      const double qii = qd[i];
      const double yi = yy[i];
      for (Eigen::Index t = 0; t < n; ++t) {
        const double yt = yy[t];
        if (!active[static_cast<std::size_t>(t)]) continue;
        if ((yt > 0 && !is_lower(alpha[t])) || (yt < 0 && !is_upper(alpha[t], c))) {
          const double ytg = yt * grad[t];
          gmax2 = std::max(gmax2, ytg);
          const double grad_diff = gmax + ytg;
          if (grad_diff > 0.0) {
            // K_ii + K_tt - 2 K_it expressed through Q
            double quad = qii + qd[t] - 2.0 * yi * yt * q(i, t);
            if (quad <= 0.0) quad = kTau;
            const double obj = -(grad_diff * grad_diff) / quad;
            if (obj <= obj_min) {
              obj_min = obj;
              j = t;
            }
          }
        }
      }
    }
    gap = gmax + gmax2;
    if (i < 0 || j < 0 || gap < opts.tol) break;
    if (iter >= max_iter) {
      throw NumericalError("svc: SMO did not converge after " + std::to_string(iter) +
                           " iterations (gap " + std::to_string(gap) + ", n " + std::to_string(n) +
                           ", C " + std::to_string(c) + ")");
    }

    const double yi = yy[i];
    const double yj = yy[j];
    const double qij = q(i, j);
    const double old_ai = alpha[i];
    const double old_aj = alpha[j];
    if (yi != yj) {
      double quad = qd[i] + qd[j] + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = c - diff;
        }
      } else if (alpha[j] > c) {
        alpha[j] = c;
        alpha[i] = c + diff;
      }
    } else {
      double quad = qd[i] + qd[j] - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = sum - c;
        }
      } else if (alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > c) {
        if (alpha[j] > c) {
          alpha[j] = c;
          alpha[i] = sum - c;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }
    const double dai = alpha[i] - old_ai;
    const double daj = alpha[j] - old_aj;
    grad.noalias() += q.col(i) * dai + q.col(j) * daj;
  }
  sol.iterations = iter;
  sol.gap = gap;

  // Bias from free variables, else the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  int n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!active[static_cast<std::size_t>(t)]) continue;
    const double yg = yy[t] * grad[t];
    if (is_upper(alpha[t], c)) {
      if (yy[t] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (is_lower(alpha[t])) {
      if (yy[t] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / n_free : 0.5 * (ub + lb);
  sol.bias = -rho;
  // 1/2 a'Qa - 1'a = 1/2 a'(G - 1)
  sol.objective = 0.5 * alpha.dot(grad - Vector::Ones(n));
  return sol;
}

Matrix signed_kernel(const Matrix& gram, const Vector& yy, std::span<const Eigen::Index> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix q(n, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    const Eigen::Index rb = rows[static_cast<std::size_t>(b)];
    for (Eigen::Index a = 0; a < n; ++a) q(a, b) = yy[a] * yy[b] * gram(rows[static_cast<std::size_t>(a)], rb);
  }
  return q;
}

}  // namespace

DualSolution solve_dual(const Matrix& gram, std::span<const int> y, std::span<const Eigen::Index> rows, double c,
                        const SmoOptions& opts, const Vector* warm_start) {
  if (!(c > 0.0)) throw ArgumentError("svc: penalty C must be positive");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Vector yy(n);
  for (Eigen::Index a = 0; a < n; ++a) yy[a] = y[static_cast<std::size_t>(rows[static_cast<std::size_t>(a)])];
  if (warm_start && warm_start->size() != n) throw ArgumentError("svc: warm start has wrong length");
  return smo(signed_kernel(gram, yy, rows), yy, std::vector<char>(static_cast<std::size_t>(n), 1), c, opts,
             warm_start ? *warm_start : Vector::Zero(n));
}

BinarySvcModel train_binary(const Matrix& x, std::span<const int> labels, double c, const KernelParams& kernel,
                            const SmoOptions& opts) {
  if (x.rows() < 2) throw ArgumentError("svc: need at least two training points");
  if (!x.allFinite()) throw ArgumentError("svc: non-finite training inputs");
  check_binary_labels(labels, x.rows());
  if (kernel.lengthscales.size() != x.cols()) throw ArgumentError("svc: lengthscale count differs from input dimension");
  require_positive_lengthscales(kernel.lengthscales);

  const Matrix gram = gram_matrix(x, kernel);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  const DualSolution sol = solve_dual(gram, labels, rows, c, opts);

  BinarySvcModel m;
  m.penalty = c;
  m.kernel = kernel;
  m.bias = sol.bias;
  m.iterations = sol.iterations;
  m.objective = sol.objective;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (sol.alpha[i] > kSupportThreshold) m.support_indices.push_back(i);
  }
  const auto s = static_cast<Eigen::Index>(m.support_indices.size());
  m.support_inputs.resize(s, x.cols());
  m.support_coeffs.resize(s);
  for (Eigen::Index k = 0; k < s; ++k) {
    const auto i = m.support_indices[static_cast<std::size_t>(k)];
    m.support_inputs.row(k) = x.row(i);
    m.support_coeffs[k] = sol.alpha[i] * labels[static_cast<std::size_t>(i)];
  }
  return m;
}

double decision(const BinarySvcModel& model, const Eigen::Ref<const Vector>& x) {
  if (!x.allFinite()) throw ArgumentError("svc decision: non-finite input");
  double f = model.bias;
  for (Eigen::Index k = 0; k < model.support_inputs.rows(); ++k) {
    f += model.support_coeffs[k] * model.kernel(model.support_inputs.row(k).transpose(), x);
  }
  return f;
}

double kkt_violation(const BinarySvcModel& model, const Matrix& x, std::span<const int> labels) {
  Vector alpha = Vector::Zero(x.rows());
  for (std::size_t k = 0; k < model.support_indices.size(); ++k) {
    alpha[model.support_indices[k]] = std::abs(model.support_coeffs[static_cast<Eigen::Index>(k)]);
  }
  const double c = model.penalty;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double margin = labels[static_cast<std::size_t>(i)] * decision(model, x.row(i).transpose());
    double v = 0.0;
    if (alpha[i] <= kSupportThreshold) v = std::max(0.0, 1.0 - margin);
    else if (alpha[i] >= c - kSupportThreshold) v = std::max(0.0, margin - 1.0);
    else v = std::abs(margin - 1.0);
    worst = std::max(worst, v);
  }
  return worst;
}

int loo_errors(const Matrix& x, std::span<const int> labels, double c, const KernelParams& kernel, double tol) {
  check_binary_labels(labels, x.rows());
  if (!(c > 0.0)) throw ArgumentError("svc: penalty C must be positive");
  const Eigen::Index n = x.rows();
  const Matrix gram = gram_matrix(x, kernel);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  Vector yy(n);
  for (Eigen::Index a = 0; a < n; ++a) yy[a] = labels[static_cast<std::size_t>(a)];
  const Matrix q = signed_kernel(gram, yy, rows);
  SmoOptions opts;
  opts.tol = tol;
  std::vector<char> active(static_cast<std::size_t>(n), 1);
  const DualSolution full = smo(q, yy, active, c, opts, Vector::Zero(n));

  // y_i f(x_i) = sum_j alpha_j Q_ji + y_i b
  auto margin = [&](const DualSolution& s, Eigen::Index i) { return s.alpha.dot(q.col(i)) + yy[i] * s.bias; };

  int pos = 0;
  for (int l : labels) pos += l > 0;
  int errors = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int yi = labels[static_cast<std::size_t>(i)];
    if (full.alpha[i] <= 0.0) {
      if (margin(full, i) <= 0.0) ++errors;
      continue;
    }
    // A class left without points cannot be predicted.
    if ((yi > 0 && pos == 1) || (yi < 0 && n - pos == 1)) {
      ++errors;
      continue;
    }
    Vector warm = full.alpha;
    warm[i] = 0.0;
    double opposite = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (labels[static_cast<std::size_t>(j)] != yi) opposite += warm[j];
    }
    // Restore y'alpha = 0 by shrinking the opposite class.
    const double factor = opposite > 0.0 ? std::max(0.0, 1.0 - full.alpha[i] / opposite) : 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (labels[static_cast<std::size_t>(j)] != yi) warm[j] *= factor;
    }
    active[static_cast<std::size_t>(i)] = 0;
    const DualSolution part = smo(q, yy, active, c, opts, std::move(warm));
    active[static_cast<std::size_t>(i)] = 1;
    if (margin(part, i) <= 0.0) ++errors;
  }
  return errors;
}

TuningResult tune_hyperparameters(const Matrix& x, std::span<const int> labels, const TuningBounds& bounds,
                                  std::uint64_t seed) {
  check_binary_labels(labels, x.rows());
  if (!(bounds.log10_c_min < bounds.log10_c_max) || !(bounds.log10_theta_min < bounds.log10_theta_max)) {
    throw ArgumentError("svc tuning: empty search box");
  }
  const int n_theta = bounds.anisotropic ? static_cast<int>(x.cols()) : 1;
  const int dim = 1 + n_theta;
  const int population = bounds.population > 0 ? bounds.population : optim::default_population(dim);
  if (bounds.budget < population) {
    throw ArgumentError("svc tuning: budget " + std::to_string(bounds.budget) + " is below the population size " +
                        std::to_string(population));
  }

  auto kernel_of = [&](const Vector& v) {
    KernelParams k;
    k.convention = bounds.convention;
    k.lengthscales.resize(x.cols());
    for (Eigen::Index l = 0; l < x.cols(); ++l) k.lengthscales[l] = std::pow(10.0, v[bounds.anisotropic ? 1 + l : 1]);
    return k;
  };

  struct Record {
    Vector v;
    int errors;
  };
  std::vector<Record> records;
  const double c_span = bounds.log10_c_max - bounds.log10_c_min;
  const double t_span = bounds.log10_theta_max - bounds.log10_theta_min;
  auto mean_log_theta = [&](const Vector& v) { return v.tail(n_theta).mean(); };

  optim::OptimConfig cfg;
  cfg.lower.resize(dim);
  cfg.upper.resize(dim);
  cfg.lower[0] = bounds.log10_c_min;
  cfg.upper[0] = bounds.log10_c_max;
  cfg.lower.tail(n_theta).setConstant(bounds.log10_theta_min);
  cfg.upper.tail(n_theta).setConstant(bounds.log10_theta_max);
  cfg.population = population;
  cfg.max_evals = bounds.budget;
  cfg.seed = seed;
  cfg.tol_fun = 0.0;

  // The optimizer sees the error count plus a tie-break term in [0, 0.5)
  // favouring large lengthscales, then small C.
  auto objective = [&](const Vector& v) {
    int errors = x.rows();
    try {
      errors = loo_errors(x, labels, std::pow(10.0, v[0]), kernel_of(v), bounds.loo_tol);
    } catch (const NumericalError& e) {
      spdlog::debug("svc tuning: {}", e.what());
    }
    records.push_back({v, errors});
    const double u_theta = (mean_log_theta(v) - bounds.log10_theta_min) / t_span;
    const double u_c = (v[0] - bounds.log10_c_min) / c_span;
    return errors + 0.45 * (1.0 - u_theta) + 0.04 * u_c;
  };
  optim::minimize(objective, cfg);

  const auto best = std::min_element(records.begin(), records.end(), [&](const Record& a, const Record& b) {
    if (a.errors != b.errors) return a.errors < b.errors;
    const double ta = mean_log_theta(a.v);
    const double tb = mean_log_theta(b.v);
    if (ta != tb) return ta > tb;
    return a.v[0] < b.v[0];
  });
  TuningResult out;
  out.c = std::pow(10.0, best->v[0]);
  out.kernel = kernel_of(best->v);
  out.loo_errors = best->errors;
  out.evaluations = static_cast<int>(records.size());
  return out;
}

double PlattCalibration::probability(double f) const {
  const double z = slope * f + intercept;
  return z >= 0.0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
}

PlattCalibration fit_platt(std::span<const double> decisions, std::span<const int> labels) {
  if (decisions.size() != labels.size()) throw ArgumentError("fit_platt: length mismatch");
  check_binary_labels(labels, static_cast<Eigen::Index>(labels.size()));
  const std::size_t n = decisions.size();
  double prior1 = 0.0;
  double prior0 = 0.0;
  for (int l : labels) (l > 0 ? prior1 : prior0) += 1.0;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo = 1.0 / (prior0 + 2.0);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = labels[i] > 0 ? hi : lo;

  auto objective = [&](double a, double b) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = decisions[i] * a + b;
      f += z >= 0.0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
    }
    return f;
  };

  constexpr int kMaxIter = 100;
  constexpr double kMinStep = 1e-10;
  constexpr double kSigma = 1e-12;
  constexpr double kEps = 1e-5;
  double a = 0.0;
  double b = std::log((prior0 + 1.0) / (prior1 + 1.0));
  double fval = objective(a, b);
  int iter = 0;
  for (; iter < kMaxIter; ++iter) {
    double h11 = kSigma, h22 = kSigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = decisions[i] * a + b;
      double p = 0.0;
      double q = 0.0;
      if (z >= 0.0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += decisions[i] * decisions[i] * d2;
      h22 += d2;
      h21 += decisions[i] * d2;
      const double d1 = t[i] - p;
      g1 += decisions[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < kEps && std::abs(g2) < kEps) break;
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1.0;
    while (step >= kMinStep) {
      const double na = a + step * da;
      const double nb = b + step * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        a = na;
        b = nb;
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < kMinStep) break;  // no further decrease representable
  }
  if (iter >= kMaxIter) throw NumericalError("fit_platt: Newton iteration did not converge in 100 steps");
  if (!std::isfinite(a) || !std::isfinite(b)) throw NumericalError("fit_platt: non-finite sigmoid coefficients");
  return {a, b};
}

Matrix coupling_transition(const Matrix& pairwise) {
  const Eigen::Index k = pairwise.rows();
  Matrix t = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      if (i == j) continue;
      t(i, j) = pairwise(i, j) / static_cast<double>(k - 1);
      t(i, i) += pairwise(i, j) / static_cast<double>(k - 1);
    }
  }
  return t;
}

CouplingResult coupled_posteriors(const Matrix& pairwise, double tol, int max_iters) {
  const Eigen::Index k = pairwise.rows();
  if (k < 2 || pairwise.cols() != k) throw ArgumentError("coupled_posteriors: need a square matrix with K >= 2");
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      if (i == j) continue;
      const double p = pairwise(i, j);
      if (!(p > 0.0 && p < 1.0)) {
        throw ArgumentError("coupled_posteriors: p(" + std::to_string(i + 1) + "," + std::to_string(j + 1) +
                            ") outside (0, 1); the coupling chain would not be irreducible");
      }
      if (std::abs(p + pairwise(j, i) - 1.0) > 1e-9) {
        throw ArgumentError("coupled_posteriors: p_ij + p_ji must equal 1");
      }
    }
  }
  const double kk = static_cast<double>(k);
  Vector p(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j != i) s += pairwise(i, j);
    }
    p[i] = 2.0 / (kk * (kk - 1.0)) * s;
  }
  p /= p.sum();

  CouplingResult out;
  Vector next(k);
  for (int it = 1; it <= max_iters; ++it) {
    for (Eigen::Index i = 0; i < k; ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < k; ++j) {
        if (j != i) s += pairwise(i, j) * (p[i] + p[j]);
      }
      next[i] = s / (kk - 1.0);
    }
    next /= next.sum();
    const double delta = (next - p).cwiseAbs().maxCoeff();
    p.swap(next);
    out.iterations = it;
    if (delta < tol) {
      out.converged = true;
      break;
    }
  }
  if (out.iterations >= 100) {
    const long count = ++g_slow_couplings;
    spdlog::warn("coupled_posteriors: {} iterations for K={} (slow solves so far: {})", out.iterations, k, count);
  }
  out.probabilities = std::move(p);
  return out;
}

long slow_coupling_count() { return g_slow_couplings.load(); }

const PairClassifier& MulticlassSvc::pair(int i, int j) const {
  for (const auto& p : pairs) {
    if (p.first == i && p.second == j) return p;
  }
  throw ArgumentError("multiclass svc: no classifier for pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
}

MulticlassSvc train_multiclass(const Matrix& x, std::span<const int> labels, int n_classes,
                               const MulticlassConfig& cfg, std::uint64_t seed) {
  if (n_classes < 2) throw ArgumentError("multiclass svc: need at least two classes");
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw ArgumentError("multiclass svc: label count mismatch");
  std::vector<int> counts(static_cast<std::size_t>(n_classes) + 1, 0);
  for (int l : labels) {
    if (l < 1 || l > n_classes) throw ArgumentError("multiclass svc: label outside 1..K");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int c = 1; c <= n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) throw ArgumentError("multiclass svc: class " + std::to_string(c) + " is empty");
  }

  MulticlassSvc model;
  model.n_classes = n_classes;
  model.coupling_max_iters = cfg.coupling_max_iters;
  model.coupling_tol = cfg.coupling_tol;
  std::vector<std::pair<int, int>> ids;
  for (int i = 1; i <= n_classes; ++i) {
    for (int j = i + 1; j <= n_classes; ++j) ids.emplace_back(i, j);
  }
  model.pairs.resize(ids.size());
  std::vector<std::exception_ptr> failures(ids.size());

#pragma omp parallel for schedule(dynamic)
  for (std::size_t p = 0; p < ids.size(); ++p) {
    try {
      const auto [ci, cj] = ids[p];
      std::vector<Eigen::Index> rows;
      std::vector<int> y;
      for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] == ci || labels[r] == cj) {
          rows.push_back(static_cast<Eigen::Index>(r));
          y.push_back(labels[r] == ci ? 1 : -1);
        }
      }
      Matrix sub(static_cast<Eigen::Index>(rows.size()), x.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);

      double c = cfg.fixed_c;
      KernelParams kernel{Vector::Constant(x.cols(), cfg.fixed_theta), cfg.tuning.convention};
      if (cfg.tune) {
        const TuningResult tuned = tune_hyperparameters(sub, y, cfg.tuning, derive_seed(seed, p));
        c = tuned.c;
        kernel = tuned.kernel;
      }
      SmoOptions opts;
      opts.tol = cfg.smo_tol;
      PairClassifier pc;
      pc.first = ci;
      pc.second = cj;
      pc.model = train_binary(sub, y, c, kernel, opts);
      pc.model.labels = {ci, cj};
      // support indices refer to rows of the full training matrix
      for (auto& s : pc.model.support_indices) s = rows[static_cast<std::size_t>(s)];
      std::vector<double> dec(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) dec[r] = decision(pc.model, sub.row(static_cast<Eigen::Index>(r)).transpose());
      pc.platt = fit_platt(dec, y);
      model.pairs[p] = std::move(pc);
    } catch (...) {
      failures[p] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return model;
}

Matrix pairwise_probabilities(const MulticlassSvc& model, const Eigen::Ref<const Vector>& x) {
  const int k = model.n_classes;
  Matrix p = Matrix::Zero(k, k);
  for (const auto& pc : model.pairs) {
    const double f = decision(pc.model, x);
    const double v = std::clamp(pc.platt.probability(f), kPairClamp, 1.0 - kPairClamp);
    p(pc.first - 1, pc.second - 1) = v;
    p(pc.second - 1, pc.first - 1) = 1.0 - v;
  }
  return p;
}

Vector predict_class_probs(const MulticlassSvc& model, const Eigen::Ref<const Vector>& x) {
  if (model.n_classes == 1) return Vector::Ones(1);
  return coupled_posteriors(pairwise_probabilities(model, x), model.coupling_tol, model.coupling_max_iters)
      .probabilities;
}

int resolve_vote(int n_classes, const std::vector<std::pair<std::pair<int, int>, bool>>& verdicts,
                 const Vector& posteriors) {
  std::vector<int> votes(static_cast<std::size_t>(n_classes) + 1, 0);
  for (const auto& [ids, first_wins] : verdicts) ++votes[static_cast<std::size_t>(first_wins ? ids.first : ids.second)];
  const int top = *std::max_element(votes.begin() + 1, votes.end());
  std::vector<int> tied;
  for (int c = 1; c <= n_classes; ++c) {
    if (votes[static_cast<std::size_t>(c)] == top) tied.push_back(c);
  }
  if (tied.size() == 1) return tied.front();
  if (tied.size() == 2) {
    for (const auto& [ids, first_wins] : verdicts) {
      if (ids.first == tied[0] && ids.second == tied[1]) return first_wins ? ids.first : ids.second;
    }
  }
  int best = tied.front();
  for (int c : tied) {
    if (posteriors[c - 1] > posteriors[best - 1]) best = c;
  }
  return best;
}

int predict_label(const MulticlassSvc& model, const Eigen::Ref<const Vector>& x) {
  if (!x.allFinite()) throw ArgumentError("predict_label: non-finite input");
  if (model.n_classes == 1) return 1;
  std::vector<std::pair<std::pair<int, int>, bool>> verdicts;
  verdicts.reserve(model.pairs.size());
  for (const auto& pc : model.pairs) verdicts.push_back({{pc.first, pc.second}, decision(pc.model, x) > 0.0});
  std::vector<int> votes(static_cast<std::size_t>(model.n_classes) + 1, 0);
  for (const auto& [ids, w] : verdicts) ++votes[static_cast<std::size_t>(w ? ids.first : ids.second)];
  const int top = *std::max_element(votes.begin() + 1, votes.end());
  const auto n_top = std::count(votes.begin() + 1, votes.end(), top);
  // Posteriors are only needed for ties among three or more classes.
  const Vector post = n_top >= 3 ? predict_class_probs(model, x) : Vector::Zero(model.n_classes);
  return resolve_vote(model.n_classes, verdicts, post);
}

}  // namespace regime::svc
