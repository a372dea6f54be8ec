#include "regime/dpmm.hpp"

#include "regime/error.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

namespace regime::dpmm {

namespace {

using boost::math::digamma;

double log_multigamma(double a, Eigen::Index d) {
  double s = 0.25 * static_cast<double>(d * (d - 1)) * std::log(std::numbers::pi);
  for (Eigen::Index j = 1; j <= d; ++j) s += std::lgamma(a + 0.5 * static_cast<double>(1 - j));
  return s;
}

double multi_digamma(double a, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index j = 1; j <= d; ++j) s += digamma(a + 0.5 * static_cast<double>(1 - j));
  return s;
}

Eigen::LLT<Matrix> checked_llt(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string("dpmm: ") + what + " is not positive definite");
  return llt;
}

double log_det(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Per-component constants of E_q[log N(w | eta_t)].
struct AtomTerms {
  Eigen::LLT<Matrix> chol;
  double constant = 0.0;  // -D/2 log 2pi + 1/2 E log|Lambda| - D / (2 kappa)
  double dof = 0.0;
  Vector mean;
};

AtomTerms atom_terms(const NiwParams& p) {
  const auto d = p.mean.size();
  AtomTerms a{checked_llt(p.scatter, "atom scatter matrix"), 0.0, p.dof, p.mean};
  const double e_logdet_prec =
      multi_digamma(0.5 * p.dof, d) + static_cast<double>(d) * std::log(2.0) - log_det(a.chol);
  a.constant = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + 0.5 * e_logdet_prec -
               0.5 * static_cast<double>(d) / p.scale;
  return a;
}

double atom_loglik(const AtomTerms& a, const Eigen::Ref<const Vector>& w) {
  const Vector z = a.chol.matrixL().solve(w - a.mean);
  return a.constant - 0.5 * a.dof * z.squaredNorm();
}

std::vector<AtomTerms> all_atom_terms(const std::vector<NiwParams>& tau) {
  std::vector<AtomTerms> out;
  out.reserve(tau.size());
  for (const auto& p : tau) out.push_back(atom_terms(p));
  return out;
}

void check_data(const Matrix& data) {
  if (data.rows() < 2) throw ArgumentError("dpmm: need at least two data points");
  if (!data.allFinite()) throw ArgumentError("dpmm: data contains non-finite values");
}

Vector expected_weights(const Matrix& gamma) {
  Vector v(gamma.rows());
  for (Eigen::Index t = 0; t < gamma.rows(); ++t) v[t] = gamma(t, 0) / (gamma(t, 0) + gamma(t, 1));
  return stick_breaking_weights(v);
}

// Unnormalized log responsibilities for the current gamma and tau.
Matrix responsibility_logits(const VariationalState& state, const Matrix& data) {
  Matrix logits = expected_log_likelihood(data, state.tau);
  logits.rowwise() += expected_log_stick(state.gamma).transpose();
  return logits;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

std::vector<int> hard_labels(const Matrix& resp) {
  std::vector<int> labels(static_cast<std::size_t>(resp.rows()));
  for (Eigen::Index i = 0; i < resp.rows(); ++i) {
    Eigen::Index k = 0;
    resp.row(i).maxCoeff(&k);
    labels[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return labels;
}

VariationalState run_once(const Matrix& data, const DpmmConfig& cfg, std::uint64_t seed, Matrix& final_logits) {
  VariationalState state = initial_state(data, cfg, seed);
  update_gamma(state, cfg);
  update_tau(state, data, cfg);
  state.elbo_trace.push_back(elbo(state, data, cfg));
  for (int it = 0; it < cfg.max_iters; ++it) {
    final_logits = responsibility_logits(state, data);
    state.phi = softmax_rows(final_logits);
    update_gamma(state, cfg);
    update_tau(state, data, cfg);
    const double prev = state.elbo_trace.back();
    const double cur = elbo(state, data, cfg);
    state.elbo_trace.push_back(cur);
    if (std::abs(cur - prev) < cfg.elbo_tol * std::max(1.0, std::abs(prev))) {
      state.converged = true;
      break;
    }
  }
  if (final_logits.size() == 0) final_logits = state.phi.array().max(1e-300).log().matrix();
  return state;
}

}  // namespace

DpmmConfig DpmmConfig::resolved(Eigen::Index dimension) const {
  DpmmConfig c = *this;
  const double d = static_cast<double>(dimension);
  if (c.base_mean.size() == 0) c.base_mean = Vector::Zero(dimension);
  if (c.base_dof <= 0.0) c.base_dof = d + 2.0;
  if (c.base_scatter.size() == 0) c.base_scatter = Matrix::Identity(dimension, dimension);

  if (!(c.alpha > 0.0)) throw ArgumentError("dpmm: alpha must be positive");
  if (c.truncation < 2) throw ArgumentError("dpmm: truncation must be at least 2");
  if (c.base_mean.size() != dimension) throw ArgumentError("dpmm: base_mean has wrong dimension");
  if (!(c.base_scale > 0.0)) throw ArgumentError("dpmm: base_scale must be positive");
  if (!(c.base_dof > d - 1.0)) throw ArgumentError("dpmm: base_dof must exceed dimension - 1");
  if (c.base_scatter.rows() != dimension || c.base_scatter.cols() != dimension) {
    throw ArgumentError("dpmm: base_scatter has wrong shape");
  }
  if (!c.base_scatter.isApprox(c.base_scatter.transpose())) throw ArgumentError("dpmm: base_scatter is not symmetric");
  if (Eigen::LLT<Matrix>(c.base_scatter).info() != Eigen::Success) {
    throw ArgumentError("dpmm: base_scatter is not positive definite");
  }
  if (c.max_iters < 1) throw ArgumentError("dpmm: max_iters must be positive");
  if (!(c.elbo_tol > 0.0)) throw ArgumentError("dpmm: elbo_tol must be positive");
  if (c.restarts < 1) throw ArgumentError("dpmm: restarts must be positive");
  if (!(c.prune_weight > 0.0 && c.prune_weight < 1.0)) throw ArgumentError("dpmm: prune_weight must lie in (0, 1)");
  if (c.prune_min_points < 0) throw ArgumentError("dpmm: prune_min_points must be non-negative");
  return c;
}

NiwParams DpmmConfig::base() const { return {base_mean, base_scale, base_dof, base_scatter}; }

Vector stick_breaking_weights(const Vector& v) {
  Vector pi(v.size() + 1);
  double rest = 1.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!(v[k] >= 0.0 && v[k] <= 1.0)) {
      throw ArgumentError("stick_breaking_weights: fraction " + std::to_string(k) + " outside [0, 1]");
    }
    pi[k] = v[k] * rest;
    rest *= 1.0 - v[k];
  }
  pi[v.size()] = rest;
  return pi;
}

Vector expected_log_stick(const Matrix& gamma) {
  const auto t_count = gamma.rows() + 1;
  Vector out(t_count);
  double tail = 0.0;
  for (Eigen::Index t = 0; t < t_count; ++t) {
    if (t < gamma.rows()) {
      const double total = digamma(gamma(t, 0) + gamma(t, 1));
      out[t] = digamma(gamma(t, 0)) - total + tail;
      tail += digamma(gamma(t, 1)) - total;
    } else {
      out[t] = tail;  // q(v_T = 1) = 1
    }
  }
  return out;
}

namespace reference {
Matrix expected_log_likelihood(const Matrix& data, const std::vector<NiwParams>& tau) {
  const auto atoms = all_atom_terms(tau);
  Matrix out(data.rows(), static_cast<Eigen::Index>(tau.size()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (std::size_t t = 0; t < atoms.size(); ++t) {
      out(i, static_cast<Eigen::Index>(t)) = atom_loglik(atoms[t], data.row(i).transpose());
    }
  }
  return out;
}
}  // namespace reference

Matrix expected_log_likelihood(const Matrix& data, const std::vector<NiwParams>& tau) {
  const auto atoms = all_atom_terms(tau);
  Matrix out(data.rows(), static_cast<Eigen::Index>(tau.size()));
#pragma omp parallel for schedule(static) if (data.rows() * static_cast<Eigen::Index>(tau.size()) > 8192)
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (std::size_t t = 0; t < atoms.size(); ++t) {
      out(i, static_cast<Eigen::Index>(t)) = atom_loglik(atoms[t], data.row(i).transpose());
    }
  }
  return out;
}

double niw_kl(const NiwParams& q, const NiwParams& p) {
  const auto d = q.mean.size();
  const double dd = static_cast<double>(d);
  const auto q_llt = checked_llt(q.scatter, "scatter matrix");
  const auto p_llt = checked_llt(p.scatter, "scatter matrix");
  const double logdet_q = log_det(q_llt);
  const double logdet_p = log_det(p_llt);

  // Mean part, averaged over q(Sigma): E[Sigma^-1] = dof * scatter^-1.
  const Vector diff = q.mean - p.mean;
  const double quad = diff.dot(q_llt.solve(diff));
  const double kl_mean =
      0.5 * (dd * p.scale / q.scale + p.scale * q.dof * quad - dd + dd * std::log(q.scale / p.scale));

  // Wishart KL on the precision matrix.
  const double e_logdet_prec = multi_digamma(0.5 * q.dof, d) + dd * std::log(2.0) - logdet_q;
  const double trace = q_llt.solve(p.scatter).trace();
  const double kl_cov = 0.5 * (q.dof - p.dof) * e_logdet_prec - 0.5 * q.dof * dd + 0.5 * q.dof * trace +
                        0.5 * (p.dof - q.dof) * dd * std::log(2.0) + 0.5 * q.dof * logdet_q -
                        0.5 * p.dof * logdet_p - log_multigamma(0.5 * q.dof, d) +
                        log_multigamma(0.5 * p.dof, d);
  return kl_mean + kl_cov;
}

VariationalState initial_state(const Matrix& data, const DpmmConfig& cfg_in, std::uint64_t seed) {
  check_data(data);
  const DpmmConfig cfg = cfg_in.resolved(data.cols());
  const Eigen::Index n = data.rows();
  const Eigen::Index t_count = cfg.truncation;
  const Eigen::Index n_centers = std::min(n, t_count);

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> centers;
  centers.push_back(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  Vector d2 = (data.rowwise() - data.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<Eigen::Index>(centers.size()) < n_centers) {
    const double total = d2.sum();
    Eigen::Index next = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (next = 0; next < n - 1; ++next) {
        u -= d2[next];
        if (u < 0.0) break;
      }
    } else {
      next = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    }
    centers.push_back(next);
    d2 = d2.cwiseMin((data.rowwise() - data.row(next)).rowwise().squaredNorm());
  }

  VariationalState state;
  state.phi = Matrix::Constant(n, t_count, 0.1 / static_cast<double>(t_count));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double dist = (data.row(i) - data.row(centers[c])).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = static_cast<Eigen::Index>(c);
      }
    }
    state.phi(i, best) += 0.9;
  }
  state.gamma = Matrix::Ones(t_count - 1, 2);
  state.gamma.col(1).setConstant(cfg.alpha);
  state.tau.assign(static_cast<std::size_t>(t_count), cfg.base());
  return state;
}

void update_phi(VariationalState& state, const Matrix& data, const DpmmConfig&) {
  state.phi = softmax_rows(responsibility_logits(state, data));
}

void update_gamma(VariationalState& state, const DpmmConfig& cfg) {
  const Vector counts = state.phi.colwise().sum();
  const Eigen::Index t_count = counts.size();
  state.gamma.resize(t_count - 1, 2);
  double tail = counts.sum();
  for (Eigen::Index t = 0; t < t_count - 1; ++t) {
    tail -= counts[t];
    state.gamma(t, 0) = 1.0 + counts[t];
    state.gamma(t, 1) = cfg.alpha + std::max(tail, 0.0);
  }
}

void update_tau(VariationalState& state, const Matrix& data, const DpmmConfig& cfg_in) {
  const DpmmConfig cfg = cfg_in.resolved(data.cols());
  const Eigen::Index t_count = state.phi.cols();
  const Eigen::Index d = data.cols();
  state.tau.resize(static_cast<std::size_t>(t_count));
  for (Eigen::Index t = 0; t < t_count; ++t) {
    const double nk = state.phi.col(t).sum();
    NiwParams& q = state.tau[static_cast<std::size_t>(t)];
    Vector xbar = cfg.base_mean;
    Matrix scatter = Matrix::Zero(d, d);
    if (nk > 1e-300) {
      xbar = (data.transpose() * state.phi.col(t)) / nk;
      const Matrix centered = data.rowwise() - xbar.transpose();
      scatter = centered.transpose() * state.phi.col(t).asDiagonal() * centered;
    }
    q.scale = cfg.base_scale + nk;
    q.dof = cfg.base_dof + nk;
    q.mean = (cfg.base_scale * cfg.base_mean + nk * xbar) / q.scale;
    const Vector dm = xbar - cfg.base_mean;
    q.scatter = cfg.base_scatter + scatter + (cfg.base_scale * nk / q.scale) * dm * dm.transpose();
    q.scatter = 0.5 * (q.scatter + q.scatter.transpose());
  }
}

double elbo(const VariationalState& state, const Matrix& data, const DpmmConfig& cfg_in) {
  const DpmmConfig cfg = cfg_in.resolved(data.cols());
  const Eigen::Index t_count = state.phi.cols();
  if (state.phi.rows() != data.rows() || static_cast<Eigen::Index>(state.tau.size()) != t_count ||
      state.gamma.rows() != t_count - 1 || state.gamma.cols() != 2) {
    throw ArgumentError("dpmm elbo: state dimensions inconsistent with data");
  }
  for (const auto& q : state.tau) {
    if (q.mean.size() != data.cols()) throw ArgumentError("dpmm elbo: atom dimension mismatch");
  }

  const Matrix loglik = expected_log_likelihood(data, state.tau);
  const Vector log_stick = expected_log_stick(state.gamma);

  double value = 0.0;
  for (Eigen::Index i = 0; i < state.phi.rows(); ++i) {
    for (Eigen::Index t = 0; t < t_count; ++t) {
      const double p = state.phi(i, t);
      if (p > 0.0) value += p * (loglik(i, t) + log_stick[t] - std::log(p));
    }
  }
  const NiwParams base = cfg.base();
  for (Eigen::Index t = 0; t < t_count - 1; ++t) {
    const double a = state.gamma(t, 0);
    const double b = state.gamma(t, 1);
    const double total = digamma(a + b);
    const double e_log_v = digamma(a) - total;
    const double e_log_1mv = digamma(b) - total;
    // E log p(v_t) - E log q(v_t) with p = Beta(1, alpha).
    value += std::log(cfg.alpha) + (cfg.alpha - 1.0) * e_log_1mv;
    value -= std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * e_log_v + (b - 1.0) * e_log_1mv;
  }
  for (const auto& q : state.tau) value -= niw_kl(q, base);
  return value;
}

FitOutput fit(const Matrix& data, const DpmmConfig& cfg_in, std::uint64_t seed) {
  check_data(data);
  const DpmmConfig cfg = cfg_in.resolved(data.cols());

  VariationalState best;
  Matrix best_logits;
  double max_drop = 0.0;
  for (int r = 0; r < cfg.restarts; ++r) {
    Matrix logits;
    VariationalState s = run_once(data, cfg, derive_seed(seed, static_cast<std::uint64_t>(r)), logits);
    for (std::size_t i = 1; i < s.elbo_trace.size(); ++i) {
      max_drop = std::max(max_drop, s.elbo_trace[i - 1] - s.elbo_trace[i]);
    }
    if (r == 0 || s.elbo_trace.back() > best.elbo_trace.back()) {
      best = std::move(s);
      best_logits = std::move(logits);
    }
  }
  if (!best.converged) {
    spdlog::warn("dpmm: coordinate ascent hit max_iters={} without meeting elbo_tol", cfg.max_iters);
  }

  // Prune: small expected weight or too few hard-assigned points.
  const Vector w = expected_weights(best.gamma);
  const std::vector<int> hard = hard_labels(best.phi);
  const Eigen::Index t_count = best.phi.cols();
  std::vector<int> members(static_cast<std::size_t>(t_count), 0);
  for (int h : hard) ++members[static_cast<std::size_t>(h)];
  std::vector<Eigen::Index> keep;
  for (Eigen::Index t = 0; t < t_count; ++t) {
    if (w[t] >= cfg.prune_weight && members[static_cast<std::size_t>(t)] >= cfg.prune_min_points) keep.push_back(t);
  }
  if (keep.empty()) {
    Eigen::Index t = 0;
    w.maxCoeff(&t);
    keep.push_back(t);
  }
  std::stable_sort(keep.begin(), keep.end(), [&](Eigen::Index a, Eigen::Index b) { return w[a] > w[b]; });

  const auto k = static_cast<Eigen::Index>(keep.size());
  const Eigen::Index d = data.cols();
  ClusteringResult res;
  res.n_clusters = static_cast<int>(k);
  res.converged = best.converged;
  res.elbo = best.elbo_trace.back();
  res.max_elbo_drop = max_drop;
  res.weights.resize(k);
  res.cluster_means.resize(k, d);
  Matrix logits(data.rows(), k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto t = keep[static_cast<std::size_t>(c)];
    const NiwParams& q = best.tau[static_cast<std::size_t>(t)];
    res.weights[c] = w[t];
    res.cluster_means.row(c) = q.mean.transpose();
    const double denom = q.dof > static_cast<double>(d) + 1.0 ? q.dof - static_cast<double>(d) - 1.0
                                                              : q.dof + static_cast<double>(d) + 1.0;
    res.cluster_covs.push_back(q.scatter / denom);
    logits.col(c) = best_logits.col(t);
  }
  res.responsibilities = softmax_rows(logits);
  const std::vector<int> lab = hard_labels(res.responsibilities);
  res.labels.resize(lab.size());
  std::transform(lab.begin(), lab.end(), res.labels.begin(), [](int l) { return l + 1; });
  return {std::move(best), std::move(res)};
}

Vector predict_responsibility(const ClusteringResult& result, const Vector& w) {
  if (!w.allFinite()) throw ArgumentError("predict_responsibility: non-finite input");
  const Eigen::Index k = result.n_clusters;
  if (result.cluster_means.cols() != w.size()) throw ArgumentError("predict_responsibility: dimension mismatch");
  Vector logp(k);
  const double dd = static_cast<double>(w.size());
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::LLT<Matrix> llt(result.cluster_covs[static_cast<std::size_t>(c)]);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("predict_responsibility: covariance of cluster " + std::to_string(c + 1) + " is singular");
    }
    const Vector z = llt.matrixL().solve(w - result.cluster_means.row(c).transpose());
    logp[c] = std::log(result.weights[c]) - 0.5 * log_det(llt) - 0.5 * dd * std::log(2.0 * std::numbers::pi) -
              0.5 * z.squaredNorm();
  }
  const double mx = logp.maxCoeff();
  Vector p = (logp.array() - mx).exp();
  return p / p.sum();
}

}  // namespace regime::dpmm
