#include "regime/optim.hpp"

#include "regime/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace regime::optim {

namespace {

void validate(const OptimConfig& cfg) {
  if (cfg.lower.size() == 0 || cfg.lower.size() != cfg.upper.size()) {
    throw ArgumentError("optim: bounds must be non-empty vectors of equal length");
  }
  for (Eigen::Index i = 0; i < cfg.lower.size(); ++i) {
    if (!(cfg.lower[i] < cfg.upper[i]) || !std::isfinite(cfg.lower[i]) || !std::isfinite(cfg.upper[i])) {
      throw ArgumentError("optim: lower bound must be strictly below upper bound in every coordinate");
    }
  }
  const int d = static_cast<int>(cfg.lower.size());
  const int lambda = cfg.population > 0 ? cfg.population : default_population(d);
  if (lambda < 2) throw ArgumentError("optim: population must be at least 2");
  if (cfg.max_evals < lambda) {
    throw ArgumentError("optim: evaluation budget " + std::to_string(cfg.max_evals) +
                        " is smaller than the population size " + std::to_string(lambda));
  }
  if (!(cfg.sigma0 > 0.0)) throw ArgumentError("optim: sigma0 must be positive");
  if (cfg.x0 && cfg.x0->size() != cfg.lower.size()) throw ArgumentError("optim: x0 has wrong dimension");
}

double reflect_unit(double u) {
  if (u >= 0.0 && u <= 1.0) return u;
  double r = std::fmod(std::abs(u), 2.0);
  return r > 1.0 ? 2.0 - r : r;
}

}  // namespace

int default_population(int dimension) {
  return 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(dimension))));
}

OptimResult minimize(const Objective& objective, const OptimConfig& cfg) {
  validate(cfg);
  const int d = static_cast<int>(cfg.lower.size());
  const int lambda = cfg.population > 0 ? cfg.population : default_population(d);
  const int mu = lambda / 2;
  const Vector width = cfg.upper - cfg.lower;
  const double dd = static_cast<double>(d);

  Vector weights(mu);
  for (int i = 0; i < mu; ++i) weights[i] = std::log(mu + 0.5) - std::log(i + 1.0);
  weights /= weights.sum();
  const double mueff = 1.0 / weights.squaredNorm();

  const double cs = (mueff + 2.0) / (dd + mueff + 5.0);
  const double damps = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (dd + 1.0)) - 1.0) + cs;
  const double cc = (4.0 + mueff / dd) / (dd + 4.0 + 2.0 * mueff / dd);
  const double c1 = 2.0 / ((dd + 1.3) * (dd + 1.3) + mueff);
  const double cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((dd + 2.0) * (dd + 2.0) + mueff));
  const double chi_n = std::sqrt(dd) * (1.0 - 1.0 / (4.0 * dd) + 1.0 / (21.0 * dd * dd));

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Vector mean = cfg.x0 ? Vector(((*cfg.x0 - cfg.lower).cwiseQuotient(width)).unaryExpr(&reflect_unit))
                       : Vector::Constant(d, 0.5);
  double sigma = cfg.sigma0;
  Matrix cov = Matrix::Identity(d, d);
  Matrix basis = Matrix::Identity(d, d);
  Vector scales = Vector::Ones(d);
  Vector ps = Vector::Zero(d);
  Vector pc = Vector::Zero(d);

  auto to_box = [&](const Vector& u) -> Vector { return cfg.lower + u.cwiseProduct(width); };
  auto safe_eval = [&](const Vector& u) {
    const double f = objective(to_box(u));
    return std::isfinite(f) ? f : std::numeric_limits<double>::infinity();
  };

  OptimResult result;
  result.x_best = to_box(mean);
  result.f_best = std::numeric_limits<double>::infinity();

  const int history_len = 10 + static_cast<int>(std::ceil(30.0 * dd / lambda));
  std::vector<double> gen_best;

  std::vector<Vector> cand(static_cast<std::size_t>(lambda), Vector(d));
  std::vector<double> fit(static_cast<std::size_t>(lambda));
  std::vector<int> order(static_cast<std::size_t>(lambda));

  for (int gen = 0; result.evals + lambda <= cfg.max_evals; ++gen) {
    for (int k = 0; k < lambda; ++k) {
      Vector z(d);
      for (int i = 0; i < d; ++i) z[i] = gauss(rng);
      Vector u = mean + sigma * (basis * scales.cwiseProduct(z));
      cand[static_cast<std::size_t>(k)] = u.unaryExpr(&reflect_unit);
    }
    if (cfg.parallel) {
#pragma omp parallel for schedule(dynamic)
      for (int k = 0; k < lambda; ++k) fit[static_cast<std::size_t>(k)] = safe_eval(cand[static_cast<std::size_t>(k)]);
    } else {
      for (int k = 0; k < lambda; ++k) fit[static_cast<std::size_t>(k)] = safe_eval(cand[static_cast<std::size_t>(k)]);
    }
    result.evals += lambda;
    ++result.generations;

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return fit[static_cast<std::size_t>(a)] < fit[static_cast<std::size_t>(b)];
    });
    const auto best_k = static_cast<std::size_t>(order[0]);
    if (fit[best_k] < result.f_best) {
      result.f_best = fit[best_k];
      result.x_best = to_box(cand[best_k]);
    }
    result.best_trace.push_back(result.f_best);
    gen_best.push_back(fit[best_k]);

    const Vector old_mean = mean;
    mean.setZero();
    for (int i = 0; i < mu; ++i) mean += weights[i] * cand[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    const Vector yw = (mean - old_mean) / sigma;

    const Vector inv_sqrt_y = basis * (basis.transpose() * yw).cwiseQuotient(scales);
    ps = (1.0 - cs) * ps + std::sqrt(cs * (2.0 - cs) * mueff) * inv_sqrt_y;
    const double ps_norm = ps.norm();
    const bool hsig =
        ps_norm / std::sqrt(1.0 - std::pow(1.0 - cs, 2.0 * (gen + 1))) < (1.4 + 2.0 / (dd + 1.0)) * chi_n;
    pc = (1.0 - cc) * pc + (hsig ? std::sqrt(cc * (2.0 - cc) * mueff) : 0.0) * yw;

    Matrix rank_mu = Matrix::Zero(d, d);
    for (int i = 0; i < mu; ++i) {
      const Vector yi = (cand[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] - old_mean) / sigma;
      rank_mu += weights[i] * yi * yi.transpose();
    }
    cov = (1.0 - c1 - cmu) * cov + c1 * (pc * pc.transpose() + (hsig ? 0.0 : cc * (2.0 - cc)) * cov) +
          cmu * rank_mu;
    cov = 0.5 * (cov + cov.transpose());
    sigma *= std::exp((cs / damps) * (ps_norm / chi_n - 1.0));
    sigma = std::min(sigma, 1.0);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) break;
    basis = eig.eigenvectors();
    scales = eig.eigenvalues().cwiseMax(1e-300).cwiseSqrt();

    if (sigma * scales.maxCoeff() < 1e-13) break;
    if (static_cast<int>(gen_best.size()) >= history_len) {
      const auto first = gen_best.end() - history_len;
      const auto [lo, hi] = std::minmax_element(first, gen_best.end());
      const double spread_now = fit[static_cast<std::size_t>(order.back())] - fit[best_k];
      if (std::isfinite(*hi) && *hi - *lo < cfg.tol_fun && spread_now < cfg.tol_fun) break;
    }
  }
  return result;
}

OptimResult minimize_restarts(const Objective& objective, const OptimConfig& cfg, int restarts) {
  if (restarts < 1) throw ArgumentError("optim: restarts must be at least 1");
  OptimResult best;
  for (int r = 0; r < restarts; ++r) {
    OptimConfig run = cfg;
    run.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    if (r > 0) {
      std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r), 1));
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      Vector x0(cfg.lower.size());
      for (Eigen::Index i = 0; i < x0.size(); ++i) {
        x0[i] = cfg.lower[i] + unif(rng) * (cfg.upper[i] - cfg.lower[i]);
      }
      run.x0 = x0;
    }
    OptimResult res = minimize(objective, run);
    if (r == 0 || res.f_best < best.f_best) {
      const int evals = best.evals + res.evals;
      const int gens = best.generations + res.generations;
      best = std::move(res);
      best.evals = evals;
      best.generations = gens;
    } else {
      best.evals += res.evals;
      best.generations += res.generations;
    }
  }
  return best;
}

}  // namespace regime::optim
