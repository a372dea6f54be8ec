#include "oracles.hpp"

#include "regime/error.hpp"
#include "regime/gp.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

using namespace regime;

namespace {

Matrix uniform_points(int n, int m, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix x(n, m);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

Vector smooth(const Matrix& x) {
  Vector y(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    y[i] = std::sin(3.0 * x(i, 0)) + (x.cols() > 1 ? x(i, 1) * x(i, 1) : 0.0);
  }
  return y;
}

Matrix corr_matrix(const Correlation& k, const Matrix& a, const Matrix& b) {
  Matrix r(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) r(i, j) = k(a.row(i).transpose(), b.row(j).transpose());
  }
  return r;
}

oracle::KrigingResult dense_prediction(const gp::GpModel& m, const Vector& x) {
  const Correlation k = m.correlation();
  const Matrix& xt = m.training_inputs;
  const Matrix r = corr_matrix(k, xt, xt) + m.nugget * Matrix::Identity(xt.rows(), xt.rows());
  const Matrix f = gp::trend_matrix(m.trend, xt);
  Vector rx(xt.rows());
  for (Eigen::Index i = 0; i < xt.rows(); ++i) rx[i] = k(xt.row(i).transpose(), x);
  return oracle::bordered_kriging(r, f, m.training_outputs, rx, gp::trend_vector(m.trend, x));
}

Matrix sin_inputs(int n) {
  Matrix x(n, 1);
  for (int i = 0; i < n; ++i) x(i, 0) = 2.0 * std::numbers::pi * i / (n - 1);
  return x;
}

}  // namespace

TEST_CASE("matern 5/2") {
  const Vector a = (Vector(2) << 0.1, 0.2).finished();
  CHECK(matern52(a, a, Vector::Ones(2)) == 1.0);
  const double h = 1.0;
  const double expect = (1.0 + std::sqrt(5.0) * h + 5.0 / 3.0 * h * h) * std::exp(-std::sqrt(5.0) * h);
  CHECK(matern52(Vector::Zero(1), Vector::Ones(1), Vector::Ones(1)) == doctest::Approx(expect).epsilon(1e-15));
  CHECK(expect == doctest::Approx(0.52399).epsilon(1e-5));
  double prev = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double v = matern52(Vector::Zero(1), Vector::Constant(1, 0.02 * k), Vector::Constant(1, 0.7));
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("categorical correlation") {
  CHECK(categorical_correlation(2, 2, 0.3) == 1.0);
  CHECK(categorical_correlation(1, 2, 1.0) == doctest::Approx(std::exp(-0.5)));
  CHECK(categorical_correlation(1, 2, 1e6) == doctest::Approx(1.0).epsilon(1e-11));
  CHECK(categorical_correlation(1, 2, 1e-3) < 1e-10);
  CHECK_THROWS_AS(categorical_correlation(1, 2, 0.0), ArgumentError);
}

TEST_CASE("likelihood matches the dense Gaussian density") {
  for (int trend = 0; trend <= 1; ++trend) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Matrix x = uniform_points(10, 2, s);
      const Vector y = smooth(x);
      const Vector theta = (Vector(2) << 0.3 + 0.1 * static_cast<double>(s), 0.8).finished();
      const double nugget = 1e-6;
      const gp::TrendSpec ts{trend};
      const double nll = gp::negative_log_likelihood(x, y, ts, CorrelationFamily::Matern52, theta, nugget);
      const Correlation k{CorrelationFamily::Matern52, theta};
      const Matrix r = corr_matrix(k, x, x) + nugget * Matrix::Identity(10, 10);
      const Matrix f = gp::trend_matrix(ts, x);
      const auto ref = oracle::bordered_kriging(r, f, y, r.col(0), f.row(0).transpose());
      const double dense = -oracle::gaussian_log_density(r, f * ref.beta, y, ref.sigma2);
      CHECK(std::abs(nll - dense) < 1e-8 * std::max(1.0, std::abs(dense)));

      // Reordering the training points.
      std::vector<Eigen::Index> perm(10);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), std::mt19937_64(s));
      Matrix xp(10, 2);
      Vector yp(10);
      for (int i = 0; i < 10; ++i) {
        xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
        yp[i] = y[perm[static_cast<std::size_t>(i)]];
      }
      CHECK(gp::negative_log_likelihood(xp, yp, ts, CorrelationFamily::Matern52, theta, nugget) ==
            doctest::Approx(nll).epsilon(1e-10));
    }
  }
}

TEST_CASE("a larger nugget raises the best attainable likelihood value on noiseless data") {
  const Matrix x = sin_inputs(12);
  const Vector y = x.col(0).array().sin();
  double prev = -std::numeric_limits<double>::infinity();
  for (double nugget : {1e-8, 1e-4, 1e-2, 1e-1}) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 400; ++k) {
      const Vector theta = Vector::Constant(1, std::pow(10.0, -2.0 + 4.0 * k / 400.0));
      best = std::min(best, gp::negative_log_likelihood(x, y, {}, CorrelationFamily::Matern52, theta, nugget));
    }
    CHECK(best > prev);
    prev = best;
  }
}

TEST_CASE("prediction matches the bordered kriging oracle") {
  for (int trend = 0; trend <= 1; ++trend) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Matrix x = uniform_points(10, 2, 100 + s);
      const Vector y = smooth(x);
      const Vector theta = (Vector(2) << 0.2 + 0.05 * static_cast<double>(s), 0.5).finished();
      const auto fam = s % 2 ? CorrelationFamily::Gaussian : CorrelationFamily::Matern52;
      const auto m = gp::assemble(x, y, gp::TrendSpec{trend}, fam, theta, 0.0);
      const Matrix probe = uniform_points(20, 2, 900 + s, -0.5, 1.5);
      for (Eigen::Index i = 0; i < probe.rows(); ++i) {
        const Vector p = probe.row(i).transpose();
        const auto got = gp::predict(m, p);
        const auto ref = dense_prediction(m, p);
        CHECK(std::abs(got.mean - ref.mean) < 1e-8);
        CHECK(std::abs(got.variance - std::max(0.0, ref.variance)) < 1e-8);
      }
      CHECK((m.beta_hat - dense_prediction(m, probe.row(0).transpose()).beta).cwiseAbs().maxCoeff() < 1e-8);
      // Interpolation at the training points.
      for (Eigen::Index i = 0; i < 10; ++i) {
        const auto got = gp::predict(m, x.row(i).transpose());
        CHECK(std::abs(got.mean - y[i]) < 1e-6);
        CHECK(got.variance < 1e-8 * m.sigma2_hat);
      }
      // Stored factor reconstructs R + nugget I.
      const Matrix r = corr_matrix(m.correlation(), x, x) + m.nugget * Matrix::Identity(10, 10);
      CHECK((m.chol_R * m.chol_R.transpose() - r).norm() <= 1e-8 * r.norm());
    }
  }
}

TEST_CASE("far from the data the prediction reverts to the trend") {
  const Matrix x = uniform_points(12, 1, 3);
  const auto m = gp::assemble(x, smooth(x), {}, CorrelationFamily::Matern52, Vector::Constant(1, 0.2), 0.0);
  const auto p = gp::predict(m, Vector::Constant(1, 100.0));
  CHECK(p.mean == doctest::Approx(m.beta_hat[0]).epsilon(1e-12));
  // u = F'R^-1 r - f = -1 when r vanishes.
  const Matrix a = m.chol_FtRF * m.chol_FtRF.transpose();
  const double expect = m.sigma2_hat * (1.0 + 1.0 / a(0, 0));
  CHECK(p.variance == doctest::Approx(expect).epsilon(1e-10));
  CHECK(p.variance >= m.sigma2_hat);
}

TEST_CASE("predictive mean is linear in the outputs") {
  const Matrix x = uniform_points(15, 2, 8);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  const Vector y1 = Vector::NullaryExpr(15, [&] { return nd(rng); });
  const Vector y2 = Vector::NullaryExpr(15, [&] { return nd(rng); });
  const Vector y3 = Vector::NullaryExpr(15, [&] { return nd(rng); });
  const Vector theta = (Vector(2) << 0.4, 0.6).finished();
  auto model = [&](const Vector& y) { return gp::assemble(x, y, gp::TrendSpec{1}, CorrelationFamily::Matern52, theta, 1e-8); };
  const auto m1 = model(y1), m2 = model(y2), m3 = model(y3), mc = model(2.0 * y1 - 0.5 * y2 + 3.0 * y3);
  const Matrix probe = uniform_points(30, 2, 4);
  for (Eigen::Index i = 0; i < probe.rows(); ++i) {
    const Vector p = probe.row(i).transpose();
    const double lin = 2.0 * gp::predict(m1, p).mean - 0.5 * gp::predict(m2, p).mean + 3.0 * gp::predict(m3, p).mean;
    CHECK(std::abs(gp::predict(mc, p).mean - lin) < 1e-9);
  }
}

TEST_CASE("variance at training points is bounded by the nugget") {
  const Matrix x = uniform_points(20, 2, 6);
  for (double nugget : {1e-6, 1e-3, 1e-1}) {
    const auto m = gp::assemble(x, smooth(x), gp::TrendSpec{1}, CorrelationFamily::Matern52,
                                (Vector(2) << 0.5, 0.5).finished(), nugget);
    for (Eigen::Index i = 0; i < 20; ++i) {
      CHECK(gp::predict(m, x.row(i).transpose()).variance <= m.sigma2_hat * m.nugget * (1.0 + 1e-6));
    }
  }
}

TEST_CASE("fit on sin data") {
  const Matrix x = sin_inputs(10);
  const Vector y = x.col(0).array().sin();
  gp::FitOptions opts;
  const auto m = gp::fit(x, y, opts, 3);
  const Matrix grid = Vector::LinSpaced(1000, 0.0, 2.0 * std::numbers::pi);
  Vector pred(1000);
  for (int i = 0; i < 1000; ++i) pred[i] = gp::predict(m, grid.row(i).transpose()).mean;
  CHECK(nmse(Vector(grid.col(0).array().sin()), pred) < 1e-3);

  const auto again = gp::fit(x, y, opts, 3);
  CHECK(again.lengthscales == m.lengthscales);
  CHECK(again.nll == m.nll);

  // Refit on the fitted mean at the training inputs.
  Vector yhat(10);
  for (int i = 0; i < 10; ++i) yhat[i] = gp::predict(m, x.row(i).transpose()).mean;
  const auto m2 = gp::fit(x, yhat, opts, 4);
  for (int i = 0; i < 10; ++i) CHECK(std::abs(gp::predict(m2, x.row(i).transpose()).mean - yhat[i]) < 1e-6);
}

TEST_CASE("fitted lengthscales are first-order stationary in the interior") {
  const Matrix x = uniform_points(25, 2, 12);
  const Vector y = smooth(x);
  gp::FitOptions opts;
  opts.evals_per_restart = 2000;
  const auto m = gp::fit(x, y, opts, 1);
  const Vector lt = m.lengthscales.array().log10();
  auto nll = [&](const Vector& l) {
    return gp::negative_log_likelihood(x, y, opts.trend, opts.family, Vector(Eigen::pow(10.0, l.array())), opts.nugget);
  };
  Vector grad(2);
  const double h = 1e-5;
  bool interior = true;
  for (int j = 0; j < 2; ++j) {
    interior = interior && lt[j] > opts.log10_theta_min + 0.05 && lt[j] < opts.log10_theta_max - 0.05;
    Vector a = lt, b = lt;
    a[j] += h;
    b[j] -= h;
    grad[j] = (nll(a) - nll(b)) / (2 * h);
  }
  REQUIRE(interior);
  CHECK(grad.norm() < 1e-2);
}

TEST_CASE("prediction is invariant under training-row permutation") {
  const Matrix x = uniform_points(15, 2, 21);
  const Vector y = smooth(x);
  std::vector<Eigen::Index> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
  Matrix xp(15, 2);
  Vector yp(15);
  for (int i = 0; i < 15; ++i) {
    xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    yp[i] = y[perm[static_cast<std::size_t>(i)]];
  }
  const Vector theta = (Vector(2) << 0.3, 0.7).finished();
  const auto a = gp::assemble(x, y, {}, CorrelationFamily::Matern52, theta, 1e-8);
  const auto b = gp::assemble(xp, yp, {}, CorrelationFamily::Matern52, theta, 1e-8);
  const Matrix probe = uniform_points(20, 2, 5);
  for (Eigen::Index i = 0; i < 20; ++i) {
    const auto pa = gp::predict(a, probe.row(i).transpose());
    const auto pb = gp::predict(b, probe.row(i).transpose());
    CHECK(std::abs(pa.mean - pb.mean) < 1e-9);
    CHECK(std::abs(pa.variance - pb.variance) < 1e-9);
  }
}

TEST_CASE("batch prediction agrees with the serial reference and single-point calls") {
  const Matrix x = uniform_points(40, 2, 31);
  const auto m = gp::assemble(x, smooth(x), gp::TrendSpec{1}, CorrelationFamily::Matern52,
                              (Vector(2) << 0.3, 0.4).finished(), 1e-8);
  const Matrix probe = uniform_points(1000, 2, 32);
  const auto par = gp::predict_batch(m, probe);
  const auto ser = gp::reference::predict_batch(m, probe);
  CHECK(par.mean == ser.mean);
  CHECK(par.variance == ser.variance);
  for (Eigen::Index i = 0; i < 1000; i += 37) {
    const auto p = gp::predict(m, probe.row(i).transpose());
    CHECK(std::abs(p.mean - par.mean[i]) < 1e-10);
    CHECK(std::abs(p.variance - par.variance[i]) < 1e-10);
  }
}

TEST_CASE("duplicates are merged and identifiability is checked") {
  Matrix x = uniform_points(10, 1, 40);
  Matrix xd(12, 1);
  xd << x, x.topRows(2);
  Vector yd = smooth(xd);
  const auto m = gp::fit(xd, yd, gp::FitOptions{}, 1);
  CHECK(m.training_inputs.rows() == 10);

  gp::FitOptions lin;
  lin.trend.degree = 1;
  Matrix two(2, 1);
  two << 0.1, 0.9;
  CHECK_THROWS_AS(gp::fit(two, Vector::Zero(2), lin, 1), IdentifiabilityError);
  Matrix same(3, 1);
  same << 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(gp::fit(same, Vector::Zero(3), gp::FitOptions{}, 1), IdentifiabilityError);
  gp::FitOptions bad;
  bad.nugget = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("categorical model: small theta_cat decouples the classes") {
  const Matrix x = uniform_points(24, 1, 50);
  std::vector<int> labels(24);
  Vector y(24);
  for (int i = 0; i < 24; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 2 + 1;
    y[i] = labels[static_cast<std::size_t>(i)] == 1 ? std::sin(4 * x(i, 0)) : 5.0 + x(i, 0) * x(i, 0);
  }
  const Vector theta = Vector::Constant(1, 0.1);
  const auto m = gp::assemble_categorical(x, labels, y, {}, CorrelationFamily::Gaussian, theta, 1e-3, 0.0);

  // Per-class blocks sharing a pooled GLS trend.
  const Correlation k{CorrelationFamily::Gaussian, theta};
  std::vector<Matrix> xs(2);
  std::vector<Vector> ys(2);
  for (int c = 0; c < 2; ++c) {
    std::vector<int> idx;
    for (int i = 0; i < 24; ++i) {
      if (labels[static_cast<std::size_t>(i)] == c + 1) idx.push_back(i);
    }
    xs[c].resize(static_cast<Eigen::Index>(idx.size()), 1);
    ys[c].resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      xs[c](static_cast<Eigen::Index>(r), 0) = x(idx[r], 0);
      ys[c][static_cast<Eigen::Index>(r)] = y[idx[r]];
    }
  }
  double num = 0.0, den = 0.0;
  std::vector<Matrix> rinv(2);
  for (int c = 0; c < 2; ++c) {
    const Matrix r = corr_matrix(k, xs[c], xs[c]) + m.base.nugget * Matrix::Identity(xs[c].rows(), xs[c].rows());
    rinv[c] = r.inverse();
    num += (rinv[c] * ys[c]).sum();
    den += rinv[c].sum();
  }
  const double beta = num / den;
  for (int c = 0; c < 2; ++c) {
    for (double u = 0.0; u <= 1.0; u += 0.05) {
      const Vector p = Vector::Constant(1, u);
      const Vector r = corr_matrix(k, p.transpose(), xs[c]).transpose();
      const double expect = beta + r.dot(rinv[c] * (ys[c].array() - beta).matrix());
      CHECK(std::abs(gp::predict_categorical(m, p, c + 1).mean - expect) < 1e-4);
    }
  }
  for (int i = 0; i < 24; ++i) {
    CHECK(std::abs(gp::predict_categorical(m, x.row(i).transpose(), labels[static_cast<std::size_t>(i)]).mean - y[i]) < 1e-6);
  }
}

TEST_CASE("categorical model on step data") {
  const Matrix x = uniform_points(30, 1, 60);
  std::vector<int> labels(30);
  Vector y(30);
  for (int i = 0; i < 30; ++i) {
    labels[static_cast<std::size_t>(i)] = i < 15 ? 1 : 2;
    y[i] = i < 15 ? 0.0 : 7.0;
  }
  const auto m = gp::fit_categorical(x, labels, y, gp::FitOptions{}, 2);
  CHECK(m.theta_cat > 0.0);
  const Matrix probe = uniform_points(50, 1, 61);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const Vector p = probe.row(i).transpose();
    const auto a = gp::predict_categorical(m, p, 1);
    const auto b = gp::predict_categorical(m, p, 2);
    CHECK(std::abs(a.mean) < 1e-3);
    CHECK(std::abs(b.mean - 7.0) < 1e-3);
    CHECK(a.variance >= 0.0);
    CHECK(b.variance >= 0.0);
  }
  CHECK_THROWS_AS(gp::predict_categorical(m, probe.row(0).transpose(), 3), ArgumentError);

  const std::vector<int> lab_batch(50, 2);
  const auto par = gp::predict_categorical_batch(m, probe, lab_batch);
  const auto ser = gp::reference::predict_categorical_batch(m, probe, lab_batch);
  CHECK(par.mean == ser.mean);
  CHECK(par.variance == ser.variance);
}

TEST_CASE("categorical model with one class reduces to the plain model") {
  const Matrix x = uniform_points(15, 2, 70);
  const Vector y = smooth(x);
  const std::vector<int> labels(15, 1);
  gp::FitOptions opts;
  const auto cm = gp::fit_categorical(x, labels, y, opts, 9);
  gp::FitOptions plain = opts;
  plain.family = opts.categorical_family;
  const auto pm = gp::fit(x, y, plain, 9);
  const Matrix probe = uniform_points(30, 2, 71);
  for (Eigen::Index i = 0; i < 30; ++i) {
    const Vector p = probe.row(i).transpose();
    CHECK(std::abs(gp::predict_categorical(cm, p, 1).mean - gp::predict(pm, p).mean) < 1e-10);
    CHECK(std::abs(gp::predict_categorical(cm, p, 1).variance - gp::predict(pm, p).variance) < 1e-10);
  }
}
