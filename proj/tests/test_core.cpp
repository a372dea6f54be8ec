#include "oracles.hpp"

#include "regime/core.hpp"
#include "regime/distributions.hpp"
#include "regime/error.hpp"
#include "regime/sobol.hpp"

#include <doctest.h>

#include <random>

using namespace regime;

TEST_CASE("nmse and mae on small vectors") {
  const Vector t = (Vector(3) << 0, 1, 2).finished();
  const Vector p = (Vector(3) << 0, 1, 1).finished();
  CHECK(nmse(t, t) == 0.0);
  CHECK(nmse(t, Vector::Constant(3, 1.0)) == doctest::Approx(1.0));
  CHECK(nmse(t, p) == doctest::Approx(0.5));
  CHECK(mae(t, t) == 0.0);
  CHECK(mae(t, p) == doctest::Approx(1.0 / 3.0));
  const Vector u = (Vector(2) << 1, -1).finished();
  CHECK(mae(u, Vector::Zero(2)) == doctest::Approx(1.0));
}

TEST_CASE("nmse rejects bad input") {
  CHECK_THROWS_AS(nmse(Vector::Zero(3), Vector::Zero(2)), ArgumentError);
  CHECK_THROWS_AS(nmse(Vector::Ones(3), Vector::Zero(3)), DegenerateDataError);
  CHECK_THROWS_AS(mae(Vector(), Vector()), ArgumentError);
}

TEST_CASE("metric invariances") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    Vector t(30), p(30);
    for (int i = 0; i < 30; ++i) {
      t[i] = nd(rng);
      p[i] = t[i] + 0.3 * nd(rng);
    }
    const double base = nmse(t, p);
    const double shift = 4.0 * nd(rng);
    const double scale = (trial % 2 ? -1.0 : 1.0) * (0.1 + std::abs(nd(rng)));
    CHECK(nmse((t.array() + shift).matrix(), (p.array() + shift).matrix()) == doctest::Approx(base).epsilon(1e-10));
    CHECK(nmse((scale * t).eval(), (scale * p).eval()) == doctest::Approx(base).epsilon(1e-10));
    CHECK(mae((scale * t).eval(), (scale * p).eval()) == doctest::Approx(std::abs(scale) * mae(t, p)).epsilon(1e-12));
  }
}

TEST_CASE("standardizer") {
  Matrix x(2, 1);
  x << 0, 2;
  const Vector y = (Vector(2) << 1, 5).finished();
  const Standardizer s = fit_standardizer(ExperimentalDesign(x, y));
  CHECK(s.means()[0] == doctest::Approx(1.0));
  CHECK(s.stds()[0] == doctest::Approx(std::sqrt(2.0)));

  Matrix w(50, 3);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(2.0, 3.0);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
  const Standardizer s2 = fit_standardizer(ExperimentalDesign(w.leftCols(2), w.col(2)));
  const Matrix z = s2.standardize_joint(w);
  const Standardizer again = fit_standardizer(ExperimentalDesign(z.leftCols(2), z.col(2)));
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(again.means()[j]) < 1e-12);
    CHECK(again.stds()[j] == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Matrix back = s2.destandardize_joint(z);
  CHECK((back - w).cwiseAbs().maxCoeff() <= 1e-12 * w.cwiseAbs().maxCoeff());
  CHECK(s2.destandardize_output(s2.standardize_outputs(w.col(2))[7]) == doctest::Approx(w(7, 2)).epsilon(1e-12));

  Matrix c(3, 1);
  c << 5, 5, 5;
  CHECK_THROWS_AS(fit_standardizer(ExperimentalDesign(c, Vector::LinSpaced(3, 0, 1))), DegenerateDataError);
}

TEST_CASE("experimental design validation") {
  CHECK_THROWS_AS(ExperimentalDesign(Matrix::Zero(3, 2), Vector::Zero(2)), ArgumentError);
  Matrix x = Matrix::Zero(2, 1);
  x(1, 0) = std::nan("");
  CHECK_THROWS_AS(ExperimentalDesign(x, Vector::Zero(2)), ArgumentError);
}

TEST_CASE("sobol matches frozen reference rows") {
  const Matrix a = sobol_design(3, 1, 0);
  CHECK(a(0, 0) == 0.5);
  CHECK(a(1, 0) == 0.75);
  CHECK(a(2, 0) == 0.25);

  const Matrix s5 = sobol_design(8, 5, 0);
  const double expect[8][5] = {{0.5, 0.5, 0.5, 0.5, 0.5},
                               {0.75, 0.25, 0.25, 0.25, 0.75},
                               {0.25, 0.75, 0.75, 0.75, 0.25},
                               {0.375, 0.375, 0.625, 0.875, 0.375},
                               {0.875, 0.875, 0.125, 0.375, 0.875},
                               {0.625, 0.125, 0.875, 0.625, 0.625},
                               {0.125, 0.625, 0.375, 0.125, 0.125},
                               {0.1875, 0.3125, 0.9375, 0.4375, 0.5625}};
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 5; ++j) CHECK(s5(i, j) == expect[i][j]);
  }

  // Points 100, 511 and 1000 of the sequence (origin counted as point 0).
  const Matrix s32 = sobol_design(1000, 32, 0);
  const int cols[7] = {0, 1, 2, 5, 9, 17, 31};
  const double deep[3][7] = {
      {0.4140625, 0.2578125, 0.7734375, 0.7421875, 0.6953125, 0.7421875, 0.4140625},
      {0.001953125, 0.501953125, 0.408203125, 0.876953125, 0.201171875, 0.255859375, 0.212890625},
      {0.2197265625, 0.0966796875, 0.5185546875, 0.9072265625, 0.0693359375, 0.3447265625, 0.1455078125}};
  const int rows[3] = {99, 510, 999};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 7; ++c) CHECK(s32(rows[r], cols[c]) == deep[r][c]);
  }
}

TEST_CASE("sobol range, determinism and errors") {
  for (std::uint64_t seed : {0ULL, 1ULL, 77ULL, 123456789ULL}) {
    const Matrix s = sobol_design(500, 4, seed);
    CHECK(s.minCoeff() >= 0.0);
    CHECK(s.maxCoeff() < 1.0);
    CHECK(s == sobol_design(500, 4, seed));
  }
  CHECK(sobol_design(64, 3, 1) != sobol_design(64, 3, 2));
  CHECK_THROWS_AS(sobol_design(10, 0, 0), ArgumentError);
  CHECK_THROWS_AS(sobol_design(10, kSobolMaxDimension + 1, 0), UnsupportedDimensionError);
}

TEST_CASE("sobol has lower star discrepancy than pseudo-random points") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u;
  for (int d = 1; d <= 3; ++d) {
    const int n = d == 3 ? 32 : 64;
    const Matrix s = sobol_design(n, d, 0);
    Matrix r(n, d);
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = u(rng);
    CHECK(oracle::star_discrepancy(s) < oracle::star_discrepancy(r));
  }
}

TEST_CASE("marginal distributions") {
  const MarginalDistribution g(Family::Gaussian, 10.0, 0.05);
  CHECK(inverse_cdf(g, 0.5) == doctest::Approx(10.0).epsilon(1e-14));

  const MarginalDistribution gum(Family::Gumbel, 430.0, 0.2);
  // Moment matching: beta = sigma sqrt(6) / pi, location = mean - gamma_E beta.
  const double beta = 86.0 * std::sqrt(6.0) / std::numbers::pi;
  CHECK(gum.gumbel_scale() == doctest::Approx(beta).epsilon(1e-12));
  CHECK(gum.gumbel_scale() == doctest::Approx(67.05).epsilon(1e-3));
  CHECK(gum.gumbel_location() == doctest::Approx(430.0 - std::numbers::egamma * beta).epsilon(1e-12));
  CHECK(gum.gumbel_location() == doctest::Approx(391.3).epsilon(1e-3));

  const MarginalDistribution ln(Family::Lognormal, 210.0, 0.1);
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double s_ln = 0.0, s_g = 0.0, s_g2 = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    double v = u(rng);
    while (v == 0.0) v = u(rng);
    s_ln += inverse_cdf(ln, v);
    const double gv = inverse_cdf(gum, v);
    s_g += gv;
    s_g2 += gv * gv;
  }
  CHECK(s_ln / n == doctest::Approx(210.0).epsilon(0.005));
  const double mean_g = s_g / n;
  CHECK(mean_g == doctest::Approx(430.0).epsilon(0.005));
  CHECK(std::sqrt(s_g2 / n - mean_g * mean_g) == doctest::Approx(86.0).epsilon(0.01));
}

TEST_CASE("inverse cdf is strictly increasing and validates") {
  const MarginalDistribution ds[3] = {{Family::Gaussian, 10.0, 0.05},
                                      {Family::Lognormal, 210.0, 0.1},
                                      {Family::Gumbel, 430.0, 0.2}};
  for (const auto& d : ds) {
    double prev = -std::numeric_limits<double>::infinity();
    for (int k = 1; k < 1000; ++k) {
      const double v = inverse_cdf(d, k / 1000.0);
      CHECK(v > prev);
      prev = v;
    }
    CHECK_THROWS_AS(inverse_cdf(d, 0.0), ArgumentError);
    CHECK_THROWS_AS(inverse_cdf(d, 1.0), ArgumentError);
  }
  CHECK_THROWS_AS(MarginalDistribution(Family::Gaussian, 1.0, 0.0), ArgumentError);
  CHECK_THROWS_AS(MarginalDistribution(Family::Lognormal, -1.0, 0.1), ArgumentError);
  CHECK(family_from_string(to_string(Family::Gumbel)) == Family::Gumbel);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}
