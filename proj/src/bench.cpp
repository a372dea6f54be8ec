#include "regime/bench.hpp"

#include "regime/error.hpp"
#include "regime/sobol.hpp"
#include "regime/svc.hpp"

#include <boost/math/tools/roots.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <numbers>
#include <sstream>

namespace regime::bench {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;
constexpr std::uint64_t kValidationStream = 0x76616c69ULL;
constexpr std::uint64_t kFitStream = 0x666974ULL;

double find_root(const std::function<double(double)>& f, double lo, double hi) {
  std::uintmax_t max_iter = 200;
  const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(50),
                                                         max_iter);
  if (max_iter >= 200) throw NumericalError("truss: root finder did not converge");
  return 0.5 * (a + b);
}

double truss_w(double alpha, double alpha0, double l0) {
  return l0 * std::cos(alpha0) * (std::tan(alpha0) - std::tan(alpha));
}

}  // namespace

ManhattanBranch manhattan_branch(const Eigen::Ref<const Vector>& x) {
  if (x.size() != 2) throw ArgumentError("manhattan: expected a 2-vector");
  if (x[0] >= 0.0) return ManhattanBranch::Checkerboard;
  return x[1] < 0.0 ? ManhattanBranch::Sine : ManhattanBranch::Polynomial;
}

double manhattan(const Eigen::Ref<const Vector>& x, const ManhattanSpec& spec) {
  if (x.size() != 2) throw ArgumentError("manhattan: expected a 2-vector");
  if (!(std::abs(x[0]) <= 1.0 && std::abs(x[1]) <= 1.0)) {
    throw ArgumentError("manhattan: point outside [-1, 1]^2");
  }
  if (spec.checker_rows < 1 || spec.checker_cols < 1) throw ArgumentError("manhattan: checkerboard needs >= 1 cell");
  const double x1 = x[0];
  const double x2 = x[1];
  switch (manhattan_branch(x)) {
    case ManhattanBranch::Checkerboard: {
      const int col = std::min(static_cast<int>(std::floor(x1 * spec.checker_cols)), spec.checker_cols - 1);
      const int row = std::min(static_cast<int>(std::floor((x2 + 1.0) / 2.0 * spec.checker_rows)), spec.checker_rows - 1);
      return (row + col) % 2 == 0 ? 1.0 : 0.0;
    }
    case ManhattanBranch::Sine: return std::sin(7.0 * x1) * std::sin(4.0 * x2);
    case ManhattanBranch::Polynomial: {
      const double a = 2.0 * x1 + 1.0;
      const double b = 2.0 * x2 + 1.0;
      return 1.0 + 2.0 / 7.0 * a * a + b * b;
    }
  }
  return 0.0;
}

double TrussSpec::alpha0() const { return alpha0_deg * std::numbers::pi / 180.0; }

InputModel TrussSpec::input_model() const { return InputModel({load, modulus, area}); }

void TrussSpec::validate() const {
  if (!(alpha0_deg > 0.0 && alpha0_deg < 90.0)) throw ConfigError("truss.alpha0_deg: must lie in (0, 90)");
  if (!(l0 > 0.0)) throw ConfigError("truss.l0: must be positive");
  if (!(load_unit_scale > 0.0)) throw ConfigError("truss.load_unit_scale: must be positive");
}

double truss_load(double alpha, double ea, double alpha0) {
  return -2.0 * ea * std::tan(alpha) * (std::cos(alpha0) - std::cos(alpha));
}

// dP/dalpha vanishes where cos^3(alpha) = cos(alpha0).
double truss_critical_angle(double alpha0) { return std::acos(std::cbrt(std::cos(alpha0))); }

double truss_critical_load(double e, double a, double alpha0) {
  if (!(e > 0.0 && a > 0.0)) throw ArgumentError("truss: E and A must be positive");
  return truss_load(truss_critical_angle(alpha0), e * a, alpha0);
}

TrussState truss_state(double p, double e, double a, const TrussSpec& spec) {
  if (!(p >= 0.0)) throw ArgumentError("truss: load must be non-negative");
  if (!(e > 0.0 && a > 0.0)) throw ArgumentError("truss: E and A must be positive");
  const double a0 = spec.alpha0();
  const double ea = e * a;
  TrussState s;
  if (p == 0.0) {
    s.alpha = a0;
    return s;
  }
  const double ac = truss_critical_angle(a0);
  auto residual = [&](double alpha) { return truss_load(alpha, ea, a0) - p; };
  if (p <= truss_load(ac, ea, a0)) {
    s.alpha = find_root(residual, ac, a0);
  } else {
    // The post-snap branch rises monotonically from 0 at -alpha0 to infinity at -pi/2.
    double step = 1e-3;
    double lo = -a0 - step;
    while (residual(lo) < 0.0) {
      step *= 2.0;
      lo = std::max(-a0 - step, -kHalfPi + 1e-12);
      if (lo <= -kHalfPi + 1e-12 && residual(lo) < 0.0) {
        std::ostringstream msg;
        msg << "truss: no post-snap root bracketed for P=" << p << " N, EA=" << ea << " N";
        throw NumericalError(msg.str());
      }
    }
    s.alpha = find_root(residual, lo, -a0);
    s.snapped = true;
  }
  s.displacement = truss_w(s.alpha, a0, spec.l0);
  return s;
}

double truss_displacement(double p, double e, double a, const TrussSpec& spec) {
  return truss_state(p, e, a, spec).displacement;
}

namespace {

struct SiInputs {
  double p, e, a;
};

SiInputs to_si(const Eigen::Ref<const Vector>& x, const TrussSpec& spec) {
  if (x.size() != 3) throw ArgumentError("truss: expected (load, E, A)");
  return {x[0] * spec.load_unit_scale, x[1] * 1e9, x[2] * 1e-4};
}

}  // namespace

double truss_model(const Eigen::Ref<const Vector>& x, const TrussSpec& spec) {
  const SiInputs s = to_si(x, spec);
  return truss_displacement(s.p, s.e, s.a, spec);
}

bool truss_snapped(const Eigen::Ref<const Vector>& x, const TrussSpec& spec) {
  const SiInputs s = to_si(x, spec);
  return s.p > truss_critical_load(s.e, s.a, spec.alpha0());
}

std::string_view to_string(Problem p) { return p == Problem::Manhattan ? "manhattan" : "truss"; }

Problem problem_from_string(std::string_view s) {
  if (s == "manhattan") return Problem::Manhattan;
  if (s == "truss") return Problem::Truss;
  throw ConfigError("unknown problem '" + std::string(s) + "' (expected manhattan or truss)");
}

int ProblemSpec::input_dimension() const { return problem == Problem::Manhattan ? 2 : 3; }

Matrix ProblemSpec::sample_inputs(Eigen::Index n, std::uint64_t seed) const {
  Matrix u = sobol_design(n, input_dimension(), seed);
  if (problem == Problem::Manhattan) return (2.0 * u.array() - 1.0).matrix();
  // Shift off the lattice so that no coordinate is exactly 0.
  u.array() += std::ldexp(1.0, -33);
  return truss.input_model().transform(u);
}

Vector ProblemSpec::evaluate(const Matrix& x) const {
  Vector y(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    y[i] = problem == Problem::Manhattan ? bench::manhattan(x.row(i).transpose(), manhattan)
                                         : truss_model(x.row(i).transpose(), truss);
  }
  return y;
}

std::vector<int> ProblemSpec::regimes(const Matrix& x) const {
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = problem == Problem::Manhattan
                                           ? static_cast<int>(manhattan_branch(x.row(i).transpose()))
                                           : static_cast<int>(truss_snapped(x.row(i).transpose(), truss));
  }
  return out;
}

std::string Threshold::describe() const {
  std::ostringstream s;
  const std::string where = n > 0 ? " at N=" + std::to_string(n) : " at every N";
  if (kind == Kind::MedianRatio) {
    s << "median " << metric << "(" << pipeline::to_string(method) << ") " << (strict ? "<" : "<=") << " "
      << max_ratio << " x median " << metric << "(" << pipeline::to_string(baseline) << ")" << where;
  } else {
    s << "K in [" << k_min << ", " << k_max << "] in >= " << min_runs << " repetitions" << where;
  }
  return s.str();
}

void ExperimentConfig::validate() const {
  pipeline.validate();
  if (problem.problem == Problem::Truss) problem.truss.validate();
  if (sizes.empty()) throw ConfigError("sizes: at least one design size required");
  for (int n : sizes) {
    if (n < 10) throw ConfigError("sizes: every design size must be >= 10");
  }
  if (repetitions < 1) throw ConfigError("repetitions: must be positive");
  if (validation_size < 1) throw ConfigError("validation_size: must be positive");
  if (methods.empty()) throw ConfigError("methods: at least one method required");
  for (const auto& t : thresholds) {
    if (t.metric != "nmse" && t.metric != "mae") throw ConfigError("thresholds.metric: expected nmse or mae");
  }
}

std::uint64_t design_seed(std::uint64_t master, int n, int rep) {
  return derive_seed(master, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(rep));
}

std::uint64_t validation_seed(std::uint64_t master, int rep) {
  return derive_seed(master, kValidationStream, static_cast<std::uint64_t>(rep));
}

std::uint64_t fit_seed(std::uint64_t master, int n, int rep) {
  return derive_seed(master ^ kFitStream, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(rep));
}

double quantile(std::vector<double> values, double q) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<CellSummary> ExperimentReport::summarize() const {
  std::map<std::pair<int, int>, std::pair<std::vector<double>, std::vector<double>>> cells;
  std::map<std::pair<int, int>, int> failures;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.n, static_cast<int>(r.method));
    auto& [nm, ma] = cells[key];
    if (r.error.empty()) {
      nm.push_back(r.nmse);
      ma.push_back(r.mae);
    } else {
      ++failures[key];
    }
  }
  std::vector<CellSummary> out;
  for (const auto& [key, v] : cells) {
    CellSummary c;
    c.n = key.first;
    c.method = static_cast<pipeline::Mode>(key.second);
    c.runs = static_cast<int>(v.first.size());
    c.failures = failures[key];
    c.nmse_median = quantile(v.first, 0.5);
    c.nmse_q1 = quantile(v.first, 0.25);
    c.nmse_q3 = quantile(v.first, 0.75);
    c.mae_median = quantile(v.second, 0.5);
    c.mae_q1 = quantile(v.second, 0.25);
    c.mae_q3 = quantile(v.second, 0.75);
    out.push_back(c);
  }
  return out;
}

namespace {

double max_kkt(const pipeline::FittedPipeline& fp, const Matrix& x) {
  if (!fp.classifier) return 0.0;
  const Matrix xs = fp.standardizer.standardize_inputs(x);
  double worst = 0.0;
  for (const auto& pc : fp.classifier->pairs) {
    std::vector<Eigen::Index> rows;
    std::vector<int> y;
    for (std::size_t i = 0; i < fp.labels.size(); ++i) {
      if (fp.labels[i] == pc.first || fp.labels[i] == pc.second) {
        rows.push_back(static_cast<Eigen::Index>(i));
        y.push_back(fp.labels[i] == pc.first ? 1 : -1);
      }
    }
    // Support indices refer to the full design; map them back onto the pair subset.
    Matrix sub(static_cast<Eigen::Index>(rows.size()), xs.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = xs.row(rows[r]);
    svc::BinarySvcModel local = pc.model;
    for (auto& s : local.support_indices) {
      s = std::lower_bound(rows.begin(), rows.end(), s) - rows.begin();
    }
    worst = std::max(worst, svc::kkt_violation(local, sub, y));
  }
  return worst;
}

struct CellOutput {
  std::vector<ReportRow> rows;
  FitDiagnostics diag;
  bool fitted = false;
};

struct Validation {
  Matrix x;
  Vector y;
};

CellOutput run_cell(const ExperimentConfig& cfg, int n, int rep, const Validation& val) {
  using Clock = std::chrono::steady_clock;
  CellOutput out;
  const std::string problem{to_string(cfg.problem.problem)};
  const std::uint64_t dseed = design_seed(cfg.seed, n, rep);
  const std::uint64_t fseed = fit_seed(cfg.seed, n, rep);

  auto row_for = [&](pipeline::Mode m) {
    ReportRow r;
    r.problem = problem;
    r.method = m;
    r.n = n;
    r.rep = rep;
    r.seed = dseed;
    return r;
  };
  auto score = [&](ReportRow& r, const std::vector<pipeline::Prediction>& preds) {
    Vector mean(static_cast<Eigen::Index>(preds.size()));
    for (std::size_t i = 0; i < preds.size(); ++i) mean[static_cast<Eigen::Index>(i)] = preds[i].mean;
    r.nmse = nmse(val.y, mean);
    r.mae = mae(val.y, mean);
  };

  std::optional<ExperimentalDesign> ed;
  std::string design_error;
  try {
    const Matrix x = cfg.problem.sample_inputs(n, dseed);
    ed.emplace(x, cfg.problem.evaluate(x));
  } catch (const std::exception& e) {
    design_error = e.what();
  }

  bool need_pipeline = false;
  for (auto m : cfg.methods) need_pipeline |= m != pipeline::Mode::Direct;

  std::optional<pipeline::FittedPipeline> fp;
  std::string fit_error = design_error;
  double pipeline_seconds = 0.0;
  if (need_pipeline && ed) {
    const auto t0 = Clock::now();
    try {
      fp = pipeline::fit_pipeline(*ed, cfg.pipeline, fseed);
      out.fitted = true;
      out.diag.n = n;
      out.diag.rep = rep;
      out.diag.k_clusters = fp->n_classes;
      out.diag.dpmm_clusters = fp->clustering.n_clusters;
      out.diag.max_elbo_drop = fp->clustering.max_elbo_drop;
      out.diag.max_kkt_violation = max_kkt(*fp, ed->inputs());
    } catch (const std::exception& e) {
      fit_error = e.what();
      spdlog::warn("bench: {} N={} rep={} pipeline failed: {}", problem, n, rep, e.what());
    }
    pipeline_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  }

  for (auto m : cfg.methods) {
    ReportRow r = row_for(m);
    try {
      if (!ed) throw InputError(design_error);
      if (m == pipeline::Mode::Direct) {
        const auto t0 = Clock::now();
        const auto dm = pipeline::fit_direct_baseline(*ed, cfg.pipeline.gp, cfg.pipeline.standardize, fseed);
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        score(r, pipeline::predict_batch(dm, val.x));
        r.k_clusters = 1;
        if (cfg.record_timings) r.fit_seconds = secs;
      } else {
        if (!fp) throw StageError("pipeline", fit_error);
        score(r, pipeline::predict_batch(*fp, val.x, m));
        r.k_clusters = fp->n_classes;
        if (cfg.record_timings) r.fit_seconds = pipeline_seconds;
      }
    } catch (const std::exception& e) {
      r.error = e.what();
      r.nmse = std::numeric_limits<double>::quiet_NaN();
      r.mae = std::numeric_limits<double>::quiet_NaN();
      if (m == pipeline::Mode::Direct) spdlog::warn("bench: {} N={} rep={} direct failed: {}", problem, n, rep, e.what());
    }
    out.rows.push_back(std::move(r));
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport report;
  report.problem = std::string(to_string(cfg.problem.problem));
  report.master_seed = cfg.seed;

  std::vector<Validation> validation(static_cast<std::size_t>(cfg.repetitions));
  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    auto& v = validation[static_cast<std::size_t>(rep)];
    v.x = cfg.problem.sample_inputs(cfg.validation_size, validation_seed(cfg.seed, rep));
    v.y = cfg.problem.evaluate(v.x);
  }

  std::vector<std::pair<int, int>> cells;
  for (int n : cfg.sizes) {
    for (int rep = 0; rep < cfg.repetitions; ++rep) cells.emplace_back(n, rep);
  }
  std::vector<CellOutput> outputs(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < cells.size(); ++c) {
    try {
      const auto [n, rep] = cells[c];
      outputs[c] = run_cell(cfg, n, rep, validation[static_cast<std::size_t>(rep)]);
      spdlog::info("bench: {} N={} rep={} done", report.problem, n, rep);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto& o : outputs) {
    for (auto& r : o.rows) report.rows.push_back(std::move(r));
    if (o.fitted) report.diagnostics.push_back(o.diag);
  }
  return report;
}

std::vector<ThresholdResult> evaluate_thresholds(const ExperimentReport& report,
                                                 const std::vector<Threshold>& thresholds) {
  const auto summary = report.summarize();
  std::vector<int> sizes;
  for (const auto& c : summary) {
    if (std::find(sizes.begin(), sizes.end(), c.n) == sizes.end()) sizes.push_back(c.n);
  }
  auto find_cell = [&](int n, pipeline::Mode m) -> const CellSummary* {
    for (const auto& c : summary) {
      if (c.n == n && c.method == m) return &c;
    }
    return nullptr;
  };

  std::vector<ThresholdResult> out;
  for (const auto& t : thresholds) {
    ThresholdResult res;
    res.description = t.describe();
    res.passed = true;
    std::ostringstream detail;
    const std::vector<int> check = t.n > 0 ? std::vector<int>{t.n} : sizes;
    for (int n : check) {
      if (t.kind == Threshold::Kind::MedianRatio) {
        const CellSummary* a = find_cell(n, t.method);
        const CellSummary* b = find_cell(n, t.baseline);
        if (!a || !b) {
          res.passed = false;
          detail << "N=" << n << ": missing cell; ";
          continue;
        }
        const double va = t.metric == "nmse" ? a->nmse_median : a->mae_median;
        const double vb = t.metric == "nmse" ? b->nmse_median : b->mae_median;
        const double bound = t.max_ratio * vb;
        const bool ok = t.strict ? va < bound : va <= bound;
        res.passed = res.passed && ok;
        detail << "N=" << n << ": " << va << " vs " << bound << "; ";
      } else {
        int hits = 0;
        int runs = 0;
        for (const auto& d : report.diagnostics) {
          if (d.n != n) continue;
          ++runs;
          hits += d.dpmm_clusters >= t.k_min && d.dpmm_clusters <= t.k_max;
        }
        const bool ok = runs > 0 && hits >= t.min_runs;
        res.passed = res.passed && ok;
        detail << "N=" << n << ": " << hits << "/" << runs << "; ";
      }
    }
    res.detail = detail.str();
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace regime::bench
