#pragma once

#include "regime/core.hpp"
#include "regime/distributions.hpp"
#include "regime/pipeline.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace regime::bench {

struct ManhattanSpec {
  int checker_rows = 4;
  int checker_cols = 4;
};

enum class ManhattanBranch { Checkerboard, Sine, Polynomial };

ManhattanBranch manhattan_branch(const Eigen::Ref<const Vector>& x);
double manhattan(const Eigen::Ref<const Vector>& x, const ManhattanSpec& spec = {});

// Two-bar shallow truss. Loads in newtons, moduli in pascals, areas in m^2.
struct TrussSpec {
  double l0 = 5.0;             // m
  double alpha0_deg = 10.0;
  double load_unit_scale = 1000.0;  // sampled load (table units) -> newtons
  // Load (N before scaling), Young's modulus (GPa), area (cm^2).
  MarginalDistribution load{Family::Gumbel, 430.0, 0.20};
  MarginalDistribution modulus{Family::Lognormal, 210.0, 0.10};
  MarginalDistribution area{Family::Gaussian, 10.0, 0.05};

  double alpha0() const;
  InputModel input_model() const;
  void validate() const;
};

// Load carried at inclination alpha.
double truss_load(double alpha, double ea, double alpha0);
// Inclination of the limit point, where dP/dalpha = 0 on (0, alpha0).
double truss_critical_angle(double alpha0);
double truss_critical_load(double e, double a, double alpha0);

struct TrussState {
  double alpha = 0.0;
  double displacement = 0.0;
  bool snapped = false;
};

TrussState truss_state(double p, double e, double a, const TrussSpec& spec = {});
double truss_displacement(double p, double e, double a, const TrussSpec& spec = {});

// Model in table units: x = (load, E [GPa], A [cm^2]).
double truss_model(const Eigen::Ref<const Vector>& x, const TrussSpec& spec = {});
bool truss_snapped(const Eigen::Ref<const Vector>& x, const TrussSpec& spec = {});

enum class Problem { Manhattan, Truss };

std::string_view to_string(Problem p);
Problem problem_from_string(std::string_view s);

struct ProblemSpec {
  Problem problem = Problem::Manhattan;
  ManhattanSpec manhattan;
  TrussSpec truss;

  int input_dimension() const;
  // Shifted-Sobol design in the problem's input space.
  Matrix sample_inputs(Eigen::Index n, std::uint64_t seed) const;
  Vector evaluate(const Matrix& x) const;
  // Ground-truth regime of every row (Manhattan branch, truss snapped/not).
  std::vector<int> regimes(const Matrix& x) const;
};

// Acceptance threshold checked against a finished report.
struct Threshold {
  enum class Kind { MedianRatio, ClusterCount };
  Kind kind = Kind::MedianRatio;
  // MedianRatio: median(metric of method) <= max_ratio * median(metric of baseline),
  // strictly below when strict is set.
  std::string metric = "nmse";
  pipeline::Mode method = pipeline::Mode::Hard;
  pipeline::Mode baseline = pipeline::Mode::Direct;
  double max_ratio = 1.0;
  bool strict = true;
  // ClusterCount: at least min_runs repetitions whose mixture returned K in
  // [k_min, k_max] clusters.
  int k_min = 1;
  int k_max = 1;
  int min_runs = 0;
  int n = 0;  // design size; 0 checks every size

  std::string describe() const;
};

struct ExperimentConfig {
  ProblemSpec problem;
  std::vector<int> sizes{100, 200, 400};
  int repetitions = 20;
  std::vector<pipeline::Mode> methods{pipeline::Mode::Direct, pipeline::Mode::Hard, pipeline::Mode::Soft,
                                      pipeline::Mode::Categorical};
  int validation_size = 10000;
  pipeline::PipelineConfig pipeline;
  std::uint64_t seed = 1;
  bool record_timings = false;
  std::vector<Threshold> thresholds;

  void validate() const;
};

struct ReportRow {
  std::string problem;
  pipeline::Mode method = pipeline::Mode::Direct;
  int n = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  double nmse = 0.0;
  double mae = 0.0;
  int k_clusters = 0;
  std::optional<double> fit_seconds;
  std::string error;  // empty on success
};

struct CellSummary {
  pipeline::Mode method = pipeline::Mode::Direct;
  int n = 0;
  int runs = 0;
  int failures = 0;
  double nmse_median = 0.0, nmse_q1 = 0.0, nmse_q3 = 0.0;
  double mae_median = 0.0, mae_q1 = 0.0, mae_q3 = 0.0;
};

// Per fitted pipeline, for soundness checks across a run.
struct FitDiagnostics {
  int n = 0;
  int rep = 0;
  int k_clusters = 0;     // after small clusters are merged
  int dpmm_clusters = 0;  // as returned by the mixture
  double max_elbo_drop = 0.0;
  double max_kkt_violation = 0.0;
};

struct ThresholdResult {
  std::string description;
  bool passed = false;
  std::string detail;
};

struct ExperimentReport {
  std::string problem;
  std::uint64_t master_seed = 0;
  std::vector<ReportRow> rows;  // ordered by (N, rep, method)
  std::vector<FitDiagnostics> diagnostics;

  std::vector<CellSummary> summarize() const;
};

// Seeds of one repetition: the training design depends on (N, rep), the
// validation set on rep only, so all methods and sizes share it.
std::uint64_t design_seed(std::uint64_t master, int n, int rep);
std::uint64_t validation_seed(std::uint64_t master, int rep);
std::uint64_t fit_seed(std::uint64_t master, int n, int rep);

ExperimentReport run_experiment(const ExperimentConfig& cfg);

std::vector<ThresholdResult> evaluate_thresholds(const ExperimentReport& report,
                                                 const std::vector<Threshold>& thresholds);

// Linear-interpolation quantile of the finite values.
double quantile(std::vector<double> values, double q);

}  // namespace regime::bench
