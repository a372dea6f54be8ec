#pragma once

#include "regime/core.hpp"
#include "regime/kernels.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace regime::svc {

struct KernelParams {
  Vector lengthscales;
  GaussianConvention convention = GaussianConvention::Printed;

  double operator()(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) const {
    return gaussian_kernel(a, b, lengthscales, convention);
  }
};

struct SmoOptions {
  double tol = 1e-6;        // stop when the maximal KKT violating pair gap drops below tol
  long max_iter = 0;        // 0: max(10^7, 100 N)
};

// Dual solution on a subset of the rows of a precomputed Gram matrix.
struct DualSolution {
  Vector alpha;             // aligned with the index subset
  double bias = 0.0;
  double objective = 0.0;   // 1/2 a'Qa - sum a
  long iterations = 0;
  double gap = 0.0;         // final m(a) - M(a)
};

// Box-constrained soft-margin dual: min 1/2 a'Qa - 1'a, y'a = 0, 0 <= a <= C,
// solved by SMO with second-order working-set selection. `rows` selects the
// active subset of `gram`; `warm_start` must be feasible when given.
DualSolution solve_dual(const Matrix& gram, std::span<const int> y, std::span<const Eigen::Index> rows, double c,
                        const SmoOptions& opts = {}, const Vector* warm_start = nullptr);

struct BinarySvcModel {
  Matrix support_inputs;                    // S x M
  Vector support_coeffs;                    // alpha_i * label_i
  std::vector<Eigen::Index> support_indices;  // rows of the training matrix
  double bias = 0.0;
  double penalty = 1.0;
  KernelParams kernel;
  std::pair<int, int> labels{1, 2};         // (positive class id, negative class id)
  long iterations = 0;
  double objective = 0.0;
};

// labels are +1 / -1.
BinarySvcModel train_binary(const Matrix& x, std::span<const int> labels, double c, const KernelParams& kernel,
                            const SmoOptions& opts = {});

double decision(const BinarySvcModel& model, const Eigen::Ref<const Vector>& x);

// Largest violation of the KKT conditions of the trained model on its
// training set (margin y f(x) against the box status of each alpha).
double kkt_violation(const BinarySvcModel& model, const Matrix& x, std::span<const int> labels);

// Exact leave-one-out misclassification count. Only support vectors are
// retrained; removing any other point leaves the solution unchanged.
int loo_errors(const Matrix& x, std::span<const int> labels, double c, const KernelParams& kernel,
               double tol = 1e-3);

struct TuningBounds {
  double log10_c_min = -2.0;
  double log10_c_max = 4.0;
  double log10_theta_min = -2.0;
  double log10_theta_max = 2.0;
  bool anisotropic = false;
  int budget = 60;
  int population = 0;  // 0: CMA-ES default for the search dimension
  GaussianConvention convention = GaussianConvention::Printed;
  double loo_tol = 1e-3;  // SMO tolerance inside the LOO loop
};

struct TuningResult {
  double c = 1.0;
  KernelParams kernel;
  int loo_errors = 0;
  int evaluations = 0;
};

// CMA-ES over (log10 C, log10 theta) minimizing the exact LOO error count.
// Ties go to the larger (mean) lengthscale, then to the smaller C.
TuningResult tune_hyperparameters(const Matrix& x, std::span<const int> labels, const TuningBounds& bounds,
                                  std::uint64_t seed);

struct PlattCalibration {
  double slope = -1.0;     // A
  double intercept = 0.0;  // B

  // P(label = +1 | decision value f) = 1 / (1 + exp(A f + B)).
  double probability(double f) const;
};

PlattCalibration fit_platt(std::span<const double> decisions, std::span<const int> labels);

struct CouplingResult {
  Vector probabilities;
  int iterations = 0;
  bool converged = false;
};

// Stationary vector of the pairwise-coupling Markov chain by fixed-point
// iteration, started from the averaged pairwise estimate. `pairwise(i, j)`
// holds P(class i | class i or j).
CouplingResult coupled_posteriors(const Matrix& pairwise, double tol = 1e-10, int max_iters = 1000);

// Transition matrix whose stationary vector the coupling iteration targets.
Matrix coupling_transition(const Matrix& pairwise);

// Number of coupling solves that needed 100 or more iterations.
long slow_coupling_count();

struct PairClassifier {
  int first = 1;   // positive class
  int second = 2;  // negative class
  BinarySvcModel model;
  PlattCalibration platt;
};

struct MulticlassConfig {
  TuningBounds tuning;
  bool tune = true;
  double fixed_c = 10.0;        // used when tune == false
  double fixed_theta = 1.0;
  double smo_tol = 1e-6;
  int coupling_max_iters = 1000;
  double coupling_tol = 1e-10;
};

struct MulticlassSvc {
  int n_classes = 0;
  std::vector<PairClassifier> pairs;  // (i, j) for i < j, lexicographic
  int coupling_max_iters = 1000;
  double coupling_tol = 1e-10;

  const PairClassifier& pair(int i, int j) const;
};

// labels in 1..K, every class present.
MulticlassSvc train_multiclass(const Matrix& x, std::span<const int> labels, int n_classes,
                               const MulticlassConfig& cfg, std::uint64_t seed);

// K x K matrix of clamped Platt probabilities at x.
Matrix pairwise_probabilities(const MulticlassSvc& model, const Eigen::Ref<const Vector>& x);

int predict_label(const MulticlassSvc& model, const Eigen::Ref<const Vector>& x);
Vector predict_class_probs(const MulticlassSvc& model, const Eigen::Ref<const Vector>& x);

// Winner of a one-vs-one vote given each pair's decision sign and the
// coupled posteriors (used for ties among three or more classes).
int resolve_vote(int n_classes, const std::vector<std::pair<std::pair<int, int>, bool>>& verdicts,
                 const Vector& posteriors);

}  // namespace regime::svc
