#pragma once

#include "regime/core.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace regime::optim {

struct OptimConfig {
  Vector lower;
  Vector upper;
  int population = 0;  // 0 selects 4 + floor(3 ln d)
  int max_evals = 1000;
  std::uint64_t seed = 1;
  double tol_fun = 1e-12;
  double sigma0 = 0.3;        // initial step, as a fraction of the box width
  std::optional<Vector> x0;   // initial mean; box centre when absent
  bool parallel = false;      // evaluate a generation concurrently (objective must be pure)
};

struct OptimResult {
  Vector x_best;
  double f_best = 0.0;
  int evals = 0;
  int generations = 0;
  std::vector<double> best_trace;  // best-ever value after each generation
};

using Objective = std::function<double(const Vector&)>;

int default_population(int dimension);

// (mu/mu_w, lambda)-CMA-ES on a box. Candidates leaving the box are folded
// back by coordinate-wise reflection. Non-finite objective values count as
// +infinity. The best point ever evaluated is returned.
OptimResult minimize(const Objective& objective, const OptimConfig& cfg);

// Independent runs with seeds derived from cfg.seed; run 0 starts from
// cfg.x0 (or the centre), later runs from uniform random points. Returns
// the best run; the earliest wins ties.
OptimResult minimize_restarts(const Objective& objective, const OptimConfig& cfg, int restarts);

}  // namespace regime::optim
