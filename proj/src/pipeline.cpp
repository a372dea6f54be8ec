#include "regime/pipeline.hpp"

#include "regime/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

namespace regime::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <class F>
auto staged(const char* stage, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

Prediction from_local(const gp::GpPrediction& p, const Standardizer& s, Vector probs, int label) {
  Prediction out;
  out.mean = s.destandardize_output(p.mean);
  out.variance = s.destandardize_variance(p.variance);
  out.class_probs = std::move(probs);
  out.label = label;
  return out;
}

bool wants_local(Recombination r) { return r != Recombination::Categorical; }
bool wants_categorical(Recombination r) { return r == Recombination::Categorical || r == Recombination::All; }

void require_dimension(const FittedPipeline& fp, const Eigen::Ref<const Vector>& x) {
  if (x.size() != fp.standardizer.input_dimension()) {
    throw InputError("pipeline: expected " + std::to_string(fp.standardizer.input_dimension()) +
                     " inputs, got " + std::to_string(x.size()));
  }
  if (!x.allFinite()) throw ArgumentError("pipeline: non-finite input");
}

// Class label from the classifier and the coupled posteriors.
std::pair<int, Vector> classify(const FittedPipeline& fp, const Vector& xs) {
  if (!fp.classifier) return {1, Vector::Ones(1)};
  return {svc::predict_label(*fp.classifier, xs), svc::predict_class_probs(*fp.classifier, xs)};
}

}  // namespace

std::string_view to_string(Recombination r) {
  switch (r) {
    case Recombination::Hard: return "hard";
    case Recombination::Soft: return "soft";
    case Recombination::Categorical: return "categorical";
    case Recombination::All: return "all";
  }
  return "all";
}

Recombination recombination_from_string(std::string_view s) {
  if (s == "hard") return Recombination::Hard;
  if (s == "soft") return Recombination::Soft;
  if (s == "categorical") return Recombination::Categorical;
  if (s == "all") return Recombination::All;
  throw ConfigError("unknown recombination '" + std::string(s) + "' (expected hard, soft, categorical or all)");
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Hard: return "hard";
    case Mode::Soft: return "soft";
    case Mode::Categorical: return "categorical";
    case Mode::Direct: return "direct";
  }
  return "hard";
}

Mode mode_from_string(std::string_view s) {
  if (s == "hard") return Mode::Hard;
  if (s == "soft") return Mode::Soft;
  if (s == "categorical") return Mode::Categorical;
  if (s == "direct") return Mode::Direct;
  throw ArgumentError("unknown mode '" + std::string(s) + "' (expected hard, soft, categorical or direct)");
}

void PipelineConfig::validate() const {
  gp.validate();
  if (dpmm.alpha <= 0.0) throw ConfigError("dpmm.alpha: must be positive");
  if (dpmm.truncation < 1) throw ConfigError("dpmm.truncation: must be at least 1");
  if (dpmm.restarts < 1) throw ConfigError("dpmm.restarts: must be at least 1");
  if (svc.tune && svc.tuning.budget < 1) throw ConfigError("svc.budget: must be positive");
  if (!svc.tune && !(svc.fixed_c > 0.0 && svc.fixed_theta > 0.0)) {
    throw ConfigError("svc: fixed C and theta must be positive");
  }
}

bool FittedPipeline::supports(Mode mode) const {
  if (n_classes == 1) return mode != Mode::Direct;
  switch (mode) {
    case Mode::Hard:
    case Mode::Soft: return !local_gps.empty();
    case Mode::Categorical: return categorical_gp.has_value();
    case Mode::Direct: return false;
  }
  return false;
}

std::vector<int> merge_small_clusters(const Matrix& joint, const std::vector<int>& labels,
                                      const dpmm::ClusteringResult& clustering, int min_size) {
  const int k_raw = clustering.n_clusters;
  std::vector<int> out = labels;
  std::vector<int> counts(static_cast<std::size_t>(k_raw) + 1, 0);
  for (int l : out) ++counts[static_cast<std::size_t>(l)];

  std::vector<Eigen::LLT<Matrix>> chol(static_cast<std::size_t>(k_raw));
  for (int c = 0; c < k_raw; ++c) chol[static_cast<std::size_t>(c)].compute(clustering.cluster_covs[static_cast<std::size_t>(c)]);
  auto distance = [&](Eigen::Index i, int c) {
    const Vector diff = joint.row(i).transpose() - clustering.cluster_means.row(c - 1).transpose();
    const auto& llt = chol[static_cast<std::size_t>(c - 1)];
    if (llt.info() != Eigen::Success) return diff.squaredNorm();
    return llt.matrixL().solve(diff).squaredNorm();
  };

  for (;;) {
    int alive = 0;
    int victim = 0;
    for (int c = 1; c <= k_raw; ++c) {
      const int n = counts[static_cast<std::size_t>(c)];
      if (n == 0) continue;
      ++alive;
      if (n < min_size && (victim == 0 || n < counts[static_cast<std::size_t>(victim)])) victim = c;
    }
    if (alive <= 1 || victim == 0) break;
    spdlog::debug("pipeline: merging cluster {} ({} points)", victim, counts[static_cast<std::size_t>(victim)]);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] != victim) continue;
      int target = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int c = 1; c <= k_raw; ++c) {
        if (c == victim || counts[static_cast<std::size_t>(c)] == 0) continue;
        const double d = distance(static_cast<Eigen::Index>(i), c);
        if (d < best) {
          best = d;
          target = c;
        }
      }
      out[i] = target;
      ++counts[static_cast<std::size_t>(target)];
    }
    counts[static_cast<std::size_t>(victim)] = 0;
  }

  std::vector<int> renumber(static_cast<std::size_t>(k_raw) + 1, 0);
  int next = 0;
  for (int c = 1; c <= k_raw; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0) renumber[static_cast<std::size_t>(c)] = ++next;
  }
  for (int& l : out) l = renumber[static_cast<std::size_t>(l)];
  return out;
}

FittedPipeline fit_pipeline(const ExperimentalDesign& ed, const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (ed.size() < 10) throw ArgumentError("pipeline: need at least 10 training points, got " + std::to_string(ed.size()));
  FittedPipeline fp;
  fp.recombination = cfg.recombination;
  fp.standardizer = cfg.standardize ? fit_standardizer(ed) : Standardizer::identity(ed.dimension());
  const Matrix joint = fp.standardizer.standardize_joint(ed.joint());
  const Eigen::Index m = ed.dimension();
  const Matrix xs = joint.leftCols(m);
  const Vector ys = joint.col(m);

  auto t0 = Clock::now();
  fp.clustering = staged("clustering", [&] { return dpmm::fit(joint, cfg.dpmm, derive_seed(seed, 1)).result; });
  const int min_size = static_cast<int>(cfg.gp.trend.basis_size(m)) + 2;
  fp.labels = merge_small_clusters(joint, fp.clustering.labels, fp.clustering, min_size);
  fp.n_classes = *std::max_element(fp.labels.begin(), fp.labels.end());
  fp.timings.clustering = seconds_since(t0);
  spdlog::info("pipeline: {} clusters ({} before merging)", fp.n_classes, fp.clustering.n_clusters);

  t0 = Clock::now();
  if (fp.n_classes >= 2) {
    fp.classifier = staged("classification", [&] {
      return svc::train_multiclass(xs, fp.labels, fp.n_classes, cfg.svc, derive_seed(seed, 2));
    });
  }
  fp.timings.classification = seconds_since(t0);

  t0 = Clock::now();
  if (wants_local(cfg.recombination) || fp.n_classes == 1) {
    fp.local_gps.resize(static_cast<std::size_t>(fp.n_classes));
    for (int k = 1; k <= fp.n_classes; ++k) {
      std::vector<Eigen::Index> rows;
      for (std::size_t i = 0; i < fp.labels.size(); ++i) {
        if (fp.labels[i] == k) rows.push_back(static_cast<Eigen::Index>(i));
      }
      Matrix xk(static_cast<Eigen::Index>(rows.size()), m);
      Vector yk(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        xk.row(static_cast<Eigen::Index>(r)) = xs.row(rows[r]);
        yk[static_cast<Eigen::Index>(r)] = ys[rows[r]];
      }
      fp.local_gps[static_cast<std::size_t>(k - 1)] = staged("regression", [&] {
        return gp::fit(xk, yk, cfg.gp, derive_seed(seed, 3, static_cast<std::uint64_t>(k - 1)));
      });
    }
  }
  if (wants_categorical(cfg.recombination) && fp.n_classes >= 2) {
    fp.categorical_gp = staged("regression", [&] {
      return gp::fit_categorical(xs, fp.labels, ys, cfg.gp, derive_seed(seed, 4));
    });
  }
  fp.timings.regression = seconds_since(t0);
  return fp;
}

Prediction predict_hard(const FittedPipeline& fp, const Eigen::Ref<const Vector>& x) {
  require_dimension(fp, x);
  if (fp.local_gps.empty()) throw ArgumentError("pipeline: hard mode needs local GPs; refit with recombination hard/soft/all");
  const Vector xs = fp.standardizer.standardize_input(x);
  auto [label, probs] = classify(fp, xs);
  return from_local(gp::predict(fp.local_gps[static_cast<std::size_t>(label - 1)], xs), fp.standardizer,
                    std::move(probs), label);
}

Prediction predict_soft(const FittedPipeline& fp, const Eigen::Ref<const Vector>& x) {
  require_dimension(fp, x);
  if (fp.local_gps.empty()) throw ArgumentError("pipeline: soft mode needs local GPs; refit with recombination hard/soft/all");
  const Vector xs = fp.standardizer.standardize_input(x);
  auto [label, probs] = classify(fp, xs);
  double mean = 0.0;
  double second = 0.0;
  for (int k = 0; k < fp.n_classes; ++k) {
    const gp::GpPrediction p = gp::predict(fp.local_gps[static_cast<std::size_t>(k)], xs);
    mean += probs[k] * p.mean;
    second += probs[k] * (p.variance + p.mean * p.mean);
  }
  const gp::GpPrediction mix{mean, std::max(0.0, second - mean * mean)};
  return from_local(mix, fp.standardizer, std::move(probs), label);
}

Prediction predict_categorical(const FittedPipeline& fp, const Eigen::Ref<const Vector>& x) {
  require_dimension(fp, x);
  const Vector xs = fp.standardizer.standardize_input(x);
  auto [label, probs] = classify(fp, xs);
  if (fp.n_classes == 1) return from_local(gp::predict(fp.local_gps.front(), xs), fp.standardizer, std::move(probs), 1);
  if (!fp.categorical_gp) throw ArgumentError("pipeline: categorical mode needs the categorical GP; refit with recombination categorical/all");
  return from_local(gp::predict_categorical(*fp.categorical_gp, xs, label), fp.standardizer, std::move(probs), label);
}

Prediction predict(const FittedPipeline& fp, const Eigen::Ref<const Vector>& x, Mode mode) {
  switch (mode) {
    case Mode::Hard: return predict_hard(fp, x);
    case Mode::Soft: return predict_soft(fp, x);
    case Mode::Categorical: return predict_categorical(fp, x);
    case Mode::Direct: break;
  }
  throw ArgumentError("pipeline: direct mode needs a baseline model, not a fitted pipeline");
}

DirectModel fit_direct_baseline(const ExperimentalDesign& ed, const gp::FitOptions& opts, bool standardize,
                                std::uint64_t seed) {
  DirectModel dm;
  dm.standardizer = standardize ? fit_standardizer(ed) : Standardizer::identity(ed.dimension());
  const Matrix joint = dm.standardizer.standardize_joint(ed.joint());
  const Eigen::Index m = ed.dimension();
  dm.gp = gp::fit(joint.leftCols(m), joint.col(m), opts, derive_seed(seed, 3, 0));
  return dm;
}

Prediction predict_direct(const DirectModel& model, const Eigen::Ref<const Vector>& x) {
  if (x.size() != model.standardizer.input_dimension()) throw InputError("direct model: input dimension mismatch");
  const Vector xs = model.standardizer.standardize_input(x);
  return from_local(gp::predict(model.gp, xs), model.standardizer, Vector::Ones(1), 1);
}

std::vector<Prediction> predict_batch(const FittedPipeline& fp, const Matrix& x, Mode mode) {
  if (mode == Mode::Direct) throw ArgumentError("pipeline: direct mode needs a baseline model, not a fitted pipeline");
  if (x.cols() != fp.standardizer.input_dimension()) {
    throw InputError("pipeline: expected " + std::to_string(fp.standardizer.input_dimension()) + " inputs, got " +
                     std::to_string(x.cols()));
  }
  if (!x.allFinite()) throw ArgumentError("pipeline: non-finite input");
  if (mode != Mode::Categorical && fp.local_gps.empty()) throw ArgumentError("pipeline: mode needs local GPs");
  if (mode == Mode::Categorical && fp.n_classes > 1 && !fp.categorical_gp) {
    throw ArgumentError("pipeline: categorical mode needs the categorical GP");
  }
  const Eigen::Index n = x.rows();
  const Matrix xs = fp.standardizer.standardize_inputs(x);
  std::vector<Prediction> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 64)
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [label, probs] = classify(fp, xs.row(i).transpose());
    out[static_cast<std::size_t>(i)].label = label;
    out[static_cast<std::size_t>(i)].class_probs = std::move(probs);
  }

  Vector mean = Vector::Zero(n);
  Vector var = Vector::Zero(n);
  if (mode == Mode::Categorical && fp.n_classes > 1) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = out[i].label;
    const gp::BatchPrediction p = gp::predict_categorical_batch(*fp.categorical_gp, xs, labels);
    mean = p.mean;
    var = p.variance;
  } else if (mode == Mode::Soft) {
    Vector second = Vector::Zero(n);
    for (int k = 0; k < fp.n_classes; ++k) {
      const gp::BatchPrediction p = gp::predict_batch(fp.local_gps[static_cast<std::size_t>(k)], xs);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double w = out[static_cast<std::size_t>(i)].class_probs[k];
        mean[i] += w * p.mean[i];
        second[i] += w * (p.variance[i] + p.mean[i] * p.mean[i]);
      }
    }
    var = (second.array() - mean.array().square()).cwiseMax(0.0);
  } else {
    for (int k = 1; k <= fp.n_classes; ++k) {
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (out[static_cast<std::size_t>(i)].label == k) rows.push_back(i);
      }
      if (rows.empty()) continue;
      Matrix xk(static_cast<Eigen::Index>(rows.size()), xs.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) xk.row(static_cast<Eigen::Index>(r)) = xs.row(rows[r]);
      const gp::BatchPrediction p = gp::predict_batch(fp.local_gps[static_cast<std::size_t>(k - 1)], xk);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        mean[rows[r]] = p.mean[static_cast<Eigen::Index>(r)];
        var[rows[r]] = p.variance[static_cast<Eigen::Index>(r)];
      }
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)].mean = fp.standardizer.destandardize_output(mean[i]);
    out[static_cast<std::size_t>(i)].variance = fp.standardizer.destandardize_variance(var[i]);
  }
  return out;
}

std::vector<Prediction> predict_batch(const DirectModel& model, const Matrix& x) {
  if (x.cols() != model.standardizer.input_dimension()) throw InputError("direct model: input dimension mismatch");
  const gp::BatchPrediction p = gp::predict_batch(model.gp, model.standardizer.standardize_inputs(x));
  std::vector<Prediction> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto& o = out[static_cast<std::size_t>(i)];
    o.mean = model.standardizer.destandardize_output(p.mean[i]);
    o.variance = model.standardizer.destandardize_variance(p.variance[i]);
    o.class_probs = Vector::Ones(1);
    o.label = 1;
  }
  return out;
}

namespace reference {

std::vector<Prediction> predict_batch(const FittedPipeline& fp, const Matrix& x, Mode mode) {
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.push_back(predict(fp, x.row(i).transpose(), mode));
  return out;
}

}  // namespace reference

}  // namespace regime::pipeline
