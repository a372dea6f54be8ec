#pragma once

#include "regime/core.hpp"
#include "regime/dpmm.hpp"
#include "regime/gp.hpp"
#include "regime/svc.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace regime::pipeline {

// Which local models fit_pipeline trains.
enum class Recombination { Hard, Soft, Categorical, All };

// How a fitted pipeline answers a query. Direct is only meaningful for the
// baseline model.
enum class Mode { Hard, Soft, Categorical, Direct };

std::string_view to_string(Recombination r);
Recombination recombination_from_string(std::string_view s);
std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

struct PipelineConfig {
  dpmm::DpmmConfig dpmm;
  svc::MulticlassConfig svc;
  gp::FitOptions gp;
  Recombination recombination = Recombination::All;
  bool standardize = true;

  void validate() const;
};

struct StageTimings {
  double clustering = 0.0;
  double classification = 0.0;
  double regression = 0.0;
};

struct FittedPipeline {
  Standardizer standardizer = Standardizer::identity(1);
  dpmm::ClusteringResult clustering;  // raw mixture output, before small clusters are merged
  std::vector<int> labels;            // 1..n_classes per training point, after merging
  int n_classes = 0;
  std::optional<svc::MulticlassSvc> classifier;        // absent when n_classes == 1
  std::vector<gp::GpModel> local_gps;                  // hard/soft modes, and always when n_classes == 1
  std::optional<gp::CategoricalGpModel> categorical_gp;
  Recombination recombination = Recombination::All;
  StageTimings timings;

  bool supports(Mode mode) const;
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
  Vector class_probs;
  int label = 1;
};

FittedPipeline fit_pipeline(const ExperimentalDesign& ed, const PipelineConfig& cfg, std::uint64_t seed);

Prediction predict_hard(const FittedPipeline& fp, const Eigen::Ref<const Vector>& x);
Prediction predict_soft(const FittedPipeline& fp, const Eigen::Ref<const Vector>& x);
Prediction predict_categorical(const FittedPipeline& fp, const Eigen::Ref<const Vector>& x);
Prediction predict(const FittedPipeline& fp, const Eigen::Ref<const Vector>& x, Mode mode);

// Single global GP on the whole design, in the same standardized space and
// with the same seed stream the pipeline uses for a lone cluster.
struct DirectModel {
  Standardizer standardizer = Standardizer::identity(1);
  gp::GpModel gp;
};

DirectModel fit_direct_baseline(const ExperimentalDesign& ed, const gp::FitOptions& opts, bool standardize,
                                std::uint64_t seed);
Prediction predict_direct(const DirectModel& model, const Eigen::Ref<const Vector>& x);

std::vector<Prediction> predict_batch(const FittedPipeline& fp, const Matrix& x, Mode mode);
std::vector<Prediction> predict_batch(const DirectModel& model, const Matrix& x);

namespace reference {
std::vector<Prediction> predict_batch(const FittedPipeline& fp, const Matrix& x, Mode mode);
}

// Reassigns members of clusters with fewer than `min_size` points to the
// nearest remaining cluster (Mahalanobis distance in the clustered space),
// smallest cluster first, then renumbers the survivors 1..K in order.
std::vector<int> merge_small_clusters(const Matrix& joint, const std::vector<int>& labels,
                                      const dpmm::ClusteringResult& clustering, int min_size);

}  // namespace regime::pipeline
