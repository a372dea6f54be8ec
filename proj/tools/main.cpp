#include "regime/bench.hpp"
#include "regime/error.hpp"
#include "regime/io.hpp"
#include "regime/pipeline.hpp"

#include <CLI11.hpp>
#include <omp.h>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace {

using namespace regime;

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string artifact;
  std::string mode = "hard";
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

io::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? io::parse_run_config(io::Json::object()) : io::load_run_config(path);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  return out;
}

void print_fit_summary(std::ostream& os, const io::Artifact& a, double seconds) {
  const auto& fp = a.pipeline;
  os << "clusters: " << fp.n_classes << " (mixture found " << fp.clustering.n_clusters << ")\n";
  std::vector<int> counts(static_cast<std::size_t>(fp.n_classes), 0);
  for (int l : fp.labels) ++counts[static_cast<std::size_t>(l - 1)];
  for (int k = 0; k < fp.n_classes; ++k) os << "  cluster " << k + 1 << ": " << counts[static_cast<std::size_t>(k)] << " points\n";
  os << std::setprecision(4);
  os << "timings [s]: clustering " << fp.timings.clustering << ", classification " << fp.timings.classification
     << ", regression " << fp.timings.regression << ", total " << seconds << "\n";
  if (fp.classifier) {
    for (const auto& p : fp.classifier->pairs) {
      os << "  svc (" << p.first << "," << p.second << "): C=" << p.model.penalty << " theta=" << p.model.kernel.lengthscales.transpose()
         << " support=" << p.model.support_indices.size() << "\n";
    }
  }
  for (std::size_t k = 0; k < fp.local_gps.size(); ++k) {
    const auto& g = fp.local_gps[k];
    os << "  gp " << k + 1 << ": theta=" << g.lengthscales.transpose() << " sigma2=" << g.sigma2_hat << " nugget=" << g.nugget << "\n";
  }
  if (fp.categorical_gp) {
    os << "  categorical gp: theta=" << fp.categorical_gp->base.lengthscales.transpose()
       << " theta_cat=" << fp.categorical_gp->theta_cat << "\n";
  }
  if (a.direct) os << "  direct gp: theta=" << a.direct->gp.lengthscales.transpose() << "\n";
}

int cmd_fit(const Options& o) {
  if (o.data.empty() || o.out.empty()) throw ArgumentError("fit needs --data and --out");
  const io::RunConfig rc = config_or_default(o.config);
  const std::uint64_t seed = o.seed.value_or(rc.experiment.seed);
  const io::Table table = io::read_csv(o.data);
  const ExperimentalDesign ed = io::design_from_table(table);

  const auto t0 = std::chrono::steady_clock::now();
  io::Artifact a;
  a.seed = seed;
  a.input_names.assign(table.header.begin(), table.header.end() - 1);
  a.output_name = table.header.back();
  a.config = io::to_json(rc.experiment.pipeline);
  a.pipeline = pipeline::fit_pipeline(ed, rc.experiment.pipeline, seed);
  a.direct = pipeline::fit_direct_baseline(ed, rc.experiment.pipeline.gp, rc.experiment.pipeline.standardize, seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  io::save_artifact(o.out, a);
  auto summary = open_out(o.out + ".summary.txt");
  print_fit_summary(summary, a, secs);
  print_fit_summary(std::cout, a, secs);
  return 0;
}

int cmd_predict(const Options& o) {
  if (o.artifact.empty() || o.data.empty() || o.out.empty()) throw ArgumentError("predict needs --artifact, --data and --out");
  const io::Artifact a = io::load_artifact(o.artifact);
  const io::Table table = io::read_csv(o.data);
  const auto m = static_cast<Eigen::Index>(a.input_names.size());
  // Accept either exactly the inputs or the inputs followed by the output column.
  Matrix x;
  if (table.values.cols() == m || table.values.cols() == m + 1) {
    x = table.values.leftCols(m);
  } else {
    throw InputError(o.data + ": expected " + std::to_string(m) + " input columns, found " +
                     std::to_string(table.values.cols()));
  }
  const pipeline::Mode mode = pipeline::mode_from_string(o.mode);
  std::vector<pipeline::Prediction> preds;
  int k = a.pipeline.n_classes;
  if (mode == pipeline::Mode::Direct) {
    if (!a.direct) throw InputError("artifact has no direct baseline");
    preds = pipeline::predict_batch(*a.direct, x);
    k = 1;
  } else {
    if (!a.pipeline.supports(mode)) throw InputError("artifact was not fitted for mode " + o.mode);
    preds = pipeline::predict_batch(a.pipeline, x, mode);
  }
  std::vector<std::string> header(a.input_names.begin(), a.input_names.end());
  for (const char* h : {"mean", "variance", "label"}) header.emplace_back(h);
  for (int c = 1; c <= k; ++c) header.push_back("class_prob_" + std::to_string(c));
  Matrix out(x.rows(), m + 3 + k);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto& p = preds[static_cast<std::size_t>(i)];
    out.row(i).head(m) = x.row(i);
    out(i, m) = p.mean;
    out(i, m + 1) = p.variance;
    out(i, m + 2) = p.label;
    out.row(i).tail(k) = p.class_probs.transpose();
  }
  auto file = open_out(o.out);
  io::write_csv(file, header, out, {"seed=" + std::to_string(a.seed), "mode=" + o.mode});
  return 0;
}

int write_outputs(const bench::ExperimentReport& report, const std::vector<bench::ThresholdResult>& results,
                  const std::string& csv_path, const std::string& json_path) {
  if (!csv_path.empty()) {
    auto csv = open_out(csv_path);
    io::write_report_csv(csv, report);
  }
  auto json = open_out(json_path);
  json << io::report_summary(report, results).dump(2) << '\n';

  std::cout << std::left << std::setw(12) << "method" << std::setw(6) << "N" << std::setw(14) << "nmse_median"
            << std::setw(14) << "mae_median" << "failures\n";
  for (const auto& c : report.summarize()) {
    std::cout << std::setw(12) << pipeline::to_string(c.method) << std::setw(6) << c.n << std::setw(14)
              << c.nmse_median << std::setw(14) << c.mae_median << c.failures << "\n";
  }
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.description << "  [" << r.detail << "]\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 2;
}

int cmd_bench(const Options& o) {
  if (o.config.empty()) throw ArgumentError("bench needs --config");
  io::RunConfig rc = io::load_run_config(o.config);
  if (o.seed) rc.experiment.seed = *o.seed;
  std::string csv = rc.report_csv;
  std::string json = rc.summary_json;
  if (!o.out.empty()) {
    csv = o.out + ".csv";
    json = o.out + ".json";
  }
  const auto report = bench::run_experiment(rc.experiment);
  return write_outputs(report, bench::evaluate_thresholds(report, rc.experiment.thresholds), csv, json);
}

int cmd_report(const Options& o) {
  if (o.data.empty()) throw ArgumentError("report needs --data (a report CSV)");
  const auto report = io::read_report_csv(o.data);
  std::vector<bench::Threshold> thresholds;
  if (!o.config.empty()) thresholds = io::load_run_config(o.config).experiment.thresholds;
  const std::string out = o.out.empty() ? o.data + ".summary.json" : o.out;
  return write_outputs(report, bench::evaluate_thresholds(report, thresholds), "", out);
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("regime");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("REGIME_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));

  CLI::App app{"Clustering-classification-regression surrogates for discontinuous models"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--out", o.out, "output path");
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--threads", o.threads, "OpenMP threads (0: runtime default)")->check(CLI::NonNegativeNumber);
  };
  auto* fit = app.add_subcommand("fit", "fit a pipeline on a design CSV and write an artifact");
  common(fit);
  fit->add_option("--data", o.data, "CSV: input columns then the output column")->required();
  auto* predict = app.add_subcommand("predict", "predict with a fitted artifact");
  common(predict);
  predict->add_option("--artifact", o.artifact, "artifact written by fit")->required();
  predict->add_option("--data", o.data, "CSV of input points")->required();
  predict->add_option("--mode", o.mode, "hard, soft, categorical or direct")
      ->check(CLI::IsMember({"hard", "soft", "categorical", "direct"}));
  auto* bench = app.add_subcommand("bench", "run a benchmark experiment from a config");
  common(bench);
  auto* report = app.add_subcommand("report", "summarize an existing report CSV");
  common(report);
  report->add_option("--data", o.data, "report CSV")->required();

  CLI11_PARSE(app, argc, argv);
  if (o.threads > 0) omp_set_num_threads(o.threads);

  try {
    if (*fit) return cmd_fit(o);
    if (*predict) return cmd_predict(o);
    if (*bench) return cmd_bench(o);
    if (*report) return cmd_report(o);
  } catch (const regime::Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 1;
  }
  return 0;
}
