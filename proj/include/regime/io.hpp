#pragma once

#include "regime/bench.hpp"
#include "regime/core.hpp"
#include "regime/pipeline.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace regime::io {

using Json = nlohmann::json;

struct Table {
  std::vector<std::string> header;
  Matrix values;
  std::vector<std::string> comments;  // '#' lines, without the marker
};

// Comma-separated numeric table with a header row. Lines starting with '#'
// are collected as comments. Errors name the 1-based line.
Table parse_csv(std::istream& in, const std::string& source);
Table read_csv(const std::filesystem::path& path);

void write_csv(std::ostream& out, const std::vector<std::string>& header, const Matrix& values,
               const std::vector<std::string>& comments = {});

// Shortest text that parses back to the same double.
std::string format_double(double v);

// Last column is the output.
ExperimentalDesign design_from_table(const Table& table);

// Configuration file: the key-value tree shared by all subcommands.
struct RunConfig {
  bench::ExperimentConfig experiment;  // includes the pipeline config and the master seed
  std::string report_csv = "report.csv";
  std::string summary_json = "summary.json";
};

RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);
Json to_json(const pipeline::PipelineConfig& cfg);

// Versioned pipeline artifact.
inline constexpr const char* kArtifactFormat = "regime-pipeline";
inline constexpr int kArtifactVersion = 1;
std::string schema_hash();

struct Artifact {
  pipeline::FittedPipeline pipeline;
  std::optional<pipeline::DirectModel> direct;
  std::uint64_t seed = 0;
  std::vector<std::string> input_names;
  std::string output_name;
  Json config;
};

Json artifact_to_json(const Artifact& a);
Artifact artifact_from_json(const Json& j);
void save_artifact(const std::filesystem::path& path, const Artifact& a);
Artifact load_artifact(const std::filesystem::path& path);

// Experiment reports.
void write_report_csv(std::ostream& out, const bench::ExperimentReport& report);
bench::ExperimentReport read_report_csv(const std::filesystem::path& path);
Json report_summary(const bench::ExperimentReport& report, const std::vector<bench::ThresholdResult>& thresholds);

}  // namespace regime::io
