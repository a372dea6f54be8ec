#include "regime/error.hpp"
#include "regime/io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

using namespace regime;

namespace {

io::Table parse(const std::string& text) {
  std::istringstream in(text);
  return io::parse_csv(in, "mem.csv");
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

ExperimentalDesign step_design(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix x(n, 1);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    y[i] = 0.5 * x(i, 0) + (x(i, 0) >= 0 ? 3.0 : 0.0);
  }
  return {x, y};
}

}  // namespace

TEST_CASE("csv parsing") {
  const auto t = parse("# seed=4\nx1,x2,y\n1,2,3\n4.5,-1e-3,6\n\n");
  CHECK(t.header == std::vector<std::string>{"x1", "x2", "y"});
  CHECK(t.comments == std::vector<std::string>{"seed=4"});
  REQUIRE(t.values.rows() == 2);
  CHECK(t.values(1, 1) == -1e-3);
  const auto ed = io::design_from_table(t);
  CHECK(ed.dimension() == 2);
  CHECK(ed.outputs()[1] == 6.0);

  CHECK_THROWS_AS(parse(""), InputError);
  CHECK(error_of([] { parse(""); }).find("empty") != std::string::npos);
  CHECK_THROWS_AS(io::design_from_table(parse("x,y\n")), InputError);
  const std::string ragged = error_of([] { parse("a,b\n1,2\n3\n"); });
  CHECK(ragged.find("mem.csv:3") != std::string::npos);
  const std::string bad = error_of([] { parse("a,b\n1,2\n3,4\n5,abc\n"); });
  CHECK(bad.find("mem.csv:4") != std::string::npos);
  CHECK(bad.find("'b'") != std::string::npos);
  CHECK_THROWS_AS(io::read_csv("/nonexistent/file.csv"), InputError);
}

TEST_CASE("csv round trip preserves doubles exactly") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1e3);
  Matrix m(20, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng) * std::pow(10.0, static_cast<double>(i % 7) - 3);
  std::ostringstream out;
  io::write_csv(out, {"a", "b", "c"}, m, {"seed=1"});
  const auto t = parse(out.str());
  CHECK(t.values == m);
  CHECK(t.comments.front() == "seed=1");
  CHECK(io::format_double(0.1) == "0.1");
  CHECK(std::stod(io::format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("run configuration") {
  const auto rc = io::parse_run_config(io::Json::parse(R"({"problem": "truss", "sizes": [50], "repetitions": 3,
      "pipeline": {"gp": {"trend": "linear"}}, "output": {"report_csv": "r.csv"}})"));
  CHECK(rc.experiment.problem.problem == bench::Problem::Truss);
  CHECK(rc.experiment.sizes == std::vector<int>{50});
  CHECK(rc.experiment.repetitions == 3);
  CHECK(rc.experiment.pipeline.gp.trend.degree == 1);
  CHECK(rc.report_csv == "r.csv");

  const std::string unknown = error_of([] {
    io::parse_run_config(io::Json::parse(R"({"pipeline": {"svc": {"budgett": 5}}})"));
  });
  CHECK(unknown.find("pipeline.svc.budgett") != std::string::npos);
  CHECK_THROWS_AS(io::parse_run_config(io::Json::parse(R"({"pipeline": {"svc": {"budgett": 5}}})")), ConfigError);
  const std::string typed = error_of([] { io::parse_run_config(io::Json::parse(R"({"repetitions": "many"})")); });
  CHECK(typed.find("repetitions") != std::string::npos);
  CHECK_THROWS_AS(io::parse_run_config(io::Json::parse(R"({"pipeline": {"gp": {"trend": "cubic"}}})")), ConfigError);
  CHECK_THROWS_AS(io::parse_run_config(io::Json::parse(R"({"thresholds": [{"type": "vibes"}]})")), ConfigError);

  // Shipped presets parse.
  for (const char* name : {"manhattan.json", "truss.json"}) {
    const auto path = std::filesystem::path(REGIME_SOURCE_DIR) / "configs" / name;
    CHECK_NOTHROW(io::load_run_config(path));
  }
  // The pipeline section round-trips.
  const auto again = io::parse_run_config(io::Json{{"pipeline", io::to_json(rc.experiment.pipeline)}});
  CHECK(io::to_json(again.experiment.pipeline) == io::to_json(rc.experiment.pipeline));
}

TEST_CASE("artifact round trip") {
  const auto ed = step_design(50, 1);
  io::Artifact a;
  a.seed = 9;
  a.input_names = {"x"};
  a.output_name = "y";
  a.pipeline = pipeline::fit_pipeline(ed, {}, 9);
  a.direct = pipeline::fit_direct_baseline(ed, {}, true, 9);
  a.config = io::to_json(pipeline::PipelineConfig{});
  const io::Json j = io::artifact_to_json(a);
  CHECK(j.at("format") == io::kArtifactFormat);
  CHECK(j.at("version") == io::kArtifactVersion);
  CHECK(j.at("schema_hash") == io::schema_hash());

  const auto b = io::artifact_from_json(j);
  CHECK(io::artifact_to_json(b).dump() == j.dump());
  CHECK(b.pipeline.n_classes == a.pipeline.n_classes);
  CHECK(b.pipeline.labels == a.pipeline.labels);
  const Matrix x = Vector::LinSpaced(200, -1, 1);
  for (auto mode : {pipeline::Mode::Hard, pipeline::Mode::Soft, pipeline::Mode::Categorical}) {
    const auto pa = pipeline::predict_batch(a.pipeline, x, mode);
    const auto pb = pipeline::predict_batch(b.pipeline, x, mode);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].mean == pb[i].mean);
      CHECK(pa[i].variance == pb[i].variance);
      CHECK(pa[i].label == pb[i].label);
    }
  }
  const auto da = pipeline::predict_batch(*a.direct, x);
  const auto db = pipeline::predict_batch(*b.direct, x);
  for (std::size_t i = 0; i < da.size(); ++i) CHECK(da[i].mean == db[i].mean);

  io::Json wrong = j;
  wrong["version"] = io::kArtifactVersion + 1;
  CHECK_THROWS_AS(io::artifact_from_json(wrong), InputError);
  wrong = j;
  wrong["schema_hash"] = "0000";
  CHECK_THROWS_AS(io::artifact_from_json(wrong), InputError);
  wrong = j;
  wrong["format"] = "other";
  CHECK_THROWS_AS(io::artifact_from_json(wrong), InputError);
}

TEST_CASE("report csv round trip and summary") {
  bench::ExperimentConfig cfg;
  cfg.sizes = {30};
  cfg.repetitions = 2;
  cfg.validation_size = 200;
  cfg.seed = 5;
  cfg.record_timings = true;
  const auto rep = bench::run_experiment(cfg);
  std::ostringstream out;
  io::write_report_csv(out, rep);
  CHECK(out.str().rfind("# seed=5\n", 0) == 0);
  const auto dir = std::filesystem::temp_directory_path() / "regime_io_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "report.csv";
  {
    std::ofstream f(path);
    f << out.str();
  }
  const auto back = io::read_report_csv(path);
  CHECK(back.master_seed == 5);
  REQUIRE(back.rows.size() == rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    CHECK(back.rows[i].nmse == rep.rows[i].nmse);
    CHECK(back.rows[i].mae == rep.rows[i].mae);
    CHECK(back.rows[i].method == rep.rows[i].method);
    CHECK(back.rows[i].fit_seconds.has_value());
  }
  const auto summary = io::report_summary(rep, {});
  CHECK(summary.at("cells").size() == 4);
  CHECK(summary.at("seed") == 5);
  std::filesystem::remove_all(dir);
}
