#include "regime/io.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace regime;

namespace {

struct Workdir {
  fs::path dir;
  Workdir() {
    dir = fs::temp_directory_path() / ("regime_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workdir() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(REGIME_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

void write_step_csv(const std::string& path, int n) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::ostringstream ss;
  ss << "x,y\n";
  for (int i = 0; i < n; ++i) {
    const double x = u(rng);
    ss << io::format_double(x) << ',' << io::format_double(0.5 * x + (x >= 0 ? 3.0 : 0.0)) << '\n';
  }
  write(path, ss.str());
}

}  // namespace

TEST_CASE("fit and predict") {
  Workdir w;
  write_step_csv(w / "train.csv", 50);
  REQUIRE(run("fit --data " + w / "train.csv" + " --out " + w / "a.json" + " --seed 3") == 0);
  const auto summary = slurp(w / "a.json.summary.txt");
  CHECK(summary.find("clusters: 2") != std::string::npos);
  const auto art = io::load_artifact(w / "a.json");
  CHECK(art.pipeline.n_classes == 2);
  CHECK(art.seed == 3);

  // Refit gives the same bytes.
  REQUIRE(run("fit --data " + w / "train.csv" + " --out " + w / "b.json" + " --seed 3") == 0);
  CHECK(slurp(w / "a.json") == slurp(w / "b.json"));

  const auto train = io::read_csv(w / "train.csv");
  REQUIRE(run("predict --artifact " + w / "a.json" + " --data " + w / "train.csv" + " --mode hard --out " +
              w / "hard.csv") == 0);
  const auto hard = io::read_csv(w / "hard.csv");
  CHECK(hard.header == std::vector<std::string>{"x", "mean", "variance", "label", "class_prob_1", "class_prob_2"});
  REQUIRE(hard.values.rows() == train.values.rows());
  for (Eigen::Index i = 0; i < hard.values.rows(); ++i) {
    CHECK(std::abs(hard.values(i, 1) - train.values(i, 1)) < 1e-4);
  }
  CHECK(hard.comments.front() == "seed=3");

  REQUIRE(run("predict --artifact " + w / "a.json" + " --data " + w / "train.csv" + " --mode soft --out " +
              w / "soft.csv") == 0);
  const auto soft = io::read_csv(w / "soft.csv");
  REQUIRE(soft.values.rows() == train.values.rows());
  for (Eigen::Index i = 0; i < soft.values.rows(); ++i) {
    CHECK(soft.values(i, 4) + soft.values(i, 5) == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (const char* mode : {"categorical", "direct"}) {
    CHECK(run("predict --artifact " + w / "a.json" + " --data " + w / "train.csv" + " --mode " + mode + " --out " +
              w / "m.csv") == 0);
    CHECK(io::read_csv(w / "m.csv").values.rows() == train.values.rows());
  }

  write(w / "wide.csv", "a,b,c\n1,2,3\n");
  CHECK(run("predict --artifact " + w / "a.json" + " --data " + w / "wide.csv" + " --out " + w / "m.csv") == 1);
  write(w / "empty.csv", "");
  CHECK(run("fit --data " + w / "empty.csv" + " --out " + w / "c.json") == 1);
  write(w / "bad.csv", "x,y\n0.1,2\n0.2,oops\n");
  CHECK(run("fit --data " + w / "bad.csv" + " --out " + w / "c.json") == 1);
  CHECK(run("predict --artifact " + w / "missing.json" + " --data " + w / "train.csv" + " --out " + w / "m.csv") == 1);
}

TEST_CASE("bench and report") {
  Workdir w;
  const std::string base = R"({"problem": "manhattan", "sizes": [30], "repetitions": 2, "validation_size": 200,
    "seed": 8, "output": {"report_csv": ")" + w / "r.csv" + R"(", "summary_json": ")" + w / "r.json" + R"("},
    "thresholds": [THRESHOLD]})";
  auto with = [&](const std::string& t) {
    std::string s = base;
    s.replace(s.find("THRESHOLD"), 9, t);
    return s;
  };
  write(w / "ok.json", with(R"({"type": "median_ratio", "method": "hard", "baseline": "direct", "max_ratio": 1e9})"));
  REQUIRE(run("bench --config " + w / "ok.json") == 0);
  const auto first = slurp(w / "r.csv");
  CHECK(first.rfind("# seed=8\n", 0) == 0);
  const auto report = io::read_report_csv(w / "r.csv");
  CHECK(report.rows.size() == 1 * 4 * 2);
  REQUIRE(run("bench --config " + w / "ok.json") == 0);
  CHECK(slurp(w / "r.csv") == first);
  const auto summary = io::Json::parse(slurp(w / "r.json"));
  CHECK(summary.at("thresholds").at(0).at("passed") == true);

  write(w / "fail.json", with(R"({"type": "median_ratio", "method": "hard", "baseline": "direct", "max_ratio": 0})"));
  CHECK(run("bench --config " + w / "fail.json") == 2);
  CHECK(run("report --data " + w / "r.csv" + " --config " + w / "fail.json" + " --out " + w / "s.json") == 2);
  CHECK(run("report --data " + w / "r.csv" + " --out " + w / "s.json") == 0);

  write(w / "typo.json", R"({"problem": "manhattan", "repetitons": 2})");
  CHECK(run("bench --config " + w / "typo.json") == 1);
  CHECK(run("bench") == 1);
}
