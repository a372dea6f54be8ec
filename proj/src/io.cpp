#include "regime/io.hpp"

#include "regime/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace regime::io {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
  return v;
}

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

// Walks a JSON object, remembering which keys were read so that leftovers
// can be reported with their full path.
class Reader {
public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(at(key) + ": wrong type (got " + std::string(j_.at(key).type_name()) + ")");
    }
  }

  std::pair<double, double> range(const std::string& key, std::pair<double, double> fallback) {
    const auto v = get<std::vector<double>>(key, {fallback.first, fallback.second});
    if (v.size() != 2 || !(v[0] < v[1])) throw ConfigError(at(key) + ": expected [low, high] with low < high");
    return {v[0], v[1]};
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, at(key));
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(at(key) + ": unknown key");
    }
  }

private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto config_value(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

GaussianConvention convention_from_string(const std::string& s, const std::string& path) {
  if (s == "printed") return GaussianConvention::Printed;
  if (s == "conventional") return GaussianConvention::Conventional;
  throw ConfigError(path + ": expected printed or conventional");
}

std::string to_string(GaussianConvention c) { return c == GaussianConvention::Printed ? "printed" : "conventional"; }

CorrelationFamily correlation_from_string(const std::string& s, const std::string& path) {
  if (s == "matern52") return CorrelationFamily::Matern52;
  if (s == "gaussian") return CorrelationFamily::Gaussian;
  throw ConfigError(path + ": expected matern52 or gaussian");
}

std::string to_string(CorrelationFamily f) { return f == CorrelationFamily::Matern52 ? "matern52" : "gaussian"; }

dpmm::DpmmConfig parse_dpmm(Reader r) {
  dpmm::DpmmConfig c;
  c.alpha = r.get("alpha", c.alpha);
  c.truncation = r.get("truncation", c.truncation);
  c.base_scale = r.get("base_scale", c.base_scale);
  c.base_dof = r.get("base_dof", c.base_dof);
  c.max_iters = r.get("max_iters", c.max_iters);
  c.elbo_tol = r.get("elbo_tol", c.elbo_tol);
  c.restarts = r.get("restarts", c.restarts);
  c.prune_weight = r.get("prune_weight", c.prune_weight);
  c.prune_min_points = r.get("prune_min_points", c.prune_min_points);
  r.finish();
  if (!(c.alpha > 0.0)) throw ConfigError(r.at("alpha") + ": must be positive");
  if (c.truncation < 1) throw ConfigError(r.at("truncation") + ": must be at least 1");
  if (!(c.base_scale > 0.0)) throw ConfigError(r.at("base_scale") + ": must be positive");
  if (c.max_iters < 1) throw ConfigError(r.at("max_iters") + ": must be at least 1");
  if (c.restarts < 1) throw ConfigError(r.at("restarts") + ": must be at least 1");
  return c;
}

svc::MulticlassConfig parse_svc(Reader r) {
  svc::MulticlassConfig c;
  c.tune = r.get("tune", c.tune);
  std::tie(c.tuning.log10_c_min, c.tuning.log10_c_max) =
      r.range("log10_c", {c.tuning.log10_c_min, c.tuning.log10_c_max});
  std::tie(c.tuning.log10_theta_min, c.tuning.log10_theta_max) =
      r.range("log10_theta", {c.tuning.log10_theta_min, c.tuning.log10_theta_max});
  c.tuning.anisotropic = r.get("anisotropic", c.tuning.anisotropic);
  c.tuning.budget = r.get("budget", c.tuning.budget);
  c.tuning.population = r.get("population", c.tuning.population);
  c.tuning.convention = convention_from_string(r.get<std::string>("kernel_convention", "printed"),
                                               r.at("kernel_convention"));
  c.tuning.loo_tol = r.get("loo_tol", c.tuning.loo_tol);
  c.fixed_c = r.get("fixed_c", c.fixed_c);
  c.fixed_theta = r.get("fixed_theta", c.fixed_theta);
  c.smo_tol = r.get("smo_tol", c.smo_tol);
  c.coupling_tol = r.get("coupling_tol", c.coupling_tol);
  c.coupling_max_iters = r.get("coupling_max_iters", c.coupling_max_iters);
  r.finish();
  if (c.tuning.budget < 1) throw ConfigError(r.at("budget") + ": must be positive");
  if (!(c.smo_tol > 0.0)) throw ConfigError(r.at("smo_tol") + ": must be positive");
  if (!(c.tuning.loo_tol > 0.0)) throw ConfigError(r.at("loo_tol") + ": must be positive");
  return c;
}

gp::FitOptions parse_gp(Reader r) {
  gp::FitOptions o;
  const auto trend = r.get<std::string>("trend", "constant");
  if (trend == "constant") o.trend.degree = 0;
  else if (trend == "linear") o.trend.degree = 1;
  else throw ConfigError(r.at("trend") + ": expected constant or linear");
  o.family = correlation_from_string(r.get<std::string>("family", "matern52"), r.at("family"));
  o.categorical_family =
      correlation_from_string(r.get<std::string>("categorical_family", "gaussian"), r.at("categorical_family"));
  std::tie(o.log10_theta_min, o.log10_theta_max) = r.range("log10_theta", {o.log10_theta_min, o.log10_theta_max});
  o.nugget = r.get("nugget", o.nugget);
  o.optimize_nugget = r.get("optimize_nugget", o.optimize_nugget);
  std::tie(o.log10_nugget_min, o.log10_nugget_max) =
      r.range("log10_nugget", {o.log10_nugget_min, o.log10_nugget_max});
  std::tie(o.theta_cat_min, o.theta_cat_max) = r.range("theta_cat", {o.theta_cat_min, o.theta_cat_max});
  o.restarts = r.get("restarts", o.restarts);
  o.evals_per_restart = r.get("evals_per_restart", o.evals_per_restart);
  r.finish();
  config_value(r.where(), [&] {
    o.validate();
    return 0;
  });
  return o;
}

pipeline::PipelineConfig parse_pipeline(Reader r) {
  pipeline::PipelineConfig c;
  c.standardize = r.get("standardize", c.standardize);
  c.recombination = config_value(r.at("recombination"), [&] {
    return pipeline::recombination_from_string(r.get<std::string>("recombination", "all"));
  });
  c.dpmm = parse_dpmm(r.child("dpmm"));
  c.svc = parse_svc(r.child("svc"));
  c.gp = parse_gp(r.child("gp"));
  r.finish();
  return c;
}

MarginalDistribution parse_marginal(Reader r, const MarginalDistribution& fallback) {
  const auto family = r.get<std::string>("family", std::string(to_string(fallback.family())));
  const double mean = r.get("mean", fallback.mean());
  const double cov = r.get("cov", fallback.cov());
  r.finish();
  return config_value(r.where(), [&] { return MarginalDistribution(family_from_string(family), mean, cov); });
}

pipeline::Mode parse_mode(const std::string& s, const std::string& path) {
  return config_value(path, [&] { return pipeline::mode_from_string(s); });
}

bench::Threshold parse_threshold(Reader r) {
  bench::Threshold t;
  const auto type = r.get<std::string>("type", "median_ratio");
  t.n = r.get("n", t.n);
  if (type == "median_ratio") {
    t.kind = bench::Threshold::Kind::MedianRatio;
    t.metric = r.get<std::string>("metric", t.metric);
    if (t.metric != "nmse" && t.metric != "mae") throw ConfigError(r.at("metric") + ": expected nmse or mae");
    t.method = parse_mode(r.get<std::string>("method", "hard"), r.at("method"));
    t.baseline = parse_mode(r.get<std::string>("baseline", "direct"), r.at("baseline"));
    t.max_ratio = r.get("max_ratio", t.max_ratio);
    t.strict = r.get("strict", t.strict);
  } else if (type == "cluster_count") {
    t.kind = bench::Threshold::Kind::ClusterCount;
    t.k_min = r.get("k_min", t.k_min);
    t.k_max = r.get("k_max", t.k_max);
    t.min_runs = r.get("min_runs", t.min_runs);
  } else {
    throw ConfigError(r.at("type") + ": expected median_ratio or cluster_count");
  }
  r.finish();
  return t;
}

// Serialization helpers.
Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Matrix json_matrix(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const Json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows) throw InputError("artifact: matrix row count mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = data.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw InputError("artifact: matrix column count mismatch");
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

Json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vector(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json standardizer_json(const Standardizer& s) { return {{"means", vector_json(s.means())}, {"stds", vector_json(s.stds())}}; }

Standardizer json_standardizer(const Json& j) { return {json_vector(j.at("means")), json_vector(j.at("stds"))}; }

Json gp_json(const gp::GpModel& m) {
  return {{"trend_degree", m.trend.degree},
          {"family", to_string(m.family)},
          {"lengthscales", vector_json(m.lengthscales)},
          {"nugget", m.nugget},
          {"training_inputs", matrix_json(m.training_inputs)},
          {"training_outputs", vector_json(m.training_outputs)},
          {"F", matrix_json(m.F)},
          {"chol_R", matrix_json(m.chol_R)},
          {"beta_hat", vector_json(m.beta_hat)},
          {"sigma2_hat", m.sigma2_hat},
          {"nll", m.nll},
          {"weights", vector_json(m.weights)},
          {"Linv_F", matrix_json(m.Linv_F)},
          {"chol_FtRF", matrix_json(m.chol_FtRF)}};
}

gp::GpModel json_gp(const Json& j) {
  gp::GpModel m;
  m.trend.degree = j.at("trend_degree").get<int>();
  m.family = correlation_from_string(j.at("family").get<std::string>(), "artifact.family");
  m.lengthscales = json_vector(j.at("lengthscales"));
  m.nugget = j.at("nugget").get<double>();
  m.training_inputs = json_matrix(j.at("training_inputs"));
  m.training_outputs = json_vector(j.at("training_outputs"));
  m.F = json_matrix(j.at("F"));
  m.chol_R = json_matrix(j.at("chol_R"));
  m.beta_hat = json_vector(j.at("beta_hat"));
  m.sigma2_hat = j.at("sigma2_hat").get<double>();
  m.nll = j.at("nll").get<double>();
  m.weights = json_vector(j.at("weights"));
  m.Linv_F = json_matrix(j.at("Linv_F"));
  m.chol_FtRF = json_matrix(j.at("chol_FtRF"));
  return m;
}

Json svc_json(const svc::MulticlassSvc& s) {
  Json pairs = Json::array();
  for (const auto& p : s.pairs) {
    const auto& m = p.model;
    pairs.push_back({{"first", p.first},
                     {"second", p.second},
                     {"platt", {{"slope", p.platt.slope}, {"intercept", p.platt.intercept}}},
                     {"support_inputs", matrix_json(m.support_inputs)},
                     {"support_coeffs", vector_json(m.support_coeffs)},
                     {"support_indices", m.support_indices},
                     {"bias", m.bias},
                     {"penalty", m.penalty},
                     {"lengthscales", vector_json(m.kernel.lengthscales)},
                     {"convention", to_string(m.kernel.convention)},
                     {"iterations", m.iterations},
                     {"objective", m.objective}});
  }
  return {{"n_classes", s.n_classes},
          {"coupling_max_iters", s.coupling_max_iters},
          {"coupling_tol", s.coupling_tol},
          {"pairs", std::move(pairs)}};
}

svc::MulticlassSvc json_svc(const Json& j) {
  svc::MulticlassSvc s;
  s.n_classes = j.at("n_classes").get<int>();
  s.coupling_max_iters = j.at("coupling_max_iters").get<int>();
  s.coupling_tol = j.at("coupling_tol").get<double>();
  for (const auto& p : j.at("pairs")) {
    svc::PairClassifier pc;
    pc.first = p.at("first").get<int>();
    pc.second = p.at("second").get<int>();
    pc.platt.slope = p.at("platt").at("slope").get<double>();
    pc.platt.intercept = p.at("platt").at("intercept").get<double>();
    auto& m = pc.model;
    m.support_inputs = json_matrix(p.at("support_inputs"));
    m.support_coeffs = json_vector(p.at("support_coeffs"));
    m.support_indices = p.at("support_indices").get<std::vector<Eigen::Index>>();
    m.bias = p.at("bias").get<double>();
    m.penalty = p.at("penalty").get<double>();
    m.kernel.lengthscales = json_vector(p.at("lengthscales"));
    m.kernel.convention = convention_from_string(p.at("convention").get<std::string>(), "artifact.convention");
    m.iterations = p.at("iterations").get<long>();
    m.objective = p.at("objective").get<double>();
    m.labels = {pc.first, pc.second};
    s.pairs.push_back(std::move(pc));
  }
  return s;
}

Json clustering_json(const dpmm::ClusteringResult& c) {
  Json covs = Json::array();
  for (const auto& m : c.cluster_covs) covs.push_back(matrix_json(m));
  return {{"n_clusters", c.n_clusters},
          {"labels", c.labels},
          {"responsibilities", matrix_json(c.responsibilities)},
          {"weights", vector_json(c.weights)},
          {"cluster_means", matrix_json(c.cluster_means)},
          {"cluster_covs", std::move(covs)},
          {"converged", c.converged},
          {"elbo", c.elbo},
          {"max_elbo_drop", c.max_elbo_drop}};
}

dpmm::ClusteringResult json_clustering(const Json& j) {
  dpmm::ClusteringResult c;
  c.n_clusters = j.at("n_clusters").get<int>();
  c.labels = j.at("labels").get<std::vector<int>>();
  c.responsibilities = json_matrix(j.at("responsibilities"));
  c.weights = json_vector(j.at("weights"));
  c.cluster_means = json_matrix(j.at("cluster_means"));
  for (const auto& m : j.at("cluster_covs")) c.cluster_covs.push_back(json_matrix(m));
  c.converged = j.at("converged").get<bool>();
  c.elbo = j.at("elbo").get<double>();
  c.max_elbo_drop = j.at("max_elbo_drop").get<double>();
  return c;
}

// FNV-1a, 64 bit.
std::string fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

constexpr std::string_view kSchema =
    "artifact{format,version,schema_hash,seed,input_names,output_name,config,pipeline,direct?};"
    "pipeline{standardizer{means,stds},clustering{n_clusters,labels,responsibilities,weights,cluster_means,"
    "cluster_covs,converged,elbo,max_elbo_drop},labels,n_classes,recombination,classifier?{n_classes,"
    "coupling_max_iters,coupling_tol,pairs[first,second,platt{slope,intercept},support_inputs,support_coeffs,"
    "support_indices,bias,penalty,lengthscales,convention,iterations,objective]},local_gps[gp],"
    "categorical_gp?{base:gp,theta_cat,training_labels}};"
    "gp{trend_degree,family,lengthscales,nugget,training_inputs,training_outputs,F,chol_R,beta_hat,sigma2_hat,"
    "nll,weights,Linv_F,chol_FtRF};matrix{rows,cols,data};direct{standardizer,gp}";

}  // namespace

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

Table parse_csv(std::istream& in, const std::string& source) {
  Table t;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::vector<double>> rows;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (stripped.front() == '#') {
      t.comments.push_back(trim(std::string_view(stripped).substr(1)));
      continue;
    }
    auto cells = split(stripped);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw InputError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                       " fields, found " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = parse_double(cells[c]);
      if (!v) {
        throw InputError(source + ":" + std::to_string(line_no) + ": column '" + t.header[c] +
                         "' is not numeric: '" + cells[c] + "'");
      }
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) throw InputError(source + ": empty CSV (no header row)");
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    }
  }
  return t;
}

Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

void write_csv(std::ostream& out, const std::vector<std::string>& header, const Matrix& values,
               const std::vector<std::string>& comments) {
  for (const auto& c : comments) out << "# " << c << '\n';
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << format_double(values(i, j));
    out << '\n';
  }
}

ExperimentalDesign design_from_table(const Table& table) {
  if (table.header.size() < 2) throw InputError("design CSV needs at least one input column and one output column");
  if (table.values.rows() == 0) throw InputError("design CSV has a header but no data rows");
  const Eigen::Index m = table.values.cols() - 1;
  try {
    return ExperimentalDesign(table.values.leftCols(m), table.values.col(m));
  } catch (const ArgumentError& e) {
    throw InputError(e.what());
  }
}

RunConfig parse_run_config(const Json& j) {
  Reader r(j, "");
  RunConfig rc;
  auto& ex = rc.experiment;
  ex.problem.problem = bench::problem_from_string(r.get<std::string>("problem", "manhattan"));
  {
    Reader m = r.child("manhattan");
    ex.problem.manhattan.checker_rows = m.get("checker_rows", ex.problem.manhattan.checker_rows);
    ex.problem.manhattan.checker_cols = m.get("checker_cols", ex.problem.manhattan.checker_cols);
    m.finish();
    if (ex.problem.manhattan.checker_rows < 1 || ex.problem.manhattan.checker_cols < 1) {
      throw ConfigError("manhattan: checker_rows and checker_cols must be >= 1");
    }
  }
  {
    Reader t = r.child("truss");
    auto& ts = ex.problem.truss;
    ts.l0 = t.get("l0", ts.l0);
    ts.alpha0_deg = t.get("alpha0_deg", ts.alpha0_deg);
    ts.load_unit_scale = t.get("load_unit_scale", ts.load_unit_scale);
    ts.load = parse_marginal(t.child("load"), ts.load);
    ts.modulus = parse_marginal(t.child("modulus"), ts.modulus);
    ts.area = parse_marginal(t.child("area"), ts.area);
    t.finish();
    ts.validate();
  }
  ex.sizes = r.get("sizes", ex.sizes);
  ex.repetitions = r.get("repetitions", ex.repetitions);
  ex.validation_size = r.get("validation_size", ex.validation_size);
  if (r.has("methods")) {
    ex.methods.clear();
    for (const auto& m : r.get<std::vector<std::string>>("methods", {})) ex.methods.push_back(parse_mode(m, r.at("methods")));
  }
  ex.seed = r.get<std::uint64_t>("seed", ex.seed);
  ex.record_timings = r.get("record_timings", ex.record_timings);
  ex.pipeline = parse_pipeline(r.child("pipeline"));
  {
    Reader o = r.child("output");
    rc.report_csv = o.get("report_csv", rc.report_csv);
    rc.summary_json = o.get("summary_json", rc.summary_json);
    o.finish();
  }
  if (r.has("thresholds")) {
    const Json& list = r.raw("thresholds");
    if (!list.is_array()) throw ConfigError("thresholds: expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      ex.thresholds.push_back(parse_threshold(Reader(list[i], "thresholds[" + std::to_string(i) + "]")));
    }
  }
  r.finish();
  config_value("<root>", [&] {
    ex.validate();
    return 0;
  });
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

Json to_json(const pipeline::PipelineConfig& c) {
  const auto& d = c.dpmm;
  const auto& s = c.svc;
  const auto& g = c.gp;
  return {{"standardize", c.standardize},
          {"recombination", pipeline::to_string(c.recombination)},
          {"dpmm",
           {{"alpha", d.alpha},
            {"truncation", d.truncation},
            {"base_scale", d.base_scale},
            {"base_dof", d.base_dof},
            {"max_iters", d.max_iters},
            {"elbo_tol", d.elbo_tol},
            {"restarts", d.restarts},
            {"prune_weight", d.prune_weight},
            {"prune_min_points", d.prune_min_points}}},
          {"svc",
           {{"tune", s.tune},
            {"log10_c", {s.tuning.log10_c_min, s.tuning.log10_c_max}},
            {"log10_theta", {s.tuning.log10_theta_min, s.tuning.log10_theta_max}},
            {"anisotropic", s.tuning.anisotropic},
            {"budget", s.tuning.budget},
            {"population", s.tuning.population},
            {"kernel_convention", to_string(s.tuning.convention)},
            {"loo_tol", s.tuning.loo_tol},
            {"fixed_c", s.fixed_c},
            {"fixed_theta", s.fixed_theta},
            {"smo_tol", s.smo_tol},
            {"coupling_tol", s.coupling_tol},
            {"coupling_max_iters", s.coupling_max_iters}}},
          {"gp",
           {{"trend", g.trend.degree == 0 ? "constant" : "linear"},
            {"family", to_string(g.family)},
            {"categorical_family", to_string(g.categorical_family)},
            {"log10_theta", {g.log10_theta_min, g.log10_theta_max}},
            {"nugget", g.nugget},
            {"optimize_nugget", g.optimize_nugget},
            {"log10_nugget", {g.log10_nugget_min, g.log10_nugget_max}},
            {"theta_cat", {g.theta_cat_min, g.theta_cat_max}},
            {"restarts", g.restarts},
            {"evals_per_restart", g.evals_per_restart}}}};
}

std::string schema_hash() { return fnv1a(kSchema); }

Json artifact_to_json(const Artifact& a) {
  const auto& fp = a.pipeline;
  Json p = {{"standardizer", standardizer_json(fp.standardizer)},
            {"clustering", clustering_json(fp.clustering)},
            {"labels", fp.labels},
            {"n_classes", fp.n_classes},
            {"recombination", pipeline::to_string(fp.recombination)}};
  if (fp.classifier) p["classifier"] = svc_json(*fp.classifier);
  p["local_gps"] = Json::array();
  for (const auto& g : fp.local_gps) p["local_gps"].push_back(gp_json(g));
  if (fp.categorical_gp) {
    p["categorical_gp"] = {{"base", gp_json(fp.categorical_gp->base)},
                           {"theta_cat", fp.categorical_gp->theta_cat},
                           {"training_labels", fp.categorical_gp->training_labels}};
  }
  Json j = {{"format", kArtifactFormat},
            {"version", kArtifactVersion},
            {"schema_hash", schema_hash()},
            {"seed", a.seed},
            {"input_names", a.input_names},
            {"output_name", a.output_name},
            {"config", a.config},
            {"pipeline", std::move(p)}};
  if (a.direct) j["direct"] = {{"standardizer", standardizer_json(a.direct->standardizer)}, {"gp", gp_json(a.direct->gp)}};
  return j;
}

Artifact artifact_from_json(const Json& j) {
  try {
    if (j.value("format", std::string()) != kArtifactFormat) throw InputError("not a pipeline artifact");
    const int version = j.at("version").get<int>();
    if (version != kArtifactVersion) {
      throw InputError("unsupported artifact version " + std::to_string(version) + " (this build reads version " +
                       std::to_string(kArtifactVersion) + ")");
    }
    if (j.at("schema_hash").get<std::string>() != schema_hash()) {
      throw InputError("artifact schema hash " + j.at("schema_hash").get<std::string>() + " does not match " +
                       schema_hash());
    }
    Artifact a;
    a.seed = j.at("seed").get<std::uint64_t>();
    a.input_names = j.at("input_names").get<std::vector<std::string>>();
    a.output_name = j.at("output_name").get<std::string>();
    a.config = j.at("config");
    const Json& p = j.at("pipeline");
    auto& fp = a.pipeline;
    fp.standardizer = json_standardizer(p.at("standardizer"));
    fp.clustering = json_clustering(p.at("clustering"));
    fp.labels = p.at("labels").get<std::vector<int>>();
    fp.n_classes = p.at("n_classes").get<int>();
    fp.recombination = pipeline::recombination_from_string(p.at("recombination").get<std::string>());
    if (p.contains("classifier")) fp.classifier = json_svc(p.at("classifier"));
    for (const auto& g : p.at("local_gps")) fp.local_gps.push_back(json_gp(g));
    if (p.contains("categorical_gp")) {
      const Json& c = p.at("categorical_gp");
      gp::CategoricalGpModel cm;
      cm.base = json_gp(c.at("base"));
      cm.theta_cat = c.at("theta_cat").get<double>();
      cm.training_labels = c.at("training_labels").get<std::vector<int>>();
      fp.categorical_gp = std::move(cm);
    }
    if (j.contains("direct")) {
      a.direct = pipeline::DirectModel{json_standardizer(j.at("direct").at("standardizer")), json_gp(j.at("direct").at("gp"))};
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed artifact: ") + e.what());
  }
}

void save_artifact(const std::filesystem::path& path, const Artifact& a) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << artifact_to_json(a).dump(1) << '\n';
}

Artifact load_artifact(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open artifact " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return artifact_from_json(j);
}

void write_report_csv(std::ostream& out, const bench::ExperimentReport& report) {
  out << "# seed=" << report.master_seed << '\n';
  out << "problem,method,N,rep,seed,nmse,mae,k_clusters,fit_seconds,error\n";
  for (const auto& r : report.rows) {
    out << r.problem << ',' << pipeline::to_string(r.method) << ',' << r.n << ',' << r.rep << ',' << r.seed << ','
        << format_double(r.nmse) << ',' << format_double(r.mae) << ',' << r.k_clusters << ','
        << (r.fit_seconds ? format_double(*r.fit_seconds) : std::string()) << ',' << sanitize(r.error) << '\n';
  }
}

bench::ExperimentReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open report " + path.string());
  bench::ExperimentReport report;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(line);
    if (s.empty()) continue;
    if (s.front() == '#') {
      if (s.starts_with("# seed=")) report.master_seed = std::stoull(s.substr(7));
      continue;
    }
    const auto cells = split(s);
    if (!have_header) {
      if (cells.size() < 9 || cells[0] != "problem") throw InputError(path.string() + ": not a report CSV");
      have_header = true;
      continue;
    }
    if (cells.size() != 10) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected 10 fields");
    }
    try {
      bench::ReportRow r;
      r.problem = cells[0];
      r.method = pipeline::mode_from_string(cells[1]);
      r.n = std::stoi(cells[2]);
      r.rep = std::stoi(cells[3]);
      r.seed = std::stoull(cells[4]);
      r.nmse = cells[5] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[5]);
      r.mae = cells[6] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[6]);
      r.k_clusters = std::stoi(cells[7]);
      if (!cells[8].empty()) r.fit_seconds = std::stod(cells[8]);
      r.error = cells[9];
      report.problem = r.problem;
      report.rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw InputError(path.string() + ": empty report");
  return report;
}

Json report_summary(const bench::ExperimentReport& report, const std::vector<bench::ThresholdResult>& thresholds) {
  Json cells = Json::array();
  for (const auto& c : report.summarize()) {
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
    cells.push_back({{"method", pipeline::to_string(c.method)},
                     {"N", c.n},
                     {"runs", c.runs},
                     {"failures", c.failures},
                     {"nmse", {{"median", num(c.nmse_median)}, {"q1", num(c.nmse_q1)}, {"q3", num(c.nmse_q3)}}},
                     {"mae", {{"median", num(c.mae_median)}, {"q1", num(c.mae_q1)}, {"q3", num(c.mae_q3)}}}});
  }
  Json th = Json::array();
  for (const auto& t : thresholds) th.push_back({{"threshold", t.description}, {"passed", t.passed}, {"detail", t.detail}});
  auto histogram = [&](auto field) {
    std::map<int, std::map<int, int>> k_hist;
    for (const auto& d : report.diagnostics) ++k_hist[d.n][field(d)];
    Json hist = Json::object();
    for (const auto& [n, h] : k_hist) {
      Json e = Json::object();
      for (const auto& [k, count] : h) e[std::to_string(k)] = count;
      hist[std::to_string(n)] = e;
    }
    return hist;
  };
  Json hist = histogram([](const bench::FitDiagnostics& d) { return d.k_clusters; });
  Json raw_hist = histogram([](const bench::FitDiagnostics& d) { return d.dpmm_clusters; });
  return {{"problem", report.problem},
          {"seed", report.master_seed},
          {"cells", std::move(cells)},
          {"cluster_counts", std::move(hist)},
          {"mixture_cluster_counts", std::move(raw_hist)},
          {"thresholds", std::move(th)}};
}

}  // namespace regime::io
