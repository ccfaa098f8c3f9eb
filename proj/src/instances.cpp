#include "dpme/instances.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dpme {

using nlohmann::json;

PowerScenarioData draw_power_scenario_data(const PowerConfig& cfg, Rng& rng) {
  PowerScenarioData d;
  d.q = Vector(cfg.n_plants);
  for (int i = 0; i < cfg.n_plants; ++i)
    d.q[i] = rng.truncated_normal(cfg.q_trunc.mean, cfg.q_trunc.sigma, cfg.q_trunc.lo,
                                  cfg.q_trunc.hi);
  d.pi = Vector(cfg.n_locations);
  for (int j = 0; j < cfg.n_locations; ++j)
    d.pi[j] = rng.truncated_normal(cfg.pi_trunc.mean, cfg.pi_trunc.sigma, cfg.pi_trunc.lo,
                                   cfg.pi_trunc.hi);
  d.d = Vector(cfg.n_locations);
  for (int j = 0; j < cfg.n_locations; ++j)
    d.d[j] = rng.truncated_normal(cfg.d_trunc.mean, cfg.d_trunc.sigma, cfg.d_trunc.lo,
                                  cfg.d_trunc.hi);
  d.p_raw = Vector(cfg.n_mix);
  for (int g = 0; g < cfg.n_mix; ++g) d.p_raw[g] = rng.uniform01();
  return d;
}

DeSize compute_de_size(const PowerConfig& cfg, long long S) {
  if (S < 1) throw std::invalid_argument("compute_de_size: S must be >= 1");
  long long n1 = cfg.n1(), n2 = cfg.n2();
  long long first_rows = 1 /*budget*/ + 1 /*simplex*/ + 2 * n1;
  long long per_scenario = cfg.n_plants /*capacity*/ + cfg.n_locations /*demand*/ + 2 * n2;
  return {first_rows + S * per_scenario, n1 + S * n2};
}

namespace {

// Scenario body shared by the fixed generator and the sampling generator;
// mix_weights carries S * p_sg (or the density ratio u/E[u]).
Scenario power_scenario(const PowerConfig& cfg, const PowerScenarioData& data,
                        const Vector& mix_weights, double probability) {
  const int I = cfg.n_plants, G = cfg.n_mix, J = cfg.n_locations;
  const int n1 = cfg.n1(), n2 = cfg.n2();
  Scenario sc;
  sc.a = Vector::Zero(n1);
  sc.b = Vector::Zero(n2);
  sc.B = Matrix::Zero(n1, n2);
  for (int g = 0; g < G; ++g)
    for (int i = 0; i < I; ++i)
      for (int j = 0; j < J; ++j)
        sc.B(I + g, i * J + j) = mix_weights[g] * (data.q[i] - data.pi[j]);
  // capacity rows: sum_j y_ij - x_i <= 0
  sc.C = Matrix::Zero(I, n1);
  sc.D = Matrix::Zero(I, n2);
  sc.h = Vector::Zero(I);
  for (int i = 0; i < I; ++i) {
    sc.C(i, i) = -1.0;
    for (int j = 0; j < J; ++j) sc.D(i, i * J + j) = 1.0;
  }
  // demand rows: sum_i y_ij = d_j
  sc.F = Matrix::Zero(J, n2);
  for (int j = 0; j < J; ++j)
    for (int i = 0; i < I; ++i) sc.F(j, i * J + j) = 1.0;
  sc.d = data.d;
  sc.y_lower = Vector::Constant(n2, cfg.y_lo);
  sc.y_upper = Vector::Constant(n2, cfg.y_hi);
  sc.weight = probability;
  return sc;
}

double cost_extreme(const FirstStage& fs, bool maximize, double qp_tol = 1e-9) {
  QpProblem p = QpProblem::make(fs.n());
  p.q = maximize ? Vector(-fs.c) : fs.c;
  p.A_eq = fs.A_eq;
  p.b_eq = fs.b_eq;
  p.lower = fs.box_lower;
  p.upper = fs.box_upper;
  QpSolution sol = solve_qp(p, qp_tol, 200);
  if (sol.status != QpStatus::Optimal)
    throw InstanceError("generate_power_instance: cost-range LP failed");
  return maximize ? -sol.objective : sol.objective;
}

}  // namespace

BilinearTwoStageModel generate_power_instance(const PowerConfig& cfg, long long S) {
  if (S < 1) throw std::invalid_argument("generate_power_instance: S must be >= 1");
  if (cfg.n_plants < 1 || cfg.n_mix < 1 || cfg.n_locations < 1)
    throw std::invalid_argument("generate_power_instance: dimensions must be positive");
  const int I = cfg.n_plants, G = cfg.n_mix;
  const int n1 = cfg.n1();

  BilinearTwoStageModel m;
  FirstStage& fs = m.first_stage;
  {
    Rng cost_rng(derive_seed(cfg.seed, 0xC0575ULL));
    fs.c = Vector(n1);
    for (int i = 0; i < n1; ++i) fs.c[i] = cost_rng.uniform(cfg.cost_lo, cfg.cost_hi);
  }
  fs.P = Matrix::Zero(n1, n1);
  fs.box_lower = Vector(n1);
  fs.box_upper = Vector(n1);
  for (int i = 0; i < I; ++i) {
    fs.box_lower[i] = cfg.cap_lo;
    fs.box_upper[i] = cfg.cap_hi;
  }
  for (int g = 0; g < G; ++g) {
    fs.box_lower[I + g] = cfg.weight_lo;
    fs.box_upper[I + g] = cfg.weight_hi;
  }
  // simplex over the mixture weights
  fs.A_eq = Matrix::Zero(1, n1);
  for (int g = 0; g < G; ++g) fs.A_eq(0, I + g) = 1.0;
  fs.b_eq = Vector::Constant(1, 1.0);
  fs.A_ineq = Matrix(0, n1);
  fs.b_ineq = Vector(0);
  fs.xbar_margin = default_xbar_margin(fs.box_lower, fs.box_upper);

  // budget between the LP extremes of the first-stage cost
  if (!(cfg.budget_fraction > 0.0 && cfg.budget_fraction < 1.0))
    throw InstanceError(
        "generate_power_instance: budget_fraction must lie in (0, 1); the budget "
        "would fall at or below the minimum attainable cost");
  double cmin = cost_extreme(fs, false);
  double cmax = cost_extreme(fs, true);
  double budget = cmin + cfg.budget_fraction * (cmax - cmin);
  fs.A_ineq = fs.c.transpose();
  fs.b_ineq = Vector::Constant(1, budget);

  fs.x0 = project_onto_x(fs, 0.5 * (fs.box_lower + fs.box_upper));

  {
    QpProblem feas = QpProblem::make(n1);
    feas.A_in = fs.A_ineq;
    feas.b_in = fs.b_ineq;
    feas.A_eq = fs.A_eq;
    feas.b_eq = fs.b_eq;
    feas.lower = fs.box_lower;
    feas.upper = fs.box_upper;
    if (solve_qp(feas).status == QpStatus::Infeasible)
      throw InstanceError("generate_power_instance: X is empty under the budget");
  }

  std::vector<PowerScenarioData> draws;
  draws.reserve(static_cast<std::size_t>(S));
  for (long long s = 0; s < S; ++s) {
    Rng rng(derive_seed(derive_seed(cfg.seed, 0x5CE7ULL), static_cast<std::uint64_t>(s)));
    draws.push_back(draw_power_scenario_data(cfg, rng));
  }

  // mixture masses: by default column-stochastic (sum_s p_sg = 1 per g),
  // the per-scenario reading sits behind row_normalize_p
  Matrix weights(S, G);
  if (cfg.row_normalize_p) {
    for (long long s = 0; s < S; ++s) {
      double row = draws[static_cast<std::size_t>(s)].p_raw.sum();
      for (int g = 0; g < G; ++g)
        weights(s, g) =
            static_cast<double>(S) * draws[static_cast<std::size_t>(s)].p_raw[g] / row;
    }
  } else {
    Vector colsum = Vector::Zero(G);
    for (long long s = 0; s < S; ++s) colsum += draws[static_cast<std::size_t>(s)].p_raw;
    for (long long s = 0; s < S; ++s)
      for (int g = 0; g < G; ++g)
        weights(s, g) =
            static_cast<double>(S) * draws[static_cast<std::size_t>(s)].p_raw[g] / colsum[g];
  }

  m.scenarios.reserve(static_cast<std::size_t>(S));
  for (long long s = 0; s < S; ++s)
    m.scenarios.push_back(power_scenario(cfg, draws[static_cast<std::size_t>(s)],
                                         weights.row(s).transpose(),
                                         1.0 / static_cast<double>(S)));
  return m;
}

Scenario PowerScenarioGenerator::draw(std::uint64_t root_seed, long long index) const {
  Rng rng(derive_seed(derive_seed(root_seed, 0x5CE7ULL), static_cast<std::uint64_t>(index)));
  PowerScenarioData data = draw_power_scenario_data(cfg_, rng);
  // density ratio u / E[u] with u ~ U[0, 1): the continuous analogue of the
  // column normalization used by the fixed generator
  Vector w = 2.0 * data.p_raw;
  Scenario sc = power_scenario(cfg_, data, w, 1.0);
  return sc;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

constexpr int kSchemaVersion = 1;

json enc_num(double v) {
  if (std::isfinite(v)) return v;
  if (v > 0) return "inf";
  if (v < 0) return "-inf";
  return "nan";
}

double dec_num(const json& j, const std::string& ctx) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string& s = j.get_ref<const std::string&>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw SchemaError("instance file: bad number at " + ctx);
}

json enc_vector(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(enc_num(v[i]));
  return a;
}

json enc_matrix(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(enc_num(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

const json& need(const json& j, const char* key, const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end())
    throw SchemaError("instance file: missing field '" + std::string(key) + "' in " + ctx);
  return *it;
}

Vector dec_vector(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw SchemaError("instance file: expected array at " + ctx);
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = dec_num(j[i], ctx + "[" + std::to_string(i) + "]");
  return v;
}

Matrix dec_matrix(const json& j, Eigen::Index cols, const std::string& ctx) {
  if (!j.is_array()) throw SchemaError("instance file: expected array at " + ctx);
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    Vector row = dec_vector(j[i], ctx + "[" + std::to_string(i) + "]");
    if (row.size() != cols)
      throw SchemaError("instance file: row width mismatch at " + ctx);
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

json power_config_json(const PowerConfig& cfg) {
  return json{{"plants", cfg.n_plants},
              {"mix", cfg.n_mix},
              {"locations", cfg.n_locations},
              {"cap", {cfg.cap_lo, cfg.cap_hi}},
              {"weight", {cfg.weight_lo, cfg.weight_hi}},
              {"y", {cfg.y_lo, cfg.y_hi}},
              {"cost", {cfg.cost_lo, cfg.cost_hi}},
              {"q_trunc", {cfg.q_trunc.mean, cfg.q_trunc.sigma, cfg.q_trunc.lo, cfg.q_trunc.hi}},
              {"pi_trunc", {cfg.pi_trunc.mean, cfg.pi_trunc.sigma, cfg.pi_trunc.lo, cfg.pi_trunc.hi}},
              {"d_trunc", {cfg.d_trunc.mean, cfg.d_trunc.sigma, cfg.d_trunc.lo, cfg.d_trunc.hi}},
              {"budget_fraction", cfg.budget_fraction},
              {"row_normalize_p", cfg.row_normalize_p},
              {"seed", cfg.seed}};
}

}  // namespace

std::string serialize_instance(const BilinearTwoStageModel& model,
                               const std::string& kind, std::uint64_t seed,
                               const PowerConfig* cfg) {
  const FirstStage& fs = model.first_stage;
  json header{{"schema_version", kSchemaVersion},
              {"tool", "dpme"},
              {"kind", kind},
              {"seed", seed},
              {"dims",
               {{"n1", fs.n()},
                {"n2", model.scenarios.empty() ? 0 : model.scenarios[0].n2()},
                {"scenarios", model.scenarios.size()}}}};
  if (cfg) header["config"] = power_config_json(*cfg);

  json first{{"c", enc_vector(fs.c)},
             {"P", enc_matrix(fs.P)},
             {"box_lower", enc_vector(fs.box_lower)},
             {"box_upper", enc_vector(fs.box_upper)},
             {"A_ineq", enc_matrix(fs.A_ineq)},
             {"b_ineq", enc_vector(fs.b_ineq)},
             {"A_eq", enc_matrix(fs.A_eq)},
             {"b_eq", enc_vector(fs.b_eq)},
             {"xbar_margin", enc_vector(fs.xbar_margin)},
             {"x0", enc_vector(fs.x0)}};

  json scenarios = json::array();
  for (const Scenario& sc : model.scenarios) {
    scenarios.push_back(json{{"a", enc_vector(sc.a)},
                             {"b", enc_vector(sc.b)},
                             {"B", enc_matrix(sc.B)},
                             {"C", enc_matrix(sc.C)},
                             {"D", enc_matrix(sc.D)},
                             {"h", enc_vector(sc.h)},
                             {"F", enc_matrix(sc.F)},
                             {"d", enc_vector(sc.d)},
                             {"y_lower", enc_vector(sc.y_lower)},
                             {"y_upper", enc_vector(sc.y_upper)},
                             {"weight", sc.weight}});
  }

  json doc{{"header", std::move(header)},
           {"first_stage", std::move(first)},
           {"scenarios", std::move(scenarios)}};
  return doc.dump(1, '\t') + "\n";
}

BilinearTwoStageModel deserialize_instance(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("instance file: malformed JSON: ") + e.what());
  }
  const json& header = need(doc, "header", "document");
  int version = need(header, "schema_version", "header").get<int>();
  if (version != kSchemaVersion)
    throw SchemaError("instance file: unsupported schema_version " + std::to_string(version));
  const json& dims = need(header, "dims", "header");
  auto n1 = need(dims, "n1", "header.dims").get<Eigen::Index>();
  auto n2 = need(dims, "n2", "header.dims").get<Eigen::Index>();

  BilinearTwoStageModel m;
  const json& f = need(doc, "first_stage", "document");
  FirstStage& fs = m.first_stage;
  fs.c = dec_vector(need(f, "c", "first_stage"), "first_stage.c");
  if (fs.c.size() != n1) throw SchemaError("instance file: c length differs from dims.n1");
  fs.P = dec_matrix(need(f, "P", "first_stage"), n1, "first_stage.P");
  fs.box_lower = dec_vector(need(f, "box_lower", "first_stage"), "first_stage.box_lower");
  fs.box_upper = dec_vector(need(f, "box_upper", "first_stage"), "first_stage.box_upper");
  fs.A_ineq = dec_matrix(need(f, "A_ineq", "first_stage"), n1, "first_stage.A_ineq");
  fs.b_ineq = dec_vector(need(f, "b_ineq", "first_stage"), "first_stage.b_ineq");
  fs.A_eq = dec_matrix(need(f, "A_eq", "first_stage"), n1, "first_stage.A_eq");
  fs.b_eq = dec_vector(need(f, "b_eq", "first_stage"), "first_stage.b_eq");
  fs.xbar_margin = dec_vector(need(f, "xbar_margin", "first_stage"), "first_stage.xbar_margin");
  fs.x0 = dec_vector(need(f, "x0", "first_stage"), "first_stage.x0");

  const json& scens = need(doc, "scenarios", "document");
  if (!scens.is_array()) throw SchemaError("instance file: scenarios must be an array");
  for (std::size_t s = 0; s < scens.size(); ++s) {
    std::string ctx = "scenarios[" + std::to_string(s) + "]";
    const json& j = scens[s];
    Scenario sc;
    sc.a = dec_vector(need(j, "a", ctx), ctx + ".a");
    sc.b = dec_vector(need(j, "b", ctx), ctx + ".b");
    sc.B = dec_matrix(need(j, "B", ctx), n2, ctx + ".B");
    sc.C = dec_matrix(need(j, "C", ctx), n1, ctx + ".C");
    sc.D = dec_matrix(need(j, "D", ctx), n2, ctx + ".D");
    sc.h = dec_vector(need(j, "h", ctx), ctx + ".h");
    sc.F = dec_matrix(need(j, "F", ctx), n2, ctx + ".F");
    sc.d = dec_vector(need(j, "d", ctx), ctx + ".d");
    sc.y_lower = dec_vector(need(j, "y_lower", ctx), ctx + ".y_lower");
    sc.y_upper = dec_vector(need(j, "y_upper", ctx), ctx + ".y_upper");
    sc.weight = dec_num(need(j, "weight", ctx), ctx + ".weight");
    if (sc.b.size() != n2) throw SchemaError("instance file: " + ctx + " width mismatch");
    m.scenarios.push_back(std::move(sc));
  }
  return m;
}

void save_instance(const BilinearTwoStageModel& model, const std::string& path,
                   const std::string& kind, std::uint64_t seed, const PowerConfig* cfg) {
  std::string text = serialize_instance(model, kind, seed, cfg);
  std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_instance: cannot open " + tmp);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("save_instance: short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

BilinearTwoStageModel load_instance(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_instance: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_instance(buf.str());
}

std::uint64_t fnv1a(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string digest_string(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file_digest: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  return digest_string(fnv1a(text.data(), text.size()));
}

std::string scenario_digest(std::span<const Scenario> scenarios) {
  BilinearTwoStageModel shell;
  FirstStage& fs = shell.first_stage;
  Eigen::Index n1 = scenarios.empty() ? 0 : scenarios[0].a.size();
  fs.c = Vector::Zero(n1);
  fs.P = Matrix::Zero(n1, n1);
  fs.box_lower = Vector::Zero(n1);
  fs.box_upper = Vector::Zero(n1);
  fs.A_ineq = Matrix(0, n1);
  fs.b_ineq = Vector(0);
  fs.A_eq = Matrix(0, n1);
  fs.b_eq = Vector(0);
  fs.xbar_margin = Vector::Zero(n1);
  fs.x0 = Vector::Zero(n1);
  shell.scenarios.assign(scenarios.begin(), scenarios.end());
  std::string text = serialize_instance(shell, "scenario-digest", 0, nullptr);
  return digest_string(fnv1a(text.data(), text.size()));
}

}  // namespace dpme
