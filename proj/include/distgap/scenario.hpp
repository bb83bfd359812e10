#pragma once

// Scenario files: strict schema, canonical form, and construction of the
// problem, initial laws and solver settings they describe.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "distgap/distributed.hpp"
#include "distgap/fbsde.hpp"
#include "distgap/meanfield.hpp"
#include "distgap/toml.hpp"
#include "json.hpp"

namespace distgap {

using json = nlohmann::json;

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, Errc::IoError, "cannot allocate a digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  require(ok, Errc::IoError, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[md[k] >> 4];
    out += hex[md[k] & 15];
  }
  return out;
}

enum class ExperimentKind {
  GapSandwich,
  QuadraticBound,
  HeteroSweep,
  MeanFieldRate,
  ChaosMetric,
  FbsdeCrossCheck,
  SmallnessCheck
};

inline const char* experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::GapSandwich: return "GapSandwich";
    case ExperimentKind::QuadraticBound: return "QuadraticBound";
    case ExperimentKind::HeteroSweep: return "HeteroSweep";
    case ExperimentKind::MeanFieldRate: return "MeanFieldRate";
    case ExperimentKind::ChaosMetric: return "ChaosMetric";
    case ExperimentKind::FbsdeCrossCheck: return "FbsdeCrossCheck";
    case ExperimentKind::SmallnessCheck: return "SmallnessCheck";
  }
  return "?";
}

inline ExperimentKind experiment_from_name(const std::string& s) {
  for (auto k : {ExperimentKind::GapSandwich, ExperimentKind::QuadraticBound, ExperimentKind::HeteroSweep,
                 ExperimentKind::MeanFieldRate, ExperimentKind::ChaosMetric, ExperimentKind::FbsdeCrossCheck,
                 ExperimentKind::SmallnessCheck})
    if (s == experiment_name(k)) return k;
  fail(Errc::SchemaError, "unknown experiment kind '" + s + "'");
}

namespace schema {

/// Reads one table, filling defaults into a canonical copy; keys that are
/// never asked for are rejected by done().
class Table {
 public:
  Table(const json& in, std::string where) : where_(std::move(where)) {
    if (in.is_null()) return;
    require(in.is_object(), Errc::SchemaError, where_ + " must be a table");
    in_ = in;
  }

  double real(const std::string& k, std::optional<double> def = std::nullopt) {
    const json* v = take(k);
    if (!v) return set(k, need(k, def));
    require(v->is_number(), Errc::SchemaError, at(k) + " must be a number");
    return set(k, v->get<double>());
  }

  std::int64_t integer(const std::string& k, std::optional<std::int64_t> def = std::nullopt) {
    const json* v = take(k);
    if (!v) return set(k, need(k, def));
    const bool whole = v->is_number_integer() || (v->is_number_float() && std::floor(v->get<double>()) == v->get<double>());
    require(whole, Errc::SchemaError, at(k) + " must be an integer");
    return set(k, v->is_number_integer() ? v->get<std::int64_t>() : static_cast<std::int64_t>(v->get<double>()));
  }

  std::uint64_t unsigned_integer(const std::string& k, std::uint64_t def) {
    const json* v = take(k);
    if (!v) {
      out_[k] = def;
      return def;
    }
    require(v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0), Errc::SchemaError,
            at(k) + " must be a nonnegative integer");
    const std::uint64_t u = v->get<std::uint64_t>();
    out_[k] = u;
    return u;
  }

  bool flag(const std::string& k, bool def) {
    const json* v = take(k);
    if (!v) return set(k, def);
    require(v->is_boolean(), Errc::SchemaError, at(k) + " must be true or false");
    return set(k, v->get<bool>());
  }

  std::string text(const std::string& k, std::optional<std::string> def = std::nullopt,
                   const std::vector<std::string>& allowed = {}) {
    const json* v = take(k);
    std::string s;
    if (!v) {
      s = need(k, def);
    } else {
      require(v->is_string(), Errc::SchemaError, at(k) + " must be a string");
      s = v->get<std::string>();
    }
    if (!allowed.empty()) {
      bool ok = false;
      for (const auto& a : allowed) ok = ok || a == s;
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      require(ok, Errc::SchemaError, at(k) + " must be one of: " + list);
    }
    return set(k, s);
  }

  std::vector<double> reals(const std::string& k, std::optional<std::vector<double>> def = std::nullopt) {
    const json* v = take(k);
    if (!v) return set(k, need(k, def));
    require(v->is_array(), Errc::SchemaError, at(k) + " must be an array of numbers");
    std::vector<double> r;
    for (const auto& e : *v) {
      require(e.is_number(), Errc::SchemaError, at(k) + " must be an array of numbers");
      r.push_back(e.get<double>());
    }
    return set(k, r);
  }

  std::vector<int> integers(const std::string& k, std::optional<std::vector<int>> def = std::nullopt) {
    const json* v = take(k);
    if (!v) return set(k, need(k, def));
    require(v->is_array(), Errc::SchemaError, at(k) + " must be an array of integers");
    std::vector<int> r;
    for (const auto& e : *v) {
      require(e.is_number_integer(), Errc::SchemaError, at(k) + " must be an array of integers");
      r.push_back(e.get<int>());
    }
    return set(k, r);
  }

  std::vector<std::vector<double>> matrix(const std::string& k) {
    const json* v = take(k);
    require(v != nullptr, Errc::SchemaError, at(k) + " is required");
    require(v->is_array() && !v->empty(), Errc::SchemaError, at(k) + " must be an array of rows");
    std::vector<std::vector<double>> m;
    for (const auto& row : *v) {
      require(row.is_array() && row.size() == v->front().size(), Errc::SchemaError, at(k) + " rows must match");
      std::vector<double> r;
      for (const auto& e : row) {
        require(e.is_number(), Errc::SchemaError, at(k) + " entries must be numbers");
        r.push_back(e.get<double>());
      }
      m.push_back(r);
    }
    out_[k] = m;
    return m;
  }

  bool has(const std::string& k) const { return in_.contains(k); }

  /// Raw subtree, consumed; the caller stores its canonical form with put().
  json sub(const std::string& k) {
    const json* v = take(k);
    return v ? *v : json();
  }

  void put(const std::string& k, json v) { out_[k] = std::move(v); }

  std::string at(const std::string& k) const { return where_.empty() ? k : where_ + "." + k; }

  json done() {
    for (auto it = in_.begin(); it != in_.end(); ++it)
      require(seen_.count(it.key()) > 0, Errc::SchemaError, "unknown key '" + at(it.key()) + "'");
    return out_;
  }

 private:
  const json* take(const std::string& k) {
    seen_.insert(k);
    auto it = in_.find(k);
    return it == in_.end() ? nullptr : &*it;
  }

  template <class V>
  V need(const std::string& k, const std::optional<V>& def) {
    require(def.has_value(), Errc::SchemaError, at(k) + " is required");
    return *def;
  }

  template <class V>
  V set(const std::string& k, V v) {
    out_[k] = v;
    return v;
  }

  std::string where_;
  json in_ = json::object();
  json out_ = json::object();
  std::set<std::string> seen_;
};

inline json atom(const json& in, const std::string& where) {
  Table t(in, where);
  const std::string kind = t.text("atom", "zero", {"zero", "linear", "quadratic", "sqrt1p", "logcosh"});
  t.real("scale", 1.0);
  if (kind == "linear") t.reals("coef");
  return t.done();
}

inline json graph(const json& in, const std::string& where, int n) {
  Table t(in, where);
  const std::string kind = t.text("kind", "complete", {"complete", "ring", "matrix"});
  if (kind == "ring") {
    const auto m = t.integer("m");
    require(m >= 1 && m <= n - 1, Errc::SchemaError, t.at("m") + " must lie in [1, n-1]");
  }
  if (kind == "matrix") {
    const auto rows = t.matrix("rows");
    require(static_cast<int>(rows.size()) == n && static_cast<int>(rows.front().size()) == n, Errc::SchemaError,
            t.at("rows") + " must be n x n");
  }
  return t.done();
}

inline json cost(const json& in, const std::string& where, int n) {
  Table t(in, where);
  const std::string kind = t.text("kind", "zero", {"zero", "separable", "pairwise", "meanfield"});
  if (kind == "separable" || kind == "pairwise" || kind == "meanfield") t.put("own", atom(t.sub("own"), t.at("own")));
  if (kind == "pairwise" || kind == "meanfield") t.put("pair", atom(t.sub("pair"), t.at("pair")));
  if (kind == "pairwise") t.put("graph", graph(t.sub("graph"), t.at("graph"), n));
  if (kind == "meanfield") {
    t.real("mean_coef", 0.0);
    t.text("normalization", "distinct", {"distinct", "empirical"});
  }
  return t.done();
}

inline json lagrangian(const json& in, const std::string& where, int d) {
  Table t(in, where);
  const std::string kind = t.text("kind", "quadratic", {"quadratic", "weighted"});
  if (kind == "weighted") {
    const auto R = t.matrix("weights");
    require(static_cast<int>(R.size()) == d && static_cast<int>(R.front().size()) == d, Errc::SchemaError,
            t.at("weights") + " must be d x d");
  }
  return t.done();
}

inline json law(const json& in, const std::string& where, int d) {
  Table t(in, where);
  const std::string kind = t.text("kind", "dirac", {"dirac", "gaussian", "particles"});
  if (kind == "particles") {
    t.text("file");
  } else {
    const auto mean = t.reals("mean", std::vector<double>(static_cast<std::size_t>(d), 0.0));
    require(static_cast<int>(mean.size()) == d, Errc::SchemaError, t.at("mean") + " must have d entries");
    if (kind == "gaussian") {
      const auto var = t.reals("var");
      require(static_cast<int>(var.size()) == d, Errc::SchemaError, t.at("var") + " must have d entries");
    }
  }
  return t.done();
}

inline json initial(const json& in, int n, int d) {
  if (in.is_object() && in.contains("agents")) {
    Table t(in, "initial");
    const json agents = t.sub("agents");
    require(agents.is_array() && static_cast<int>(agents.size()) == n, Errc::SchemaError,
            "initial.agents must list one law per agent");
    json out = json::array();
    for (std::size_t i = 0; i < agents.size(); ++i)
      out.push_back(law(agents[i], "initial.agents." + std::to_string(i), d));
    t.put("agents", out);
    return t.done();
  }
  return law(in, "initial", d);
}

inline json problem(const json& in) {
  Table t(in, "problem");
  const int n = static_cast<int>(t.integer("n"));
  const int d = static_cast<int>(t.integer("d", 1));
  require(n >= 1 && d >= 1, Errc::SchemaError, "problem.n and problem.d must be positive");
  require(t.real("T", 1.0) > 0.0, Errc::SchemaError, "problem.T must be positive");
  t.flag("convex", true);
  t.put("lagrangian", lagrangian(t.sub("lagrangian"), "problem.lagrangian", d));
  t.put("F", cost(t.sub("F"), "problem.F", n));
  t.put("G", cost(t.sub("G"), "problem.G", n));
  return t.done();
}

inline json solver(const json& in) {
  Table t(in, "solver");
  {
    Table s(t.sub("full"), "solver.full");
    s.integer("points", 161);
    s.integer("steps", 400);
    t.put("full", s.done());
  }
  {
    Table s(t.sub("grid"), "solver.grid");
    s.integer("points", 401);
    s.integer("steps", 400);
    s.real("width", 6.0);
    t.put("grid", s.done());
  }
  {
    Table s(t.sub("picard"), "solver.picard");
    s.real("damping", 0.5);
    s.integer("max_iters", 60);
    s.real("tol", 1e-6);
    t.put("picard", s.done());
  }
  {
    Table s(t.sub("mc"), "solver.mc");
    s.integer("particles", 100000);
    s.integer("steps", 200);
    s.integer("threads", 1);
    t.put("mc", s.done());
  }
  {
    Table s(t.sub("gibbs"), "solver.gibbs");
    s.integer("samples", 1000000);
    s.integer("budget", std::int64_t{1} << 24);
    t.put("gibbs", s.done());
  }
  {
    Table s(t.sub("fbsde"), "solver.fbsde");
    s.integer("particles", 20000);
    s.integer("steps", 100);
    s.integer("degree", 3);
    s.integer("max_iters", 40);
    s.real("tol", 1e-3);
    t.put("fbsde", s.done());
  }
  return t.done();
}

inline json experiment_params(ExperimentKind k, const json& in, const std::string& where) {
  Table t(in, where);
  switch (k) {
    case ExperimentKind::GapSandwich:
    case ExperimentKind::QuadraticBound:
      t.integer("hatx_particles", 20000);
      t.text("bound_stats", "flow", {"flow", "sup"});
      t.integer("control_particles", 20000);
      if (k == ExperimentKind::QuadraticBound) t.integer("poincare_samples", 4000);
      break;
    case ExperimentKind::HeteroSweep: t.integers("m"); break;
    case ExperimentKind::MeanFieldRate:
      t.integers("n", std::vector<int>{2, 4, 8});
      t.real("exponent_max", -0.8);
      break;
    case ExperimentKind::ChaosMetric:
      t.integer("k", 1);
      t.integer("particles", 2048);
      t.integer("steps", 50);
      break;
    case ExperimentKind::FbsdeCrossCheck: t.real("value_tol", 1e-2); break;
    case ExperimentKind::SmallnessCheck: break;
  }
  return t.done();
}

inline json experiments(const json& in) {
  json out = json::array();
  if (in.is_null()) return out;
  require(in.is_array(), Errc::SchemaError, "experiments must be an array of tables");
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::string where = "experiments." + std::to_string(i);
    Table t(in[i], where);
    const std::string kind = t.text("kind");
    const ExperimentKind k = experiment_from_name(kind);
    t.put("params", experiment_params(k, t.sub("params"), where + ".params"));
    out.push_back(t.done());
  }
  return out;
}

}  // namespace schema

/// Validated scenario in canonical form (every default spelled out).
struct Scenario {
  json tree;
  std::string base_dir = ".";  ///< particle files are read relative to this

  std::string name() const { return tree.at("name").get<std::string>(); }
  std::uint64_t seed() const { return tree.at("seed").get<std::uint64_t>(); }
  const json& problem() const { return tree.at("problem"); }
  const json& initial() const { return tree.at("initial"); }
  const json& solver() const { return tree.at("solver"); }
  const json& experiments() const { return tree.at("experiments"); }

  std::string hash() const { return sha256_hex(tree.dump()); }
  /// Hash of everything except the experiment list.
  std::string setup_hash() const {
    json t = tree;
    t.erase("experiments");
    return sha256_hex(t.dump());
  }
  std::string echo() const { return toml::dump(tree); }
};

inline Scenario validate_scenario(const json& raw, std::string base_dir = ".") {
  schema::Table t(raw, "");
  const std::string name = t.text("name");
  require(!name.empty(), Errc::SchemaError, "name must not be empty");
  for (char c : name)
    require(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.', Errc::SchemaError,
            "name may use letters, digits, '_', '-' and '.'");
  t.unsigned_integer("seed", 1);
  const json p = schema::problem(t.sub("problem"));
  t.put("problem", p);
  t.put("initial", schema::initial(t.sub("initial"), p["n"].get<int>(), p["d"].get<int>()));
  t.put("solver", schema::solver(t.sub("solver")));
  t.put("experiments", schema::experiments(t.sub("experiments")));
  Scenario s;
  s.tree = t.done();
  s.base_dir = std::move(base_dir);
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  const auto slash = path.find_last_of('/');
  return validate_scenario(toml::parse_file(path), slash == std::string::npos ? "." : path.substr(0, slash));
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace build {

inline Atom atom(const json& j) {
  Atom a;
  a.kind = atom_from_name(j.at("atom").get<std::string>());
  a.scale = j.at("scale").get<double>();
  if (j.contains("coef")) a.coef = j.at("coef").get<std::vector<double>>();
  return a;
}

inline Eigen::MatrixXd graph(const json& j, int n) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "complete") return n > 1 ? Eigen::MatrixXd(complete_adjacency(n) / double(n - 1)) : Eigen::MatrixXd::Zero(1, 1);
  if (kind == "ring") {
    const int m = j.at("m").get<int>();
    return circulant_adjacency(n, m) / double(m);
  }
  const auto rows = j.at("rows").get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd J(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) J(r, c) = rows[r][c];
  return J;
}

inline CostSpec cost(const json& j, int n, int d) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "zero") return CostSpec::zero(n, d);
  if (kind == "separable") return CostSpec::separable(n, d, atom(j.at("own")));
  if (kind == "pairwise") return CostSpec::pairwise(n, d, atom(j.at("own")), atom(j.at("pair")), graph(j.at("graph"), n));
  const auto norm = j.at("normalization").get<std::string>() == "empirical" ? PairNormalization::Empirical
                                                                            : PairNormalization::DistinctPairs;
  return CostSpec::mean_field(n, d, atom(j.at("own")), atom(j.at("pair")), j.at("mean_coef").get<double>(), norm);
}

inline LagrangianSpec lagrangian(const json& j, int d) {
  if (j.at("kind").get<std::string>() == "quadratic") return LagrangianSpec::quadratic(d);
  const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd R(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) R(r, c) = rows[r][c];
  return LagrangianSpec::weighted(R);
}

/// Problem with n agents; the scenario's own n when n <= 0.
inline ControlProblem problem(const Scenario& s, int n = 0) {
  const json& j = s.problem();
  ControlProblem p;
  p.name = s.name();
  p.n = n > 0 ? n : j.at("n").get<int>();
  p.d = j.at("d").get<int>();
  p.T = j.at("T").get<double>();
  p.convex_flag = j.at("convex").get<bool>();
  p.lagrangians = {lagrangian(j.at("lagrangian"), p.d)};
  p.F = cost(j.at("F"), p.n, p.d);
  p.G = cost(j.at("G"), p.n, p.d);
  p.validate();
  return p;
}

/// Whitespace or comma separated rows of d coordinates.
inline InitialLaw particle_file(const std::string& path, int d) {
  std::ifstream is(path);
  require(static_cast<bool>(is), Errc::IoError, "cannot open particle file '" + path + "'");
  std::vector<double> pts;
  std::string line;
  while (std::getline(is, line)) {
    for (char& c : line)
      if (c == ',') c = ' ';
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t\r")] == '#') continue;
    std::istringstream ls(line);
    double v;
    int count = 0;
    while (ls >> v) {
      pts.push_back(v);
      ++count;
    }
    require(count == d, Errc::SchemaError, "particle file rows need " + std::to_string(d) + " numbers");
  }
  return InitialLaw::particles(d, std::move(pts));
}

inline InitialLaw law(const json& j, int d, const std::string& base) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "particles") {
    std::string f = j.at("file").get<std::string>();
    if (!f.empty() && f[0] != '/') f = base + "/" + f;
    return particle_file(f, d);
  }
  const auto mean = j.at("mean").get<std::vector<double>>();
  if (kind == "dirac") return InitialLaw::dirac(mean);
  return InitialLaw::gaussian(mean, j.at("var").get<std::vector<double>>());
}

inline std::vector<InitialLaw> initial(const Scenario& s, int n = 0) {
  const json& j = s.initial();
  const int d = s.problem().at("d").get<int>();
  const int N = n > 0 ? n : s.problem().at("n").get<int>();
  if (j.contains("agents")) {
    require(N == static_cast<int>(j.at("agents").size()), Errc::SchemaError, "per-agent laws fix the number of agents");
    std::vector<InitialLaw> out;
    for (const auto& a : j.at("agents")) out.push_back(law(a, d, s.base_dir));
    return out;
  }
  return std::vector<InitialLaw>(static_cast<std::size_t>(N), law(j, d, s.base_dir));
}

inline DistributedConfig distributed(const Scenario& s) {
  const json& g = s.solver().at("grid");
  const json& pc = s.solver().at("picard");
  DistributedConfig c;
  c.points = g.at("points").get<int>();
  c.steps = g.at("steps").get<int>();
  c.width_factor = g.at("width").get<double>();
  c.picard.damping = pc.at("damping").get<double>();
  c.picard.max_iters = pc.at("max_iters").get<int>();
  c.picard.tol = pc.at("tol").get<double>();
  return c;
}

inline GibbsConfig gibbs(const Scenario& s) {
  const json& g = s.solver().at("gibbs");
  GibbsConfig c;
  c.mc_samples = g.at("samples").get<std::size_t>();
  c.tensor_budget = g.at("budget").get<std::size_t>();
  c.seed = s.seed() ^ 0x61BB5u;
  return c;
}

inline SimConfig mc(const Scenario& s, double T) {
  const json& m = s.solver().at("mc");
  SimConfig c;
  c.particles = m.at("particles").get<std::size_t>();
  c.steps = m.at("steps").get<int>();
  c.threads = m.at("threads").get<int>();
  c.T = T;
  c.seed = s.seed();
  return c;
}

inline FbsdeConfig fbsde(const Scenario& s) {
  const json& f = s.solver().at("fbsde");
  FbsdeConfig c;
  c.particles = f.at("particles").get<std::size_t>();
  c.steps = f.at("steps").get<int>();
  c.degree = f.at("degree").get<int>();
  c.max_iters = f.at("max_iters").get<int>();
  c.tol = f.at("tol").get<double>();
  c.seed = s.seed() + 11;
  return c;
}

}  // namespace build

}  // namespace distgap
