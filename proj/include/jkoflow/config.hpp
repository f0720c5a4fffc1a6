#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "jkoflow/energy.hpp"
#include "jkoflow/jko.hpp"
#include "jkoflow/lattice.hpp"
#include "jkoflow/measure.hpp"

namespace jkoflow {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cfgdetail {

using nlohmann::json;

inline void require_keys(const json& obj, const std::string& where,
                         const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T get_required(const json& obj, const std::string& where, const std::string& key) {
  if (!obj.contains(key))
    throw ConfigError(where + ": missing required key '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T get_or(const json& obj, const std::string& where, const std::string& key,
         T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace cfgdetail

struct PotentialConfig {
  std::string kind = "zero";  // zero | linear | quadratic | table
  std::vector<double> gradient;  // linear: V(x) = gradient . x
  std::vector<double> center;    // quadratic: V(x) = stiffness |x - center|^2
  double stiffness = 0.0;
  std::string path;  // table: CSV rows "node_index,value"
  std::optional<double> lipschitz;

  bool analytic() const { return kind != "table"; }

  double value(const Point& p, int dim) const {
    if (kind == "zero") return 0.0;
    if (kind == "linear") {
      double s = 0.0;
      for (int k = 0; k < dim; ++k) s += gradient[k] * p[k];
      return s;
    }
    if (kind == "quadratic") {
      double s = 0.0;
      for (int k = 0; k < dim; ++k) s += (p[k] - center[k]) * (p[k] - center[k]);
      return stiffness * s;
    }
    throw ConfigError("potential: no closed form for kind '" + kind + "'");
  }

  Point gradient_at(const Point& p, int dim) const {
    Point g{0, 0, 0};
    if (kind == "linear")
      for (int k = 0; k < dim; ++k) g[k] = gradient[k];
    else if (kind == "quadratic")
      for (int k = 0; k < dim; ++k) g[k] = 2.0 * stiffness * (p[k] - center[k]);
    else if (kind != "zero")
      throw ConfigError("potential: gradient unavailable for kind '" + kind + "'");
    return g;
  }

  // exact box Lipschitz constant for the built-in shapes
  double default_lipschitz(const LatticeSpec& lat) const {
    if (kind == "zero") return 0.0;
    if (kind == "linear") {
      double s = 0.0;
      for (int k = 0; k < lat.dim(); ++k) s += gradient[k] * gradient[k];
      return std::sqrt(s);
    }
    if (kind == "quadratic") {
      double far = 0.0;
      for (int k = 0; k < lat.dim(); ++k) {
        double lo = lat.origin(k), hi = lat.origin(k) + lat.extent(k) * lat.spacing();
        far += std::max((lo - center[k]) * (lo - center[k]),
                        (hi - center[k]) * (hi - center[k]));
      }
      return 2.0 * stiffness * std::sqrt(far);
    }
    throw ConfigError("potential: lipschitz must be given for table potentials");
  }

  std::vector<double> sample(const LatticeSpec& lat) const {
    std::vector<double> v(lat.size(), 0.0);
    if (kind == "table") {
      std::ifstream in(path);
      if (!in) throw ConfigError("potential: cannot open table '" + path + "'");
      std::string line;
      std::int64_t filled = 0;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string a, b;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b))
          throw ConfigError("potential table: bad row '" + line + "'");
        std::int64_t idx = std::stoll(a);
        if (idx < 0 || idx >= lat.size())
          throw ConfigError("potential table: node index out of range");
        v[idx] = std::stod(b);
        ++filled;
      }
      if (filled != lat.size())
        throw ConfigError("potential table: need one row per node");
      return v;
    }
    for (std::int64_t z = 0; z < lat.size(); ++z)
      v[z] = value(lat.position(z), lat.dim());
    return v;
  }
};

struct InitialConfig {
  std::string kind = "uniform";  // uniform | gaussian | indicator | atom | table
  std::vector<double> center;
  double width = 0.1;
  std::vector<double> low, high;
  std::int64_t node = 0;
  std::string path;

  bool analytic_density() const {
    return kind == "uniform" || kind == "gaussian" || kind == "indicator";
  }

  std::function<double(const Point&)> density(int dim) const {
    if (kind == "uniform") return [](const Point&) { return 1.0; };
    if (kind == "gaussian") {
      auto c = center;
      double w = width;
      return [c, w, dim](const Point& p) {
        double s = 0.0;
        for (int k = 0; k < dim; ++k) s += (p[k] - c[k]) * (p[k] - c[k]);
        return std::exp(-s / (2.0 * w * w));
      };
    }
    if (kind == "indicator") {
      auto lo = low;
      auto hi = high;
      return [lo, hi, dim](const Point& p) {
        for (int k = 0; k < dim; ++k)
          if (p[k] < lo[k] || p[k] > hi[k]) return 0.0;
        return 1.0;
      };
    }
    throw ConfigError("initial: no closed-form density for kind '" + kind + "'");
  }

  DiscreteMeasure build(const LatticeSpec& lat) const {
    if (kind == "atom") return DiscreteMeasure::dirac(lat, node);
    if (kind == "table") {
      std::ifstream in(path);
      if (!in) throw ConfigError("initial: cannot open table '" + path + "'");
      std::vector<double> w(lat.size(), 0.0);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string a, b;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b))
          throw ConfigError("initial table: bad row '" + line + "'");
        w.at(std::stoll(a)) = std::stod(b);
      }
      return DiscreteMeasure::from_unnormalized(lat, w);
    }
    return discretize_density(lat, density(lat.dim()));
  }
};

struct StudyRule {
  double c = 0.25;
  double alpha = 0.5;  // tau = c h^alpha; needs alpha < 1 so h/tau vanishes
  std::vector<double> levels;
};

struct StudyConfig {
  std::vector<std::pair<double, double>> pairs;  // (h, tau)
  std::optional<StudyRule> rule;
  int reference_cells = 512;
  double horizon = 0.25;

  std::vector<std::pair<double, double>> resolved() const {
    if (!rule) return pairs;
    std::vector<std::pair<double, double>> out;
    for (double h : rule->levels)
      out.emplace_back(h, rule->c * std::pow(h, rule->alpha));
    return out;
  }
};

struct ToyConfig {
  PotentialConfig potential;
  double tau = 0.1;
  double horizon = 1.0;
  std::vector<double> start;
};

struct OutputConfig {
  std::string directory = "out";
  std::vector<std::string> formats = {"csv"};
  int snapshot_stride = 1;
  bool dump_plans = false;
};

struct DiagnosticsConfig {
  double edi_epsilon = 0.1;
  int quadrature_points = 4;
  bool slope_check = true;
  bool edi_report = false;
};

struct ExperimentConfig {
  nlohmann::json raw;  // resolved echo for the sidecar

  int dimension = 1;
  double spacing = 0.1;
  std::vector<int> extents;
  std::vector<double> origin;

  std::string internal_kind = "none";  // none | entropy | power_law
  double exponent = 2.0;
  bool crowd = false;
  PotentialConfig potential;
  std::optional<std::pair<std::vector<double>, std::vector<double>>> interaction;

  InitialConfig initial;

  JkoConfig jko;
  bool steps_given = false;
  double horizon = 0.0;

  DiagnosticsConfig diagnostics;
  OutputConfig output;
  std::optional<StudyConfig> study;
  std::optional<ToyConfig> toy;
  std::uint64_t seed = 0;

  LatticeSpec lattice() const {
    return build_lattice(dimension, spacing, extents, origin);
  }

  EnergySpec energy(const LatticeSpec& lat) const {
    std::vector<double> v;
    double lip = 0.0;
    if (potential.kind != "zero") {
      v = potential.sample(lat);
      lip = potential.lipschitz.value_or(potential.default_lipschitz(lat));
    }
    EnergySpec spec =
        crowd ? EnergySpec::crowd(lat, std::move(v), lip)
              : EnergySpec::free_energy(lat, make_internal(), std::move(v), lip);
    if (interaction)
      spec = spec.with_interaction(RadialKernel(interaction->first, interaction->second));
    return spec;
  }

  std::optional<InternalDensity> make_internal() const {
    if (internal_kind == "none") return std::nullopt;
    if (internal_kind == "entropy") return InternalDensity::entropy();
    if (internal_kind == "power_law") return InternalDensity::power_law(exponent);
    throw ConfigError("energy.internal: unknown kind '" + internal_kind + "'");
  }
};

namespace cfgdetail {

inline PotentialConfig parse_potential(const json& j, const std::string& where) {
  require_keys(j, where,
               {"kind", "gradient", "center", "stiffness", "path", "lipschitz"});
  PotentialConfig p;
  p.kind = get_or<std::string>(j, where, "kind", "zero");
  if (p.kind != "zero" && p.kind != "linear" && p.kind != "quadratic" &&
      p.kind != "table")
    throw ConfigError(where + ".kind: unknown potential '" + p.kind + "'");
  p.gradient = get_or<std::vector<double>>(j, where, "gradient", {});
  p.center = get_or<std::vector<double>>(j, where, "center", {});
  p.stiffness = get_or<double>(j, where, "stiffness", 0.0);
  p.path = get_or<std::string>(j, where, "path", "");
  if (j.contains("lipschitz")) p.lipschitz = j.at("lipschitz").get<double>();
  if (p.kind == "linear" && p.gradient.empty())
    throw ConfigError(where + ": linear potential needs a gradient");
  if (p.kind == "quadratic" && p.center.empty())
    throw ConfigError(where + ": quadratic potential needs a center");
  if (p.kind == "table" && p.path.empty())
    throw ConfigError(where + ": table potential needs a path");
  if (p.kind == "table" && !p.lipschitz)
    throw ConfigError(where + ": table potential needs an explicit lipschitz");
  return p;
}

inline InitialConfig parse_initial(const json& j, const std::string& where) {
  require_keys(j, where, {"kind", "center", "width", "low", "high", "node", "path"});
  InitialConfig c;
  c.kind = get_or<std::string>(j, where, "kind", "uniform");
  c.center = get_or<std::vector<double>>(j, where, "center", {});
  c.width = get_or<double>(j, where, "width", 0.1);
  c.low = get_or<std::vector<double>>(j, where, "low", {});
  c.high = get_or<std::vector<double>>(j, where, "high", {});
  c.node = get_or<std::int64_t>(j, where, "node", 0);
  c.path = get_or<std::string>(j, where, "path", "");
  if (c.kind == "gaussian" && c.center.empty())
    throw ConfigError(where + ": gaussian initial data needs a center");
  if (c.kind == "indicator" && (c.low.empty() || c.high.empty()))
    throw ConfigError(where + ": indicator initial data needs low/high");
  if (c.kind == "gaussian" && !(c.width > 0.0))
    throw ConfigError(where + ": gaussian width must be positive");
  return c;
}

}  // namespace cfgdetail

inline ExperimentConfig parse_config(const nlohmann::json& root) {
  using namespace cfgdetail;
  require_keys(root, "config",
               {"lattice", "energy", "initial", "jko", "diagnostics", "output",
                "study", "toy", "seed"});
  ExperimentConfig cfg;
  cfg.raw = root;

  const json& lat = root.contains("lattice") ? root.at("lattice") : json::object();
  require_keys(lat, "lattice", {"dimension", "spacing", "extents", "origin", "mask"});
  if (lat.contains("mask") && !lat.at("mask").is_null())
    throw ConfigError(
        "lattice.mask: node masks are reserved for general domains and "
        "rejected in v1 (only axis-aligned boxes are supported)");
  cfg.dimension = get_required<int>(lat, "lattice", "dimension");
  cfg.spacing = get_required<double>(lat, "lattice", "spacing");
  cfg.extents = get_required<std::vector<int>>(lat, "lattice", "extents");
  cfg.origin = get_or<std::vector<double>>(lat, "lattice", "origin", {});

  const json& en = root.contains("energy") ? root.at("energy") : json::object();
  require_keys(en, "energy", {"internal", "exponent", "crowd", "potential", "interaction"});
  cfg.internal_kind = get_or<std::string>(en, "energy", "internal", "none");
  cfg.exponent = get_or<double>(en, "energy", "exponent", 2.0);
  cfg.crowd = get_or<bool>(en, "energy", "crowd", false);
  if (en.contains("potential"))
    cfg.potential = parse_potential(en.at("potential"), "energy.potential");
  if (en.contains("interaction")) {
    const json& w = en.at("interaction");
    require_keys(w, "energy.interaction", {"radii", "values"});
    cfg.interaction = {get_required<std::vector<double>>(w, "energy.interaction", "radii"),
                       get_required<std::vector<double>>(w, "energy.interaction", "values")};
  }
  if (cfg.crowd && cfg.internal_kind != "none")
    throw ConfigError("energy: the crowd constraint excludes an internal term");

  if (root.contains("initial"))
    cfg.initial = parse_initial(root.at("initial"), "initial");

  const json& jk = root.contains("jko") ? root.at("jko") : json::object();
  require_keys(jk, "jko",
               {"tau", "steps", "horizon", "solver", "gap_tolerance",
                "max_iterations", "entropy_clamp", "window"});
  cfg.jko.tau = get_or<double>(jk, "jko", "tau", 0.1);
  bool has_steps = jk.contains("steps");
  bool has_horizon = jk.contains("horizon");
  if (has_steps == has_horizon)
    throw ConfigError("jko: give exactly one of steps or horizon");
  if (has_steps) {
    cfg.jko.steps = get_required<int>(jk, "jko", "steps");
    cfg.steps_given = true;
    cfg.horizon = cfg.jko.steps * cfg.jko.tau;
  } else {
    cfg.horizon = get_required<double>(jk, "jko", "horizon");
    double n = cfg.horizon / cfg.jko.tau;
    cfg.jko.steps = static_cast<int>(std::llround(n));
    if (std::abs(n - cfg.jko.steps) > 1e-9)
      throw ConfigError("jko: horizon must be an integer multiple of tau");
  }
  if (cfg.jko.steps < 1) throw ConfigError("jko: need at least one step");
  std::string solver = get_or<std::string>(jk, "jko", "solver",
                                           cfg.crowd ? "crowd_lp" : "frank_wolfe");
  if (solver == "frank_wolfe")
    cfg.jko.solver = JkoConfig::Solver::frank_wolfe;
  else if (solver == "crowd_lp")
    cfg.jko.solver = JkoConfig::Solver::crowd_lp;
  else if (solver == "pure_potential")
    cfg.jko.solver = JkoConfig::Solver::pure_potential;
  else
    throw ConfigError("jko.solver: unknown solver '" + solver + "'");
  cfg.jko.gap_tolerance = get_or<double>(jk, "jko", "gap_tolerance", 1e-8);
  cfg.jko.max_iterations = get_or<int>(jk, "jko", "max_iterations", 100000);
  cfg.jko.entropy_clamp = get_or<double>(jk, "jko", "entropy_clamp", 1e-10);
  if (jk.contains("window") && !jk.at("window").is_null())
    cfg.jko.window = jk.at("window").get<double>();

  const json& dg = root.contains("diagnostics") ? root.at("diagnostics") : json::object();
  require_keys(dg, "diagnostics",
               {"edi_epsilon", "quadrature_points", "slope_check", "edi_report"});
  cfg.diagnostics.edi_epsilon = get_or<double>(dg, "diagnostics", "edi_epsilon", 0.1);
  cfg.diagnostics.quadrature_points =
      get_or<int>(dg, "diagnostics", "quadrature_points", 4);
  cfg.diagnostics.slope_check = get_or<bool>(dg, "diagnostics", "slope_check", true);
  cfg.diagnostics.edi_report = get_or<bool>(dg, "diagnostics", "edi_report", false);
  cfg.jko.slope_check = cfg.diagnostics.slope_check;
  cfg.jko.edi_epsilon = cfg.diagnostics.edi_epsilon;
  cfg.jko.edi_quadrature = cfg.diagnostics.quadrature_points;
  if (!(cfg.diagnostics.edi_epsilon > 0.0 && cfg.diagnostics.edi_epsilon < 1.0))
    throw ConfigError("diagnostics.edi_epsilon: must lie in (0,1)");

  const json& out = root.contains("output") ? root.at("output") : json::object();
  require_keys(out, "output", {"directory", "formats", "snapshot_stride", "dump_plans"});
  cfg.output.directory = get_or<std::string>(out, "output", "directory", "out");
  cfg.output.formats =
      get_or<std::vector<std::string>>(out, "output", "formats", {"csv"});
  cfg.output.snapshot_stride = get_or<int>(out, "output", "snapshot_stride", 1);
  cfg.output.dump_plans = get_or<bool>(out, "output", "dump_plans", false);
  cfg.jko.keep_plans = cfg.output.dump_plans;
  for (const auto& f : cfg.output.formats)
    if (f != "csv" && f != "json")
      throw ConfigError("output.formats: unknown format '" + f + "'");
  if (cfg.output.snapshot_stride < 1)
    throw ConfigError("output.snapshot_stride: must be >= 1");

  if (root.contains("study")) {
    const json& st = root.at("study");
    require_keys(st, "study", {"pairs", "rule", "reference_cells", "horizon"});
    StudyConfig sc;
    bool has_pairs = st.contains("pairs"), has_rule = st.contains("rule");
    if (has_pairs == has_rule)
      throw ConfigError("study: give exactly one of pairs or rule");
    if (has_pairs) {
      for (const auto& pr : st.at("pairs")) {
        if (!pr.is_array() || pr.size() != 2)
          throw ConfigError("study.pairs: entries are [h, tau]");
        sc.pairs.emplace_back(pr[0].get<double>(), pr[1].get<double>());
      }
    } else {
      const json& r = st.at("rule");
      require_keys(r, "study.rule", {"c", "alpha", "levels"});
      StudyRule rule;
      rule.c = get_required<double>(r, "study.rule", "c");
      rule.alpha = get_required<double>(r, "study.rule", "alpha");
      rule.levels = get_required<std::vector<double>>(r, "study.rule", "levels");
      sc.rule = rule;
    }
    sc.reference_cells = get_or<int>(st, "study", "reference_cells", 512);
    sc.horizon = get_or<double>(st, "study", "horizon", 0.25);
    for (auto [h, tau] : sc.resolved())
      if (!(h > 0.0) || !(tau > 0.0))
        throw ConfigError("study: h and tau must be positive");
    cfg.study = sc;
  }

  if (root.contains("toy")) {
    const json& ty = root.at("toy");
    require_keys(ty, "toy", {"potential", "tau", "horizon", "start"});
    ToyConfig tc;
    tc.potential = parse_potential(ty.at("potential"), "toy.potential");
    if (!tc.potential.analytic() || tc.potential.kind == "zero")
      throw ConfigError("toy.potential: needs a linear or quadratic potential");
    tc.tau = get_required<double>(ty, "toy", "tau");
    tc.horizon = get_required<double>(ty, "toy", "horizon");
    tc.start = get_required<std::vector<double>>(ty, "toy", "start");
    cfg.toy = tc;
  }

  cfg.seed = get_or<std::uint64_t>(root, "config", "seed", 0);

  // structural validation that needs the lattice
  LatticeSpec built = cfg.lattice();
  if (cfg.crowd && built.volume() <= 1.0 + 1e-12)
    throw ConfigError("energy: infeasible capacity (|Omega| <= 1)");
  cfg.jko.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_config(root);
}

}  // namespace jkoflow
