#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jkoflow/diagnostics.hpp"
#include "jkoflow/jko.hpp"
#include "jkoflow/measure.hpp"

namespace jkoflow {

// %.17g round-trips doubles exactly; all writers share it so reruns are
// byte-identical.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << body;
}

// One row per node: flat index, integer coordinates, weight, density, and
// the pressure column when present.
inline std::string snapshot_csv(const DiscreteMeasure& rho,
                                const std::vector<double>& pressure = {}) {
  const LatticeSpec& lat = rho.lattice();
  std::string s = "flat_index";
  for (int k = 0; k < lat.dim(); ++k) s += ",i" + std::to_string(k + 1);
  s += ",weight,density";
  if (!pressure.empty()) s += ",pressure";
  s += "\n";
  for (std::int64_t z = 0; z < lat.size(); ++z) {
    s += std::to_string(z);
    auto idx = lat.multi(z);
    for (int k = 0; k < lat.dim(); ++k) s += "," + std::to_string(idx[k]);
    s += "," + fmt(rho.weight(z)) + "," + fmt(rho.density(z));
    if (!pressure.empty()) s += "," + fmt(pressure[z]);
    s += "\n";
  }
  return s;
}

inline std::string diagnostics_csv(const std::vector<StepDiagnostics>& steps) {
  std::string s =
      "k,t,energy,w2_squared,speed,fisher,fisher_potential,fisher_crowd,"
      "optimality_residual,complementarity_residual,mass_drift,gap,"
      "dissipation_partial\n";
  for (const auto& d : steps) {
    s += std::to_string(d.k) + "," + fmt(d.t) + "," + fmt(d.energy) + "," +
         fmt(d.w2_squared) + "," + fmt(d.speed) + "," + fmt(d.fisher) + "," +
         fmt(d.fisher_potential) + "," + fmt(d.fisher_crowd) + "," +
         fmt(d.optimality_residual) + "," + fmt(d.complementarity_residual) +
         "," + fmt(d.mass_drift) + "," + fmt(d.gap) + "," +
         fmt(d.dissipation_partial) + "\n";
  }
  return s;
}

inline nlohmann::json diagnostics_json(const std::vector<StepDiagnostics>& steps) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& d : steps) {
    nlohmann::json r;
    r["k"] = d.k;
    r["t"] = d.t;
    r["energy"] = d.energy;
    r["w2_squared"] = d.w2_squared;
    r["speed"] = d.speed;
    r["fisher"] = d.fisher;
    r["fisher_potential"] = d.fisher_potential;
    r["fisher_crowd"] = d.fisher_crowd;
    r["optimality_residual"] = d.optimality_residual;
    r["complementarity_residual"] = d.complementarity_residual;
    r["mass_drift"] = d.mass_drift;
    r["gap"] = d.gap;
    r["dissipation_partial"] = d.dissipation_partial;
    rows.push_back(r);
  }
  return rows;
}

inline std::string plan_csv(const TransportPlan& plan) {
  std::string s = "x_index,y_index,mass\n";
  for (const auto& e : plan.entries)
    s += std::to_string(e.x) + "," + std::to_string(e.y) + "," + fmt(e.mass) + "\n";
  return s;
}

// Minimal leveled logger driven by LOG_LEVEL in {error,warn,info,debug}.
class Log {
 public:
  enum Level { error = 0, warn = 1, info = 2, debug = 3 };

  static Level threshold() {
    static Level lvl = [] {
      const char* env = std::getenv("LOG_LEVEL");
      std::string s = env ? env : "warn";
      if (s == "error") return error;
      if (s == "info") return info;
      if (s == "debug") return debug;
      return warn;
    }();
    return lvl;
  }

  static void emit(Level lvl, const std::string& msg) {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (lvl <= threshold())
      std::fprintf(stderr, "[%s] %s\n", names[lvl], msg.c_str());
  }
};

}  // namespace jkoflow
