#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "jkoflow/energy.hpp"
#include "jkoflow/lattice.hpp"
#include "jkoflow/measure.hpp"
#include "jkoflow/transport.hpp"

namespace jkoflow {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Per-step record written to the diagnostics CSV.
struct StepDiagnostics {
  int k = 0;
  double t = 0.0;
  double energy = 0.0;
  double w2_squared = 0.0;
  double speed = 0.0;  // W2 / tau
  double fisher = kNan;            // S^h
  double fisher_potential = kNan;  // S^h_V
  double fisher_crowd = kNan;      // S^h_CM on the truncated pressure
  double optimality_residual = kNan;
  double complementarity_residual = kNan;
  double mass_drift = 0.0;
  double gap = 0.0;
  double dissipation_partial = 0.0;  // sum_j W2^2_j / (2 tau) up to this step
  std::vector<double> pressure;            // crowd only
  std::vector<double> pressure_truncated;  // crowd only
};

// S^h_V on a raw density field: 1/4 sum_x sum_h |ell(u_{x+h}) - ell(u_x)
// + sqrt(max(u_x, u_{x+h})) (V(x+h) - V(x))|^2 / h^2 * h^d over in-box
// neighbor pairs. Empty V drops the drift term (plain S^h).
inline double fisher_with_potential(const LatticeSpec& lat,
                                    const std::vector<double>& u,
                                    const InternalDensity& kind,
                                    const std::vector<double>& V) {
  if (static_cast<std::int64_t>(u.size()) != lat.size())
    throw std::invalid_argument("fisher: density size mismatch");
  if (!V.empty() && static_cast<std::int64_t>(V.size()) != lat.size())
    throw std::invalid_argument("fisher: potential size mismatch");
  const double h = lat.spacing();
  const double scale = std::pow(h, lat.dim() - 2);
  std::vector<double> lv(lat.size());
  for (std::int64_t z = 0; z < lat.size(); ++z) lv[z] = kind.ell(u[z]);
  double s = 0.0;
  lat.for_each_pair([&](std::int64_t z, std::int64_t zeta, int, int) {
    double d = lv[zeta] - lv[z];
    if (!V.empty())
      d += std::sqrt(std::max(u[z], u[zeta])) * (V[zeta] - V[z]);
    s += d * d;
  });
  return 0.25 * s * scale;
}

inline double fisher_internal(const LatticeSpec& lat,
                              const std::vector<double>& u,
                              const InternalDensity& kind) {
  return fisher_with_potential(lat, u, kind, {});
}

inline double fisher_internal(const DiscreteMeasure& rho,
                              const InternalDensity& kind) {
  return fisher_internal(rho.lattice(), rho.density_view(), kind);
}

inline double fisher_with_potential(const DiscreteMeasure& rho,
                                    const InternalDensity& kind,
                                    const std::vector<double>& V) {
  return fisher_with_potential(rho.lattice(), rho.density_view(), kind, V);
}

// Edge density taken from the endpoint with the larger driving value; the
// tie goes to the first argument.
inline double upwind_mean(double u_x, double u_y, double w_x, double w_y) {
  return w_x >= w_y ? u_x : u_y;
}

// S^h_CM(u, p) = 1/4 sum_{(x,y)} [ (p_x-p_y)^2 + 2 (p_x-p_y)(V(x)-V(y))
//                + (V(x)-V(y))^2 Lambda_V(u_x,u_y) ] h^{d-2}
inline double fisher_crowd(const LatticeSpec& lat, const std::vector<double>& u,
                           const std::vector<double>& p,
                           const std::vector<double>& V,
                           double* complementarity_warn = nullptr) {
  if (static_cast<std::int64_t>(u.size()) != lat.size() ||
      static_cast<std::int64_t>(p.size()) != lat.size())
    throw std::invalid_argument("fisher_crowd: field size mismatch");
  double comp = 0.0;
  for (std::int64_t z = 0; z < lat.size(); ++z) {
    if (p[z] < 0.0) throw std::invalid_argument("fisher_crowd: negative pressure");
    comp = std::max(comp, p[z] * (1.0 - u[z]));
  }
  if (complementarity_warn) *complementarity_warn = comp;
  auto vat = [&](std::int64_t z) { return V.empty() ? 0.0 : V[z]; };
  const double scale = std::pow(lat.spacing(), lat.dim() - 2);
  double s = 0.0;
  lat.for_each_pair([&](std::int64_t x, std::int64_t y, int, int) {
    double dp = p[x] - p[y];
    double dv = vat(x) - vat(y);
    double lam = upwind_mean(u[x], u[y], vat(x), vat(y));
    s += dp * dp + 2.0 * dp * dv + dv * dv * lam;
  });
  return 0.25 * s * scale;
}

// g_eps(s) = (s - eps)^+ applied per node.
inline std::vector<double> truncate_pressure(const std::vector<double>& p,
                                             double eps) {
  if (eps < 0.0) throw std::invalid_argument("truncate_pressure: eps >= 0");
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::max(0.0, p[i] - eps);
  return out;
}

inline double default_pressure_truncation(double lipschitz_v, double h) {
  return (lipschitz_v + 1.0) * h;
}

struct PressureResult {
  std::vector<double> pressure;
  double constant = 0.0;
  double complementarity_residual = 0.0;
};

// p = (c - V - phi/tau)^+ from the duals of a congested step.
inline PressureResult extract_pressure(const DualPotentials& duals,
                                       const std::vector<double>& V, double tau,
                                       const std::vector<double>& density,
                                       std::optional<double> constant_override = {}) {
  if (!duals.has_constant && !constant_override)
    throw std::invalid_argument("extract_pressure: duals carry no constant");
  double c = constant_override.value_or(duals.constant);
  PressureResult out;
  out.constant = c;
  out.pressure.resize(duals.phi.size());
  for (std::size_t z = 0; z < duals.phi.size(); ++z) {
    double vz = V.empty() ? 0.0 : V[z];
    out.pressure[z] = std::max(0.0, c - vz - duals.phi[z] / tau);
    out.complementarity_residual =
        std::max(out.complementarity_residual,
                 out.pressure[z] * (1.0 - density[z]));
  }
  return out;
}

// Face-based gradient approximation of a node field. Each interior face
// (node, node + h e_axis) carries the difference quotient along that axis;
// dual cells are shared between the two directed contributions, so the
// squared norm weights every face with h^d / 2.
struct DiscreteGradient {
  LatticeSpec lattice;
  struct Face {
    std::int64_t node;  // lower endpoint
    int axis;
    double component;  // (f(node + h e_axis) - f(node)) / h
  };
  std::vector<Face> faces;

  double l2_norm_squared() const {
    double half_cell = 0.5 * lattice.cell_volume();
    double s = 0.0;
    for (const Face& f : faces) s += f.component * f.component * half_cell;
    return s;
  }
};

inline DiscreteGradient discrete_gradient(const LatticeSpec& lat,
                                          const std::vector<double>& field) {
  if (static_cast<std::int64_t>(field.size()) != lat.size())
    throw std::invalid_argument("discrete_gradient: field size mismatch");
  DiscreteGradient g{lat, {}};
  lat.for_each_pair([&](std::int64_t z, std::int64_t zeta, int axis, int sign) {
    if (sign != +1) return;  // one face per undirected pair
    g.faces.push_back({z, axis, (field[zeta] - field[z]) / lat.spacing()});
  });
  return g;
}

struct SlopeBoundReport {
  bool skipped = false;       // h/(2 tau) >= 1, prefactor not positive
  bool with_potential = false;
  double lhs = 0.0;    // W2^2/(2 tau^2) + d h/(4 tau) + slack allowance
  double rhs = 0.0;    // (1 - h/(2 tau)) * Fisher
  double fisher = 0.0;
  double slack = 0.0;  // lhs - rhs
};

// Transport speed against the Fisher information of the step output:
// W2^2/(2 tau^2) >= (1 - h/(2 tau)) S^h - d h/(4 tau), up to solver slack.
inline SlopeBoundReport slope_bound_check(const DiscreteMeasure& rho_next,
                                          const EnergySpec& spec, double tau,
                                          double w2_squared,
                                          double gap_slack = 0.0) {
  const LatticeSpec& lat = rho_next.lattice();
  const double h = lat.spacing();
  SlopeBoundReport r;
  if (h / (2.0 * tau) >= 1.0) {
    r.skipped = true;
    return r;
  }
  if (!spec.has_internal())
    throw std::invalid_argument("slope_bound_check: internal energy required");
  r.with_potential = spec.has_potential();
  r.fisher = r.with_potential
                 ? fisher_with_potential(rho_next, spec.internal(), spec.potential())
                 : fisher_internal(rho_next, spec.internal());
  r.lhs = w2_squared / (2.0 * tau * tau) + lat.dim() * h / (4.0 * tau) + gap_slack;
  r.rhs = (1.0 - h / (2.0 * tau)) * r.fisher;
  r.slack = r.lhs - r.rhs;
  return r;
}

struct EdiLedger {
  double energy_change = 0.0;  // F^h(rho_N) - F^h(rho_0)
  double kinetic = 0.0;        // 1/2 sum tau (W2/tau)^2
  double fisher_term = 0.0;    // integral of the Fisher information in d lambda_eps
  double correction = 0.0;     // (d T / 4) (h / tau) log eps
  double epsilon = 0.0;
  double total = 0.0;
};

// Assembles the dissipation ledger from per-step data. The Fisher term is a
// midpoint quadrature over [(k+eps) tau, (k+1) tau] with the time weight
// (1 - h/(2 s tau)); each quadrature point costs one fractional-step solve,
// supplied by `interpolant_fisher(k, s)`.
inline EdiLedger edi_report_from_steps(
    double energy_initial, double energy_final,
    const std::vector<double>& w2_squared_per_step, double tau, int dim,
    double h, double eps, int quadrature_points,
    const std::function<double(int, double)>& interpolant_fisher) {
  if (!(eps > 0.0 && eps < 1.0))
    throw std::invalid_argument("edi_report: eps must lie in (0,1)");
  if (quadrature_points < 1)
    throw std::invalid_argument("edi_report: need >= 1 quadrature point");
  EdiLedger ledger;
  ledger.epsilon = eps;
  ledger.energy_change = energy_final - energy_initial;
  const int N = static_cast<int>(w2_squared_per_step.size());
  for (double w2sq : w2_squared_per_step)
    ledger.kinetic += 0.5 * w2sq / tau;
  for (int k = 0; k < N; ++k) {
    for (int qp = 0; qp < quadrature_points; ++qp) {
      double s = eps + (1.0 - eps) * (qp + 0.5) / quadrature_points;
      double weight = tau * (1.0 - eps) / quadrature_points *
                      (1.0 - h / (2.0 * s * tau));
      ledger.fisher_term += weight * interpolant_fisher(k, s);
    }
  }
  const double T = N * tau;
  ledger.correction = dim * T / 4.0 * (h / tau) * std::log(eps);
  ledger.total = ledger.energy_change + ledger.kinetic + ledger.fisher_term +
                 ledger.correction;
  return ledger;
}

// ||f_hat - mean||^2 / sum_{Sigma^h} |f_p - f_q|^2 h^{d-2}; throws on
// constant fields where the ratio is undefined.
inline double poincare_ratio(const LatticeSpec& lat,
                             const std::vector<double>& field) {
  if (static_cast<std::int64_t>(field.size()) != lat.size())
    throw std::invalid_argument("poincare_ratio: field size mismatch");
  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(lat.size());
  double num = 0.0;
  for (double v : field) num += (v - mean) * (v - mean);
  num *= lat.cell_volume();
  double den = 0.0;
  lat.for_each_pair([&](std::int64_t z, std::int64_t zeta, int, int) {
    double d = field[z] - field[zeta];
    den += d * d;
  });
  den *= std::pow(lat.spacing(), lat.dim() - 2);
  if (den == 0.0)
    throw std::domain_error("poincare_ratio: constant field");
  return num / den;
}

// a, b >= 0 with a >= b - eps implies a^2 >= (1 - eps) b^2 - eps.
inline bool elementary_inequality_check(double a, double b, double eps) {
  if (a < 0.0 || b < 0.0 || eps <= 0.0 || a < b - eps)
    throw std::invalid_argument("elementary_inequality_check: precondition violated");
  long double lhs = static_cast<long double>(a) * a;
  long double rhs = (1.0L - static_cast<long double>(eps)) *
                        (static_cast<long double>(b) * b) -
                    eps;
  return lhs >= rhs;
}

// Residual of f'(u) + V + phi/tau = const on {u > threshold}, with the
// additive gauge chosen by a rho-weighted least-squares fit.
inline double optimality_residual(const EnergySpec& spec,
                                  const DiscreteMeasure& rho,
                                  const DualPotentials& duals, double tau,
                                  double threshold) {
  if (!spec.has_internal()) return kNan;
  const InternalDensity& f = spec.internal();
  std::vector<double> r(rho.size());
  double cbar = 0.0, wsum = 0.0;
  for (std::int64_t z = 0; z < rho.size(); ++z) {
    double u = rho.density(z);
    r[z] = f.fprime_clamped(u, threshold) + spec.potential_at(z) +
           duals.phi[z] / tau;
    cbar += rho.weight(z) * r[z];
    wsum += rho.weight(z);
  }
  cbar /= wsum;
  double worst = 0.0;
  for (std::int64_t z = 0; z < rho.size(); ++z)
    if (rho.density(z) > threshold)
      worst = std::max(worst, std::abs(r[z] - cbar));
  return worst;
}

}  // namespace jkoflow
