#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "jkoflow/diagnostics.hpp"
#include "jkoflow/energy.hpp"
#include "jkoflow/lattice.hpp"
#include "jkoflow/measure.hpp"
#include "jkoflow/min_cost_flow.hpp"
#include "jkoflow/transport.hpp"

namespace jkoflow {

inline constexpr double kInfiniteTau = std::numeric_limits<double>::infinity();

struct JkoConfig {
  enum class Solver { frank_wolfe, crowd_lp, pure_potential };

  double tau = 0.1;          // kInfiniteTau drops the transport term
  int steps = 1;
  Solver solver = Solver::frank_wolfe;
  double gap_tolerance = 1e-8;
  int max_iterations = 100000;
  double entropy_clamp = 1e-10;
  double window = std::numeric_limits<double>::infinity();
  bool slope_check = true;
  double edi_epsilon = 0.1;
  int edi_quadrature = 4;
  bool keep_plans = false;

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("jko: tau must be positive");
    if (steps < 0) throw std::invalid_argument("jko: negative step count");
    if (!(gap_tolerance > 0.0))
      throw std::invalid_argument("jko: gap tolerance must be positive");
    if (max_iterations < 1)
      throw std::invalid_argument("jko: max_iterations must be >= 1");
  }
};

enum class StepCertificate { duality_gap, stationarity };

struct StepResult {
  DiscreteMeasure next;
  TransportPlan plan;
  DualPotentials duals;  // exact potentials; empty phi when tau is infinite
  double gap = 0.0;
  bool converged = true;
  StepCertificate certificate = StepCertificate::duality_gap;
  double objective = 0.0;           // true objective at `next`
  double objective_previous = 0.0;  // objective of the stay-put competitor
  double w2_squared = kNan;         // exact, against the previous iterate
  double mass_drift = 0.0;
  int iterations = 0;
  // congested steps only
  bool pressure_ready = false;
  std::vector<double> pressure;
  double complementarity_residual = kNan;
};

namespace detail {

// Dense per-column plan state for the step solver. Columns are the support
// atoms of the previous iterate, rows the candidate target nodes.
struct FwState {
  std::int64_t M = 0;
  std::vector<std::int64_t> sources;
  std::vector<double> source_mass;
  std::vector<double> gamma;  // [column * M + row]
  std::vector<double> rho;    // row sums

  double& at(std::size_t j, std::int64_t x) { return gamma[j * M + x]; }
  double at(std::size_t j, std::int64_t x) const { return gamma[j * M + x]; }

  void recompute_rho() {
    std::fill(rho.begin(), rho.end(), 0.0);
    for (std::size_t j = 0; j < sources.size(); ++j)
      for (std::int64_t x = 0; x < M; ++x) rho[x] += at(j, x);
  }
};

inline double clamped_fprime(const InternalDensity& f, double u, double clamp) {
  return f.fprime(std::max(u, clamp));
}

// f extended linearly below the clamp; the certified objective.
inline double clamped_f(const InternalDensity& f, double u, double clamp) {
  if (u >= clamp || clamp <= 0.0) return f.f(u);
  return f.f(clamp) + f.fprime(clamp) * (u - clamp);
}

}  // namespace detail

// One implicit step for a convex free energy: conditional-gradient descent
// over couplings with the second marginal pinned to the previous iterate.
// The linear oracle routes each source column to the node minimizing
// f'(u) + V + |x-y|^2/(2 tau); exact line search plus per-column pairwise
// swaps give fast tail convergence, and the returned duality gap certifies
// the result. Specs with an interaction kernel lose convexity, so the gap
// degrades to a stationarity residual there.
inline StepResult jko_step(const DiscreteMeasure& rho_k, const EnergySpec& spec,
                           double tau, const JkoConfig& cfg) {
  if (spec.is_crowd())
    throw std::invalid_argument("jko_step: use jko_step_crowd for congested energies");
  if (spec.lattice() != rho_k.lattice())
    throw std::invalid_argument("jko_step: lattice mismatch");
  if (spec.has_internal() && !spec.internal().convex())
    throw std::invalid_argument("jko_step: internal density must be convex");

  const LatticeSpec& lat = rho_k.lattice();
  const std::int64_t M = lat.size();
  const double cell = lat.cell_volume();
  const double inv2tau = std::isinf(tau) ? 0.0 : 0.5 / tau;
  const bool nonconvex = spec.has_interaction();
  const double clamp = cfg.entropy_clamp;

  detail::FwState st;
  st.M = M;
  st.sources = rho_k.support();
  const std::size_t S = st.sources.size();
  if (static_cast<double>(M) * static_cast<double>(S) > 4e6)
    throw std::invalid_argument("jko_step: instance too large for the dense solver");
  st.source_mass.resize(S);
  st.gamma.assign(S * M, 0.0);
  st.rho.assign(M, 0.0);
  for (std::size_t j = 0; j < S; ++j) {
    st.source_mass[j] = rho_k.weight(st.sources[j]);
    st.at(j, st.sources[j]) = st.source_mass[j];  // stay-put start
  }
  st.recompute_rho();

  const double win2 = std::isinf(cfg.window)
                          ? std::numeric_limits<double>::infinity()
                          : cfg.window * cfg.window * (1.0 + 1e-12);

  // transport part of the edge cost, physical units
  std::vector<double> tcost(S * M, 0.0);
  std::vector<std::vector<std::int64_t>> cands(S);
  for (std::size_t j = 0; j < S; ++j) {
    for (std::int64_t x = 0; x < M; ++x) {
      double d2 = lat.squared_distance(x, st.sources[j]);
      if (d2 > win2) continue;
      cands[j].push_back(x);
      tcost[j * M + x] = d2 * inv2tau;
    }
  }

  auto grad_at = [&](const std::vector<double>& rho, std::int64_t x,
                     const std::vector<double>& wconv) {
    double g = spec.has_internal()
                   ? detail::clamped_fprime(spec.internal(), rho[x] / cell, clamp)
                   : 0.0;
    g += spec.potential_at(x);
    if (nonconvex) g += wconv[x];
    return g;
  };

  auto interaction_field = [&](const std::vector<double>& rho) {
    std::vector<double> w;
    if (!nonconvex) return w;
    w.resize(M);
    auto meas = DiscreteMeasure::from_unnormalized(lat, rho);
    for (std::int64_t x = 0; x < M; ++x)
      w[x] = spec.interaction_gradient(meas, x);
    return w;
  };

  auto true_objective = [&](const std::vector<double>& rho,
                            const std::vector<double>& gamma) {
    double e = 0.0;
    if (spec.has_internal())
      for (std::int64_t x = 0; x < M; ++x)
        e += spec.internal().f(rho[x] / cell) * cell;
    for (std::int64_t x = 0; x < M; ++x) e += spec.potential_at(x) * rho[x];
    if (nonconvex) {
      auto meas = DiscreteMeasure::from_unnormalized(lat, rho);
      e += spec.interaction_energy(meas);
    }
    long double t = 0.0L;
    for (std::size_t j = 0; j < S; ++j)
      for (std::int64_t x : cands[j]) t += gamma[j * M + x] * tcost[j * M + x];
    return e + static_cast<double>(t);
  };

  const double objective_previous = true_objective(st.rho, st.gamma);

  double gap = std::numeric_limits<double>::infinity();
  bool converged = false;
  int it = 0;
  std::vector<std::int64_t> fw_target(S);
  std::vector<double> wconv;

  for (; it < cfg.max_iterations; ++it) {
    st.recompute_rho();
    wconv = interaction_field(st.rho);

    // linear oracle per column and the duality gap
    gap = 0.0;
    for (std::size_t j = 0; j < S; ++j) {
      double best = std::numeric_limits<double>::infinity();
      std::int64_t bx = -1;
      double lin = 0.0;
      for (std::int64_t x : cands[j]) {
        double e = grad_at(st.rho, x, wconv) + tcost[j * M + x];
        double g = st.at(j, x);
        if (g > 0.0) lin += g * e;
        if (e < best) {
          best = e;
          bx = x;
        }
      }
      fw_target[j] = bx;
      gap += lin - st.source_mass[j] * best;
    }
    if (gap <= cfg.gap_tolerance) {
      converged = true;
      break;
    }

    // global step toward the oracle vertex, exact line search on [0,1]
    {
      std::vector<double> srow(M, 0.0);
      for (std::size_t j = 0; j < S; ++j) srow[fw_target[j]] += st.source_mass[j];
      double tlin = 0.0;  // transport-cost change at t = 1
      for (std::size_t j = 0; j < S; ++j) {
        tlin += st.source_mass[j] * tcost[j * M + fw_target[j]];
        for (std::int64_t x : cands[j]) tlin -= st.at(j, x) * tcost[j * M + x];
      }
      auto dphi = [&](double t) {
        double d = tlin;
        std::vector<double> rt(M);
        for (std::int64_t x = 0; x < M; ++x)
          rt[x] = (1.0 - t) * st.rho[x] + t * srow[x];
        std::vector<double> wt = interaction_field(rt);
        for (std::int64_t x = 0; x < M; ++x) {
          double dr = srow[x] - st.rho[x];
          if (dr != 0.0) d += grad_at(rt, x, wt) * dr;
        }
        return d;
      };
      double t = 1.0;
      if (dphi(1.0) > 0.0) {
        double lo = 0.0, hi = 1.0;
        for (int b = 0; b < 60; ++b) {
          double mid = 0.5 * (lo + hi);
          (dphi(mid) <= 0.0 ? lo : hi) = mid;
        }
        t = lo;
      }
      if (t > 0.0) {
        for (std::size_t j = 0; j < S; ++j) {
          for (std::int64_t x : cands[j]) st.at(j, x) *= (1.0 - t);
          st.at(j, fw_target[j]) += t * st.source_mass[j];
        }
        for (std::int64_t x = 0; x < M; ++x)
          st.rho[x] = (1.0 - t) * st.rho[x] + t * srow[x];
      }
    }

    // pairwise sweep: per column, shift mass from the worst active node to
    // the best one with an exact 1D solve (skipped for non-convex specs)
    if (!nonconvex) {
      for (std::size_t j = 0; j < S; ++j) {
        double best = std::numeric_limits<double>::infinity(), worst = -best;
        std::int64_t bx = -1, ax = -1;
        for (std::int64_t x : cands[j]) {
          double e = grad_at(st.rho, x, wconv) + tcost[j * M + x];
          if (e < best) {
            best = e;
            bx = x;
          }
          if (st.at(j, x) > 0.0 && e > worst) {
            worst = e;
            ax = x;
          }
        }
        if (ax < 0 || bx < 0 || ax == bx || worst - best <= 0.0) continue;
        double cap = st.at(j, ax);
        auto dmove = [&](double m) {
          double gb = spec.has_internal()
                          ? detail::clamped_fprime(spec.internal(),
                                                   (st.rho[bx] + m) / cell, clamp)
                          : 0.0;
          double ga = spec.has_internal()
                          ? detail::clamped_fprime(spec.internal(),
                                                   (st.rho[ax] - m) / cell, clamp)
                          : 0.0;
          return (gb + spec.potential_at(bx) + tcost[j * M + bx]) -
                 (ga + spec.potential_at(ax) + tcost[j * M + ax]);
        };
        double m = cap;
        if (dmove(cap) > 0.0) {
          double lo = 0.0, hi = cap;
          for (int b = 0; b < 60; ++b) {
            double mid = 0.5 * (lo + hi);
            (dmove(mid) <= 0.0 ? lo : hi) = mid;
          }
          m = lo;
        }
        if (m <= 0.0) continue;
        st.at(j, ax) -= m;
        if (st.at(j, ax) < 0.0) st.at(j, ax) = 0.0;
        st.at(j, bx) += m;
        st.rho[ax] = std::max(0.0, st.rho[ax] - m);
        st.rho[bx] += m;
      }
    }
  }

  st.recompute_rho();

  StepResult res;
  res.gap = gap;
  res.converged = converged;
  res.certificate =
      nonconvex ? StepCertificate::stationarity : StepCertificate::duality_gap;
  res.iterations = it;
  res.objective_previous = objective_previous;

  // mass drift policy: renormalize small drift, abort on large
  double total = 0.0;
  for (double v : st.rho) total += v;
  res.mass_drift = std::abs(total - 1.0);
  if (res.mass_drift > kMassAbortTolerance)
    throw std::runtime_error("jko_step: mass drift beyond abort threshold");
  double fix = res.mass_drift > kMassTolerance ? 1.0 / total : 1.0;
  std::vector<double> w(st.rho);
  if (fix != 1.0)
    for (double& v : w) v *= fix;
  res.next = DiscreteMeasure::from_weights(lat, std::move(w));
  res.objective = true_objective(st.rho, st.gamma);

  res.plan.first = res.next;
  res.plan.second = rho_k;
  for (std::size_t j = 0; j < S; ++j)
    for (std::int64_t x : cands[j])
      if (st.at(j, x) > 0.0)
        res.plan.entries.push_back({x, st.sources[j], st.at(j, x) * fix});

  if (!std::isinf(tau)) {
    OtOptions oo;
    auto ot = solve_ot(res.next, rho_k, oo);
    res.duals = ot.duals;
    res.w2_squared = ot.w2_squared;
  }
  return res;
}

// One congested step: min sum (V(x) + |x-y|^2/(2 tau)) gamma_xy with the
// second marginal pinned to rho_k and per-node intake capped at h^d.
// Solved as a capacitated min-cost flow on integer-scaled costs; the node
// potentials yield the Kantorovich pair and the pressure.
inline StepResult jko_step_crowd(const DiscreteMeasure& rho_k,
                                 const EnergySpec& spec, double tau,
                                 const JkoConfig& cfg) {
  if (!spec.is_crowd())
    throw std::invalid_argument("jko_step_crowd: crowd spec required");
  if (spec.lattice() != rho_k.lattice())
    throw std::invalid_argument("jko_step_crowd: lattice mismatch");
  const LatticeSpec& lat = rho_k.lattice();
  const std::int64_t M = lat.size();
  const double cell = lat.cell_volume();
  if (rho_k.total_mass() > lat.volume() + 1e-12)
    throw std::invalid_argument("jko_step_crowd: infeasible capacity");
  const double inv2tau = std::isinf(tau) ? 0.0 : 0.5 / tau;

  std::vector<std::int64_t> sources = rho_k.support();
  const int S = static_cast<int>(sources.size());
  const int T = S + static_cast<int>(M);  // super sink

  const double win2 = std::isinf(cfg.window)
                          ? std::numeric_limits<double>::infinity()
                          : cfg.window * cfg.window * (1.0 + 1e-12);

  double cmax = 0.0;
  for (int j = 0; j < S; ++j)
    for (std::int64_t x = 0; x < M; ++x)
      cmax = std::max(cmax, std::abs(spec.potential_at(x)) +
                                lat.squared_distance(x, sources[j]) * inv2tau);
  double scale = std::exp2(36.0 - std::ceil(std::log2(cmax + 1.0)));

  for (int attempt = 0;; ++attempt) {
    bool windowed = attempt == 0 && std::isfinite(win2);
    NetworkSimplex mcf(S + static_cast<int>(M) + 1);
    for (int j = 0; j < S; ++j) mcf.set_supply(j, rho_k.weight(sources[j]));
    mcf.set_supply(T, -rho_k.total_mass());
    struct ArcRef {
      int j;
      std::int64_t x;
    };
    std::vector<ArcRef> refs;
    for (int j = 0; j < S; ++j)
      for (std::int64_t x = 0; x < M; ++x) {
        double d2 = lat.squared_distance(x, sources[j]);
        if (windowed && d2 > win2) continue;
        double c = spec.potential_at(x) + d2 * inv2tau;
        mcf.add_arc(j, S + static_cast<int>(x),
                    static_cast<std::int64_t>(std::llround(c * scale)));
        refs.push_back({j, x});
      }
    std::vector<int> cap_arc(M);
    for (std::int64_t x = 0; x < M; ++x)
      cap_arc[x] = mcf.add_arc(S + static_cast<int>(x), T, 0, cell);

    auto status = mcf.solve();
    if (status != NetworkSimplex::Status::optimal) {
      if (windowed) continue;
      throw std::runtime_error("jko_step_crowd: LP infeasible");
    }
    if (!mcf.rebase_potentials(0)) {
      if (windowed) continue;
      throw std::runtime_error("jko_step_crowd: disconnected residual graph");
    }

    StepResult res;
    res.gap = 0.0;
    res.converged = true;
    res.certificate = StepCertificate::duality_gap;
    res.iterations = 1;

    std::vector<double> w(M, 0.0);
    for (std::int64_t x = 0; x < M; ++x) w[x] = mcf.flow(cap_arc[x]);
    double total = 0.0;
    for (double v : w) total += v;
    res.mass_drift = std::abs(total - 1.0);
    if (res.mass_drift > kMassAbortTolerance)
      throw std::runtime_error("jko_step_crowd: mass drift beyond abort threshold");
    double fix = res.mass_drift > kMassTolerance ? 1.0 / total : 1.0;
    if (fix != 1.0)
      for (double& v : w) v *= fix;
    res.next = DiscreteMeasure::from_weights(lat, std::move(w));

    res.plan.first = res.next;
    res.plan.second = rho_k;
    for (std::size_t a = 0; a < refs.size(); ++a) {
      double f = mcf.flow(static_cast<int>(a));
      if (f > 0.0)
        res.plan.entries.push_back({refs[a].x, sources[refs[a].j], f * fix});
    }

    // Pressure straight from the capacity duals: positive only where the
    // intake arc sits at its bound.
    const double piT = static_cast<double>(mcf.potential(T));
    res.pressure.resize(M);
    res.complementarity_residual = 0.0;
    for (std::int64_t x = 0; x < M; ++x) {
      double pix = static_cast<double>(mcf.potential(S + static_cast<int>(x)));
      res.pressure[x] = std::max(0.0, (pix - piT) / scale);
      res.complementarity_residual =
          std::max(res.complementarity_residual,
                   res.pressure[x] * (1.0 - res.next.density(x)));
    }
    res.pressure_ready = true;

    if (!std::isinf(tau)) {
      // Kantorovich pair for the |x-y|^2/2 cost, gauged to min phi = 0 with
      // the gauge folded into the mass-balance constant.
      res.duals.phi.resize(M);
      res.duals.psi.assign(M, 0.0);
      for (std::int64_t x = 0; x < M; ++x) {
        double pix = static_cast<double>(mcf.potential(S + static_cast<int>(x)));
        res.duals.phi[x] =
            tau * ((piT - pix) / scale - spec.potential_at(x));
      }
      for (int j = 0; j < S; ++j) {
        double pij = static_cast<double>(mcf.potential(j));
        res.duals.psi[sources[j]] = tau * (pij - piT) / scale;
      }
      // psi off the support of rho_k via the c-transform
      for (std::int64_t y = 0; y < M; ++y) {
        if (rho_k.weight(y) > 0.0) continue;
        double best = std::numeric_limits<double>::infinity();
        for (std::int64_t x = 0; x < M; ++x)
          best = std::min(best,
                          0.5 * lat.squared_distance(x, y) - res.duals.phi[x]);
        res.duals.psi[y] = best;
      }
      double gauge = *std::min_element(res.duals.phi.begin(), res.duals.phi.end());
      for (double& v : res.duals.phi) v -= gauge;
      for (double& v : res.duals.psi) v += gauge;
      // p = (c - V - phi/tau)^+ stays fixed when phi drops by the gauge
      res.duals.constant = -gauge / tau;
      res.duals.has_constant = true;

      auto ot = solve_ot(res.next, rho_k);
      res.w2_squared = ot.w2_squared;
    } else {
      res.duals.has_constant = true;
      res.duals.constant = 0.0;
    }

    res.objective = eval_energy(spec, res.next);
    if (!std::isinf(tau)) res.objective += res.w2_squared * inv2tau;
    res.objective_previous = eval_energy(spec, rho_k);
    return res;
  }
}

// Pure-potential step: every source atom moves independently to the node
// minimizing V(x) + |x - y|^2/(2 tau). Exact; this is where the frozen
// regime h/tau > 2 Lip(V) shows up as a strict stay-put optimum.
inline StepResult jko_step_potential(const DiscreteMeasure& rho_k,
                                     const EnergySpec& spec, double tau,
                                     const JkoConfig& cfg) {
  if (spec.is_crowd() || spec.has_internal())
    throw std::invalid_argument("jko_step_potential: potential-only energies");
  if (!spec.has_potential())
    throw std::invalid_argument("jko_step_potential: potential required");
  const LatticeSpec& lat = rho_k.lattice();
  const std::int64_t M = lat.size();
  const double inv2tau = std::isinf(tau) ? 0.0 : 0.5 / tau;

  StepResult res;
  std::vector<double> w(M, 0.0);
  res.plan.second = rho_k;
  for (std::int64_t y = 0; y < M; ++y) {
    double mass = rho_k.weight(y);
    if (mass <= 0.0) continue;
    std::int64_t bx = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::int64_t x = 0; x < M; ++x) {
      double v = spec.potential_at(x) + lat.squared_distance(x, y) * inv2tau;
      if (v < best) {
        best = v;
        bx = x;
      }
    }
    w[bx] += mass;
    res.plan.entries.push_back({bx, y, mass});
  }
  res.next = DiscreteMeasure::from_weights(lat, std::move(w));
  res.plan.first = res.next;
  res.gap = 0.0;
  res.converged = true;
  res.iterations = 1;
  res.objective = eval_energy(spec, res.next);
  res.objective_previous = eval_energy(spec, rho_k);
  if (!std::isinf(tau)) {
    auto ot = solve_ot(res.next, rho_k);
    res.duals = ot.duals;
    res.w2_squared = ot.w2_squared;
    res.objective += res.w2_squared * inv2tau;
  }
  return res;
}

inline StepResult dispatch_step(const DiscreteMeasure& rho_k,
                                const EnergySpec& spec, double tau,
                                const JkoConfig& cfg) {
  switch (cfg.solver) {
    case JkoConfig::Solver::frank_wolfe:
      return jko_step(rho_k, spec, tau, cfg);
    case JkoConfig::Solver::crowd_lp:
      return jko_step_crowd(rho_k, spec, tau, cfg);
    case JkoConfig::Solver::pure_potential:
      return jko_step_potential(rho_k, spec, tau, cfg);
  }
  throw std::logic_error("jko: unknown solver");
}

// Minimizer of F^h(rho) + W2^2(rho, rho_k) / (2 tau s): the fractional step
// used by the dissipation ledger.
inline StepResult variational_interpolant(const DiscreteMeasure& rho_k,
                                          const EnergySpec& spec, double tau,
                                          double s, const JkoConfig& cfg) {
  if (!(s > 0.0 && s <= 1.0))
    throw std::invalid_argument("variational_interpolant: s in (0, 1]");
  double eff = std::isinf(tau) ? tau : tau * s;
  return dispatch_step(rho_k, spec, eff, cfg);
}

struct Trajectory {
  DiscreteMeasure initial;
  std::vector<DiscreteMeasure> iterates;  // includes the initial measure
  std::vector<StepDiagnostics> steps;
  std::vector<TransportPlan> plans;  // populated when config.keep_plans
  JkoConfig config;
  bool aborted = false;
  std::string error;

  const DiscreteMeasure& final_measure() const {
    return iterates.empty() ? initial : iterates.back();
  }
};

inline Trajectory run_trajectory(const DiscreteMeasure& rho0,
                                 const EnergySpec& spec, const JkoConfig& cfg) {
  cfg.validate();
  if (spec.is_crowd() != (cfg.solver == JkoConfig::Solver::crowd_lp))
    throw std::invalid_argument("jko: solver kind does not match the energy spec");
  if (spec.is_crowd() && !crowd_feasible(rho0))
    throw std::invalid_argument("jko: initial measure violates the capacity");
  if (spec.lattice() != rho0.lattice())
    throw std::invalid_argument("jko: lattice mismatch");

  const LatticeSpec& lat = rho0.lattice();
  const double h = lat.spacing();
  Trajectory traj;
  traj.initial = rho0;
  traj.config = cfg;
  traj.iterates.push_back(rho0);

  double dissipation = 0.0;
  DiscreteMeasure current = rho0;
  JkoConfig step_cfg = cfg;
  for (int k = 1; k <= cfg.steps; ++k) {
    StepResult res;
    try {
      res = dispatch_step(current, spec, cfg.tau, step_cfg);
      if (k == 1 && std::isfinite(step_cfg.window)) {
        // validate the displacement window against an unrestricted solve
        JkoConfig full = step_cfg;
        full.window = std::numeric_limits<double>::infinity();
        auto ref = dispatch_step(current, spec, cfg.tau, full);
        if (std::abs(ref.objective - res.objective) >
            10 * cfg.gap_tolerance + 1e-12) {
          step_cfg.window = full.window;  // widen for the rest of the run
          res = ref;
        }
      }
    } catch (const std::exception& e) {
      traj.aborted = true;
      traj.error = e.what();
      break;
    }

    StepDiagnostics d;
    d.k = k;
    d.t = k * cfg.tau;
    d.energy = eval_energy(spec, res.next);
    d.w2_squared = res.w2_squared;
    d.speed = std::isinf(cfg.tau) || std::isnan(res.w2_squared)
                  ? 0.0
                  : std::sqrt(res.w2_squared) / cfg.tau;
    d.gap = res.gap;
    d.mass_drift = res.mass_drift;
    if (!std::isinf(cfg.tau) && !std::isnan(res.w2_squared)) {
      dissipation += res.w2_squared / (2.0 * cfg.tau);
    }
    d.dissipation_partial = dissipation;

    if (spec.has_internal()) {
      d.fisher = fisher_internal(res.next, spec.internal());
      d.fisher_potential =
          spec.has_potential()
              ? fisher_with_potential(res.next, spec.internal(), spec.potential())
              : d.fisher;
      if (!std::isinf(cfg.tau) && !res.duals.phi.empty())
        d.optimality_residual = optimality_residual(spec, res.next, res.duals,
                                                    cfg.tau, cfg.entropy_clamp);
    }
    if (spec.is_crowd() && res.pressure_ready) {
      d.pressure = res.pressure;
      double eps = default_pressure_truncation(spec.lipschitz_v(), h);
      d.pressure_truncated = truncate_pressure(res.pressure, eps);
      d.complementarity_residual = res.complementarity_residual;
      d.fisher_crowd = fisher_crowd(lat, res.next.density_view(),
                                    d.pressure_truncated, spec.potential());
    }
    traj.steps.push_back(std::move(d));
    if (cfg.keep_plans) traj.plans.push_back(std::move(res.plan));
    traj.iterates.push_back(res.next);
    current = traj.iterates.back();
  }
  return traj;
}

// Ledger wrapper: quadrature interpolants are fractional-step solves from
// each stored iterate.
inline EdiLedger edi_report(const Trajectory& traj, const EnergySpec& spec,
                            double eps, int quadrature_points) {
  const int N = static_cast<int>(traj.steps.size());
  std::vector<double> w2(N);
  for (int k = 0; k < N; ++k) w2[k] = traj.steps[k].w2_squared;
  double e0 = eval_energy(spec, traj.initial);
  double eN = eval_energy(spec, traj.final_measure());
  const LatticeSpec& lat = traj.initial.lattice();
  auto fisher_at = [&](int k, double s) {
    auto res = variational_interpolant(traj.iterates[k], spec, traj.config.tau,
                                       s, traj.config);
    if (spec.is_crowd()) {
      double teps = default_pressure_truncation(spec.lipschitz_v(), lat.spacing());
      return fisher_crowd(lat, res.next.density_view(),
                          truncate_pressure(res.pressure, teps),
                          spec.potential());
    }
    if (!spec.has_internal()) {
      // potential-only energy: ell vanishes, only the drift term remains
      static const InternalDensity zero = InternalDensity::custom(
          [](double) { return 0.0; }, [](double) { return 0.0; },
          [](double) { return 0.0; });
      return fisher_with_potential(res.next, zero, spec.potential());
    }
    return spec.has_potential()
               ? fisher_with_potential(res.next, spec.internal(), spec.potential())
               : fisher_internal(res.next, spec.internal());
  };
  return edi_report_from_steps(e0, eN, w2, traj.config.tau, lat.dim(),
                               lat.spacing(), eps, quadrature_points, fisher_at);
}

// -------- pure-potential proximal toys --------

// argmin over lattice nodes of V(x) + |x - z|^2 / (2 tau); smaller flat
// index wins ties.
inline std::int64_t prox_grid(const LatticeSpec& lat,
                              const std::function<double(const Point&)>& V,
                              double tau, const Point& z) {
  std::int64_t best_node = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::int64_t x = 0; x < lat.size(); ++x) {
    Point p = lat.position(x);
    double d2 = 0.0;
    for (int k = 0; k < lat.dim(); ++k) d2 += (p[k] - z[k]) * (p[k] - z[k]);
    double v = V(p) + d2 / (2.0 * tau);
    if (v < best) {
      best = v;
      best_node = x;
    }
  }
  return best_node;
}

// Solves x = z - tau grad V(x) by fixed point; contraction needs
// tau <= (2 Lip(grad V))^{-1}.
inline Point prox_continuous(const std::function<Point(const Point&)>& grad_v,
                             double tau, const Point& z, double tol = 1e-14) {
  Point x = z;
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 1000; ++it) {
    Point g = grad_v(x);
    Point nx{z[0] - tau * g[0], z[1] - tau * g[1], z[2] - tau * g[2]};
    double d = 0.0;
    for (int k = 0; k < kMaxDim; ++k) d = std::max(d, std::abs(nx[k] - x[k]));
    x = nx;
    if (d <= tol) return x;
    if (d > 2.0 * prev && d > 1.0)
      throw std::runtime_error("prox_continuous: fixed point diverging (tau too large)");
    prev = d;
  }
  throw std::runtime_error("prox_continuous: fixed point did not converge");
}

struct ProxErrorRow {
  int k = 0;
  Point continuous_point{};
  Point grid_point{};
  double error = 0.0;
  double bound = 0.0;  // 3/Lip(grad V) e^{2 Lip(grad V) k tau} h/tau
};

// Advances both proximal sequences from the same start and tabulates the
// gap between them against the a-priori bound.
inline std::vector<ProxErrorRow> prox_error_study(
    const LatticeSpec& lat, const std::function<double(const Point&)>& V,
    const std::function<Point(const Point&)>& grad_v, double lip_grad,
    double tau, double T, const Point& x0) {
  if (lip_grad > 0.0 && tau > 0.5 / lip_grad + 1e-15)
    throw std::invalid_argument("prox_error_study: tau above the contraction bound");
  const int N = static_cast<int>(std::llround(T / tau));
  const double h = lat.spacing();
  std::vector<ProxErrorRow> rows;
  Point xc = x0;  // continuous sequence
  Point xg = x0;  // discrete sequence, on the lattice from k = 1 on
  for (int k = 0; k <= N; ++k) {
    ProxErrorRow r;
    r.k = k;
    r.continuous_point = xc;
    r.grid_point = xg;
    double e = 0.0;
    for (int kk = 0; kk < lat.dim(); ++kk)
      e += (xc[kk] - xg[kk]) * (xc[kk] - xg[kk]);
    r.error = std::sqrt(e);
    r.bound = lip_grad > 0.0 ? 3.0 / lip_grad *
                                   std::exp(2.0 * lip_grad * k * tau) * h / tau
                             : std::numeric_limits<double>::infinity();
    rows.push_back(r);
    if (k == N) break;
    xc = prox_continuous(grad_v, tau, xc);
    xg = lat.position(prox_grid(lat, V, tau, xg));
  }
  return rows;
}

}  // namespace jkoflow
