#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "jkoflow/lattice.hpp"
#include "jkoflow/measure.hpp"
#include "jkoflow/min_cost_flow.hpp"

namespace jkoflow {

// Sparse optimal coupling between two lattice measures. Entry masses are
// strictly positive; x indexes the first marginal, y the second.
struct TransportPlan {
  struct Entry {
    std::int64_t x;
    std::int64_t y;
    double mass;
  };
  std::vector<Entry> entries;
  DiscreteMeasure first;   // marginal of x
  DiscreteMeasure second;  // marginal of y

  double cost(double squared_weight = 1.0) const {
    long double s = 0.0L;
    for (const Entry& e : entries)
      s += static_cast<long double>(first.lattice().squared_distance(e.x, e.y)) *
           e.mass;
    return static_cast<double>(s) * squared_weight;
  }

  // max deviation of row/column sums from the marginals
  double marginal_residual() const {
    std::vector<double> row(first.size(), 0.0), col(second.size(), 0.0);
    for (const Entry& e : entries) {
      row[e.x] += e.mass;
      col[e.y] += e.mass;
    }
    double r = 0.0;
    for (std::int64_t z = 0; z < first.size(); ++z)
      r = std::max(r, std::abs(row[z] - first.weight(z)));
    for (std::int64_t z = 0; z < second.size(); ++z)
      r = std::max(r, std::abs(col[z] - second.weight(z)));
    return r;
  }
};

// Kantorovich potentials in the |x-y|^2/2 cost convention, defined on every
// lattice node (values off the solved support come from the c-transform).
// phi is gauged to min 0; `constant` carries the crowd mass-balance dual.
struct DualPotentials {
  std::vector<double> phi;
  std::vector<double> psi;
  double constant = 0.0;
  bool has_constant = false;
  double support_residual = 0.0;
  bool canonical = true;  // c-transform extension is one choice among duals
};

struct OtOptions {
  // displacement window: only pairs with |x-y| <= window enter the graph
  double window = std::numeric_limits<double>::infinity();
};

struct OtResult {
  double w2_squared = 0.0;
  TransportPlan plan;
  DualPotentials duals;
  bool window_widened = false;
};

namespace detail {

struct OtGraph {
  std::vector<std::int64_t> sources, sinks;       // lattice nodes
  std::vector<std::pair<int, int>> arc_ends;      // (source idx, sink idx)
};

}  // namespace detail

// Exact optimal transport with cost |x-y|^2 between measures on the same
// lattice. Costs are integers in lattice units, so optimality is exact; the
// reported w2_squared is in physical units.
inline OtResult solve_ot(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                         const OtOptions& opts = {}) {
  if (mu.lattice() != nu.lattice())
    throw std::invalid_argument("solve_ot: measures on different lattices");
  if (std::abs(mu.total_mass() - nu.total_mass()) > 1e-9)
    throw std::invalid_argument("solve_ot: marginal masses mismatch");
  const LatticeSpec& lat = mu.lattice();
  const double h2 = lat.spacing() * lat.spacing();

  std::vector<std::int64_t> sources = mu.support();
  std::vector<std::int64_t> sinks = nu.support();
  const int ns = static_cast<int>(sources.size());
  const int nt = static_cast<int>(sinks.size());
  if (ns == 0 || nt == 0) throw std::invalid_argument("solve_ot: empty measure");

  const double win2 = opts.window == std::numeric_limits<double>::infinity()
                          ? std::numeric_limits<double>::infinity()
                          : opts.window * opts.window / h2 * (1.0 + 1e-12);

  bool widened = false;
  for (int attempt = 0;; ++attempt) {
    bool windowed = attempt == 0 && std::isfinite(win2);
    NetworkSimplex mcf(ns + nt);
    for (int i = 0; i < ns; ++i) mcf.set_supply(i, mu.weight(sources[i]));
    for (int j = 0; j < nt; ++j) mcf.set_supply(ns + j, -nu.weight(sinks[j]));
    std::vector<std::pair<int, int>> ends;
    ends.reserve(static_cast<std::size_t>(ns) * nt);
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < nt; ++j) {
        std::int64_t c = lat.squared_lattice_distance(sources[i], sinks[j]);
        if (windowed && static_cast<double>(c) > win2) continue;
        mcf.add_arc(i, ns + j, c);
        ends.emplace_back(i, j);
      }

    auto status = mcf.solve();
    if (status != NetworkSimplex::Status::optimal) {
      if (windowed) {
        widened = true;
        continue;  // window cut the graph apart; retry unrestricted
      }
      throw std::runtime_error("solve_ot: infeasible transportation problem");
    }
    if (!mcf.rebase_potentials(0)) {
      if (windowed) {
        widened = true;
        continue;
      }
      throw std::runtime_error("solve_ot: disconnected residual graph");
    }

    OtResult out;
    out.window_widened = widened;
    out.w2_squared = mcf.total_cost() * h2;
    out.plan.first = mu;
    out.plan.second = nu;
    for (std::size_t a = 0; a < ends.size(); ++a) {
      double f = mcf.flow(static_cast<int>(a));
      if (f > 0.0)
        out.plan.entries.push_back(
            {sources[ends[a].first], sinks[ends[a].second], f});
    }

    // Halved potentials: phi + psi <= |x-y|^2 / 2, tight on the support.
    const std::int64_t M = lat.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> phi(M, nan), psi(M, nan);
    for (int i = 0; i < ns; ++i)
      phi[sources[i]] = static_cast<double>(mcf.potential(i)) * h2 * 0.5;
    for (int j = 0; j < nt; ++j)
      psi[sinks[j]] = -static_cast<double>(mcf.potential(ns + j)) * h2 * 0.5;

    // c-transform extension to zero-weight nodes.
    for (std::int64_t z = 0; z < M; ++z) {
      if (std::isnan(phi[z])) {
        double best = std::numeric_limits<double>::infinity();
        for (std::int64_t y : sinks)
          best = std::min(best, 0.5 * lat.squared_distance(z, y) - psi[y]);
        phi[z] = best;
      }
      if (std::isnan(psi[z])) {
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < ns; ++i) {
          double px = static_cast<double>(mcf.potential(i)) * h2 * 0.5;
          best = std::min(best, 0.5 * lat.squared_distance(sources[i], z) - px);
        }
        psi[z] = best;
      }
    }

    double gauge = *std::min_element(phi.begin(), phi.end());
    for (double& v : phi) v -= gauge;
    for (double& v : psi) v += gauge;

    double res = 0.0;
    for (const auto& e : out.plan.entries)
      res = std::max(res, std::abs(phi[e.x] + psi[e.y] -
                                   0.5 * lat.squared_distance(e.x, e.y)));
    out.duals.phi = std::move(phi);
    out.duals.psi = std::move(psi);
    out.duals.support_residual = res;
    return out;
  }
}

inline double w2(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  return std::sqrt(solve_ot(mu, nu).w2_squared);
}

struct DualityReport {
  double max_feasibility_violation = 0.0;  // (phi + psi) - c over weighted pairs
  double max_support_gap = 0.0;            // |phi + psi - c| on the plan support
  double strong_duality_gap = 0.0;         // |sum phi mu + sum psi nu - cost/2|
  double tolerance = 0.0;
  bool ok = false;
};

// Verifies the potentials against the plan: feasibility off the support,
// tightness on it, and the strong-duality identity in the half-cost scale.
inline DualityReport check_duality(const TransportPlan& plan,
                                   const DualPotentials& duals, double tol) {
  const LatticeSpec& lat = plan.first.lattice();
  DualityReport r;
  r.tolerance = tol;
  for (std::int64_t x = 0; x < plan.first.size(); ++x) {
    if (plan.first.weight(x) <= 0.0) continue;
    for (std::int64_t y = 0; y < plan.second.size(); ++y) {
      if (plan.second.weight(y) <= 0.0) continue;
      double slack = duals.phi[x] + duals.psi[y] - 0.5 * lat.squared_distance(x, y);
      r.max_feasibility_violation = std::max(r.max_feasibility_violation, slack);
    }
  }
  for (const auto& e : plan.entries) {
    double gap = std::abs(duals.phi[e.x] + duals.psi[e.y] -
                          0.5 * lat.squared_distance(e.x, e.y));
    r.max_support_gap = std::max(r.max_support_gap, gap);
  }
  long double dual_value = 0.0L;
  for (std::int64_t z = 0; z < plan.first.size(); ++z)
    dual_value += static_cast<long double>(duals.phi[z]) * plan.first.weight(z);
  for (std::int64_t z = 0; z < plan.second.size(); ++z)
    dual_value += static_cast<long double>(duals.psi[z]) * plan.second.weight(z);
  r.strong_duality_gap =
      std::abs(static_cast<double>(dual_value) - 0.5 * plan.cost());
  r.ok = r.max_feasibility_violation <= tol && r.max_support_gap <= tol &&
         r.strong_duality_gap <= tol;
  return r;
}

}  // namespace jkoflow
