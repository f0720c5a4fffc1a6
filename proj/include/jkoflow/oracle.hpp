#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "jkoflow/energy.hpp"
#include "jkoflow/lattice.hpp"
#include "jkoflow/measure.hpp"

namespace jkoflow {

// Desk-scale transport instance with masses quantized to multiples of 1/q,
// small enough for exhaustive enumeration.
struct QuantizedInstance {
  LatticeSpec lattice;
  int q = 1;
  std::vector<std::pair<std::int64_t, int>> source_atoms;  // (node, count)
  std::vector<std::pair<std::int64_t, int>> target_atoms;
  std::vector<std::pair<std::int64_t, int>> capacities;  // optional, (node, count)

  void validate() const {
    if (q < 1 || q > 6) throw std::invalid_argument("oracle: q must be in 1..6");
    if (source_atoms.size() > 4 || target_atoms.size() > 4)
      throw std::invalid_argument("oracle: supports limited to 4 nodes");
    auto total = [](const std::vector<std::pair<std::int64_t, int>>& v) {
      int s = 0;
      for (auto& [node, c] : v) {
        if (c < 0) throw std::invalid_argument("oracle: negative atom count");
        s += c;
      }
      return s;
    };
    if (total(source_atoms) != q)
      throw std::invalid_argument("oracle: source atoms must sum to q");
    if (!target_atoms.empty() && total(target_atoms) != q)
      throw std::invalid_argument("oracle: target atoms must sum to q");
  }

  DiscreteMeasure source_measure() const {
    std::vector<double> w(lattice.size(), 0.0);
    for (auto& [node, c] : source_atoms) w[node] += double(c) / q;
    return DiscreteMeasure::from_weights(lattice, std::move(w));
  }
  DiscreteMeasure target_measure() const {
    std::vector<double> w(lattice.size(), 0.0);
    for (auto& [node, c] : target_atoms) w[node] += double(c) / q;
    return DiscreteMeasure::from_weights(lattice, std::move(w));
  }
};

struct BruteForceResult {
  std::int64_t cost_numerator = 0;  // sum of |x-y|^2/h^2 over atoms, exact
  double w2_squared = 0.0;          // cost_numerator * h^2 / q
  std::vector<std::pair<std::int64_t, std::int64_t>> assignment;  // per atom
};

// Exhaustive enumeration of atom assignments; the exact rational optimum.
inline BruteForceResult brute_force_ot(const QuantizedInstance& inst) {
  inst.validate();
  if (inst.target_atoms.empty())
    throw std::invalid_argument("brute_force_ot: balanced instance required");
  std::vector<std::int64_t> src, dst;
  for (auto& [node, c] : inst.source_atoms)
    for (int i = 0; i < c; ++i) src.push_back(node);
  for (auto& [node, c] : inst.target_atoms)
    for (int i = 0; i < c; ++i) dst.push_back(node);
  std::sort(dst.begin(), dst.end());

  const LatticeSpec& lat = inst.lattice;
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  std::vector<std::int64_t> best_perm;
  std::vector<std::int64_t> perm = dst;
  do {
    std::int64_t c = 0;
    for (std::size_t i = 0; i < src.size(); ++i)
      c += lat.squared_lattice_distance(src[i], perm[i]);
    if (c < best) {
      best = c;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  BruteForceResult out;
  out.cost_numerator = best;
  out.w2_squared =
      static_cast<double>(best) * lat.spacing() * lat.spacing() / inst.q;
  for (std::size_t i = 0; i < src.size(); ++i)
    out.assignment.emplace_back(src[i], best_perm[i]);
  return out;
}

// Capacitated variant with a caller-supplied arc cost; used to certify the
// congested step. Targets are free up to their capacity counts.
struct CapacitatedBruteResult {
  long double cost = 0.0L;
  std::vector<std::int64_t> target_of_atom;
  std::vector<double> first_marginal;  // weights per lattice node
};

inline CapacitatedBruteResult brute_force_capacitated(
    const QuantizedInstance& inst,
    const std::function<double(std::int64_t dst, std::int64_t src)>& arc_cost) {
  inst.validate();
  if (inst.capacities.empty())
    throw std::invalid_argument("oracle: capacitated instance needs capacities");
  std::vector<std::int64_t> src;
  for (auto& [node, c] : inst.source_atoms)
    for (int i = 0; i < c; ++i) src.push_back(node);

  std::vector<std::int64_t> nodes;
  std::vector<int> cap;
  for (auto& [node, c] : inst.capacities) {
    nodes.push_back(node);
    cap.push_back(c);
  }
  const std::size_t atoms = src.size();
  std::vector<int> pick(atoms, 0), best_pick;
  std::vector<int> used(nodes.size(), 0);
  long double best = std::numeric_limits<long double>::infinity();

  std::function<void(std::size_t, long double)> dfs = [&](std::size_t i,
                                                          long double acc) {
    if (acc >= best) return;
    if (i == atoms) {
      best = acc;
      best_pick = pick;
      return;
    }
    for (std::size_t t = 0; t < nodes.size(); ++t) {
      if (used[t] >= cap[t]) continue;
      used[t] += 1;
      pick[i] = static_cast<int>(t);
      dfs(i + 1, acc + arc_cost(nodes[t], src[i]) / inst.q);
      used[t] -= 1;
    }
  };
  dfs(0, 0.0L);
  if (!std::isfinite(static_cast<double>(best)))
    throw std::runtime_error("oracle: capacitated instance infeasible");

  CapacitatedBruteResult out;
  out.cost = best;
  out.first_marginal.assign(inst.lattice.size(), 0.0);
  for (std::size_t i = 0; i < atoms; ++i) {
    out.target_of_atom.push_back(nodes[best_pick[i]]);
    out.first_marginal[nodes[best_pick[i]]] += 1.0 / inst.q;
  }
  return out;
}

// Exact W2^2 between 1D measures via the monotone (quantile) coupling.
inline double monotone_w2_squared_1d(const DiscreteMeasure& mu,
                                     const DiscreteMeasure& nu) {
  if (mu.lattice() != nu.lattice() || mu.lattice().dim() != 1)
    throw std::invalid_argument("monotone coupling: 1D same-lattice only");
  const LatticeSpec& lat = mu.lattice();
  std::int64_t i = 0, j = 0;
  double ri = 0.0, rj = 0.0;  // remaining mass at the current nodes
  long double cost = 0.0L;
  const std::int64_t M = lat.size();
  while (true) {
    while (i < M && ri <= 0.0) ri = mu.weight(i++);
    while (j < M && rj <= 0.0) rj = nu.weight(j++);
    if (ri <= 0.0 || rj <= 0.0) break;
    double m = std::min(ri, rj);
    double d = lat.spacing() * static_cast<double>((i - 1) - (j - 1));
    cost += static_cast<long double>(m) * d * d;
    ri -= m;
    rj -= m;
  }
  return static_cast<double>(cost);
}

struct GridSearchResult {
  DiscreteMeasure argmin;
  double objective = 0.0;
};

// Exhaustive minimization of F^h(rho) + W2^2(rho, rho_k)/(2 tau) over the
// rational simplex grid on a lattice of at most 3 nodes (1D). An optional
// box around `center` restricts the sweep for zoomed re-searches.
inline GridSearchResult grid_search_jko(
    const DiscreteMeasure& rho_k, const EnergySpec& spec, double tau, int q,
    const std::vector<double>& center = {}, double radius = 1.0) {
  const LatticeSpec& lat = rho_k.lattice();
  if (lat != spec.lattice())
    throw std::invalid_argument("grid_search: lattice mismatch");
  if (lat.dim() != 1 || lat.size() > 3)
    throw std::invalid_argument("grid_search: <= 3 nodes on a 1D lattice");
  const std::int64_t M = lat.size();
  if ((M == 3 && q > 200) || (M <= 2 && q > 2000))
    throw std::invalid_argument("grid_search: resolution limit exceeded");
  if (!center.empty() && static_cast<std::int64_t>(center.size()) != M)
    throw std::invalid_argument("grid_search: bad center");

  const double inv2tau = std::isinf(tau) ? 0.0 : 0.5 / tau;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_w;

  auto consider = [&](const std::vector<double>& w) {
    auto rho = DiscreteMeasure::from_unnormalized(lat, w);
    double obj = eval_energy(spec, rho);
    if (inv2tau > 0.0) obj += inv2tau * monotone_w2_squared_1d(rho, rho_k);
    if (obj < best) {
      best = obj;
      best_w = rho.weights();
    }
  };

  auto lo = [&](std::int64_t z) {
    return center.empty() ? 0.0 : std::max(0.0, center[z] - radius);
  };
  auto hi = [&](std::int64_t z) {
    return center.empty() ? 1.0 : std::min(1.0, center[z] + radius);
  };

  const double step0 = (hi(0) - lo(0)) / q;
  if (M == 1) {
    consider({1.0});
  } else if (M == 2) {
    for (int i = 0; i <= q; ++i) {
      double w0 = lo(0) + i * step0;
      double w1 = 1.0 - w0;
      if (w1 < -1e-15 || w1 < lo(1) - 1e-12 || w1 > hi(1) + 1e-12) continue;
      consider({w0, std::max(0.0, w1)});
    }
  } else {
    const double step1 = (hi(1) - lo(1)) / q;
    for (int i = 0; i <= q; ++i) {
      double w0 = lo(0) + i * step0;
      for (int j = 0; j <= q; ++j) {
        double w1 = lo(1) + j * step1;
        double w2 = 1.0 - w0 - w1;
        if (w2 < -1e-15 || w2 < lo(2) - 1e-12 || w2 > hi(2) + 1e-12) continue;
        consider({w0, w1, std::max(0.0, w2)});
      }
    }
  }
  if (best_w.empty()) throw std::runtime_error("grid_search: empty sweep");
  return GridSearchResult{DiscreteMeasure::from_weights(lat, best_w), best};
}

enum class Fd1dKind { fokker_planck, porous_media, advection };

struct Fd1dOptions {
  int cells = 512;
  double time_step = 1e-4;
  double newton_tolerance = 1e-13;
  int newton_max_iterations = 60;
};

// Implicit-Euler finite differences for du/dt = d_xx L(u) + d_x (u V'),
// no-flux boundary, conservative flux form on a cell-centered 1D mesh.
// Independent of the transport solver chain; serves as the PDE reference.
class FdReference1d {
 public:
  FdReference1d(Fd1dKind kind, double exponent, double box_origin,
                double box_length, const std::function<double(double)>& V,
                Fd1dOptions opts = {})
      : kind_(kind), m_(exponent), opts_(opts), origin_(box_origin),
        length_(box_length) {
    if (opts_.cells < 2) throw std::invalid_argument("fd: need >= 2 cells");
    if (kind == Fd1dKind::porous_media && !(m_ > 1.0))
      throw std::invalid_argument("fd: porous media needs exponent > 1");
    dx_ = length_ / opts_.cells;
    v_.resize(opts_.cells);
    for (int i = 0; i < opts_.cells; ++i) v_[i] = V(center(i));
  }

  double center(int i) const { return origin_ + (i + 0.5) * dx_; }
  int cells() const { return opts_.cells; }
  double dx() const { return dx_; }

  std::vector<double> initial_from(const std::function<double(double)>& u0) const {
    std::vector<double> u(opts_.cells);
    double mass = 0.0;
    for (int i = 0; i < opts_.cells; ++i) {
      u[i] = std::max(0.0, u0(center(i)));
      mass += u[i] * dx_;
    }
    if (mass <= 0.0) throw std::invalid_argument("fd: zero initial data");
    for (double& x : u) x /= mass;
    return u;
  }

  // Advances to time T; returns the density profile.
  std::vector<double> evolve(std::vector<double> u, double T) const {
    int steps = static_cast<int>(std::ceil(T / opts_.time_step - 1e-12));
    double dt = steps > 0 ? T / steps : 0.0;
    for (int s = 0; s < steps; ++s) u = implicit_step(u, dt);
    return u;
  }

  double mass(const std::vector<double>& u) const {
    double s = 0.0;
    for (double x : u) s += x * dx_;
    return s;
  }

  // || (u - step(u)) / dt ||_inf, a fixed-point residual at steady state
  double steady_state_residual(const std::vector<double>& u) const {
    auto next = implicit_step(u, opts_.time_step);
    double r = 0.0;
    for (int i = 0; i < opts_.cells; ++i)
      r = std::max(r, std::abs(next[i] - u[i]) / opts_.time_step);
    return r;
  }

  std::vector<double> implicit_step(const std::vector<double>& un,
                                    double dt) const {
    const int n = opts_.cells;
    std::vector<double> u = un;  // Newton start
    std::vector<double> res(n), dl(n), dd(n), du(n);
    for (int it = 0; it < opts_.newton_max_iterations; ++it) {
      residual(un, u, dt, res, dl, dd, du);
      double rn = 0.0;
      for (double r : res) rn = std::max(rn, std::abs(r));
      if (rn <= opts_.newton_tolerance) return u;
      thomas(dl, dd, du, res);
      for (int i = 0; i < n; ++i) {
        u[i] -= res[i];
        // nonlinear diffusion needs u >= 0; the linear kinds may undershoot
        // slightly without breaking the solve
        if (kind_ == Fd1dKind::porous_media && u[i] < 0.0) u[i] = 0.0;
      }
    }
    throw std::runtime_error("fd: Newton failed to converge");
  }

 private:
  double L(double s) const {
    switch (kind_) {
      case Fd1dKind::fokker_planck: return s;
      case Fd1dKind::porous_media: return std::pow(s, m_);
      case Fd1dKind::advection: return 0.0;
    }
    return 0.0;
  }
  double Lp(double s) const {
    switch (kind_) {
      case Fd1dKind::fokker_planck: return 1.0;
      case Fd1dKind::porous_media: return m_ * std::pow(std::max(s, 0.0), m_ - 1.0);
      case Fd1dKind::advection: return 0.0;
    }
    return 0.0;
  }

  // R_i = u_i - un_i + dt/dx (F_{i+1/2} - F_{i-1/2}),
  // F_{i+1/2} = -(L(u_{i+1}) - L(u_i))/dx - (u_i + u_{i+1})/2 * dV_{i+1/2}
  void residual(const std::vector<double>& un, const std::vector<double>& u,
                double dt, std::vector<double>& res, std::vector<double>& dl,
                std::vector<double>& dd, std::vector<double>& du) const {
    const int n = opts_.cells;
    auto flux = [&](int i) {  // F_{i+1/2} for i in [0, n-2]
      double dv = (v_[i + 1] - v_[i]) / dx_;
      return -(L(u[i + 1]) - L(u[i])) / dx_ - 0.5 * (u[i] + u[i + 1]) * dv;
    };
    auto dflux_l = [&](int i) {  // dF_{i+1/2}/du_i
      double dv = (v_[i + 1] - v_[i]) / dx_;
      return Lp(u[i]) / dx_ - 0.5 * dv;
    };
    auto dflux_r = [&](int i) {  // dF_{i+1/2}/du_{i+1}
      double dv = (v_[i + 1] - v_[i]) / dx_;
      return -Lp(u[i + 1]) / dx_ - 0.5 * dv;
    };
    const double c = dt / dx_;
    for (int i = 0; i < n; ++i) {
      double fr = i < n - 1 ? flux(i) : 0.0;
      double fl = i > 0 ? flux(i - 1) : 0.0;
      res[i] = u[i] - un[i] + c * (fr - fl);
      dd[i] = 1.0 + c * ((i < n - 1 ? dflux_l(i) : 0.0) -
                         (i > 0 ? dflux_r(i - 1) : 0.0));
      du[i] = i < n - 1 ? c * dflux_r(i) : 0.0;
      dl[i] = i > 0 ? -c * dflux_l(i - 1) : 0.0;
    }
  }

  // Tridiagonal solve, rhs overwritten with the solution.
  static void thomas(const std::vector<double>& dl, std::vector<double> dd,
                     const std::vector<double>& du, std::vector<double>& rhs) {
    const int n = static_cast<int>(dd.size());
    for (int i = 1; i < n; ++i) {
      double w = dl[i] / dd[i - 1];
      dd[i] -= w * du[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= dd[n - 1];
    for (int i = n - 2; i >= 0; --i)
      rhs[i] = (rhs[i] - du[i] * rhs[i + 1]) / dd[i];
  }

  Fd1dKind kind_;
  double m_;
  Fd1dOptions opts_;
  double origin_, length_, dx_;
  std::vector<double> v_;
};

// Exact minimizer of sum V rho under u <= 1: fill cells in increasing V
// order at full density, fractional last cell, ties to the smaller index.
inline DiscreteMeasure greedy_fill_minimizer(const std::vector<double>& V,
                                             const LatticeSpec& lattice,
                                             double mass = 1.0) {
  if (static_cast<std::int64_t>(V.size()) != lattice.size())
    throw std::invalid_argument("greedy_fill: potential size mismatch");
  if (mass > lattice.volume() + 1e-12)
    throw std::invalid_argument("greedy_fill: mass exceeds capacity");
  if (std::abs(mass - 1.0) > 1e-12)
    throw std::invalid_argument("greedy_fill: only probability mass supported");
  std::vector<std::int64_t> order(lattice.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int64_t a, std::int64_t b) { return V[a] < V[b]; });
  std::vector<double> w(lattice.size(), 0.0);
  double cell = lattice.cell_volume();
  double left = mass;
  std::int64_t last = -1;
  for (std::int64_t z : order) {
    if (left <= 0.0) break;
    double take = std::min(left, cell);
    w[z] = take;
    left -= take;
    last = z;
  }
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (last >= 0) w[last] += mass - total;  // float dust only
  return DiscreteMeasure::from_weights(lattice, std::move(w));
}

}  // namespace jkoflow
