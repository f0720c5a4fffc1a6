#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "jkoflow/lattice.hpp"
#include "jkoflow/measure.hpp"

namespace jkoflow {

inline constexpr double kCrowdSlack = 1e-12;

// Internal energy density f together with its derivative and the transform
// ell, ell'(s) = sqrt(s) f''(s). Entropy and power-law kinds carry closed
// forms; custom kinds supply callables plus declared structure flags.
class InternalDensity {
 public:
  enum class Kind { entropy, power_law, custom };

  static InternalDensity entropy() {
    InternalDensity d;
    d.kind_ = Kind::entropy;
    return d;
  }

  static InternalDensity power_law(double m) {
    if (!(m > 1.0))
      throw std::invalid_argument("power_law: exponent must be > 1");
    InternalDensity d;
    d.kind_ = Kind::power_law;
    d.m_ = m;
    return d;
  }

  struct CustomFlags {
    bool convex = true;
    bool superlinear = true;
    bool fprime_strictly_increasing = true;
    // declared growth metadata, f''(s) >= growth_constant * s^{-growth_exponent}
    // for s >= growth_threshold; carried for documentation, never enforced
    // numerically (no checkable surrogate at fixed h)
    double growth_constant = 0.0;
    double growth_exponent = 0.0;
    double growth_threshold = 1.0;
  };

  static InternalDensity custom(std::function<double(double)> f,
                                std::function<double(double)> fprime,
                                std::function<double(double)> ell,
                                CustomFlags flags) {
    InternalDensity d;
    d.kind_ = Kind::custom;
    d.f_ = std::move(f);
    d.fprime_ = std::move(fprime);
    d.ell_ = std::move(ell);
    d.flags_ = flags;
    d.spot_check_ell();
    return d;
  }

  static InternalDensity custom(std::function<double(double)> f,
                                std::function<double(double)> fprime,
                                std::function<double(double)> ell) {
    return custom(std::move(f), std::move(fprime), std::move(ell), CustomFlags());
  }

  Kind kind() const { return kind_; }
  double exponent() const { return m_; }
  bool convex() const { return kind_ == Kind::custom ? flags_.convex : true; }
  bool superlinear() const {
    return kind_ == Kind::custom ? flags_.superlinear : true;
  }
  bool fprime_strictly_increasing() const {
    return kind_ == Kind::custom ? flags_.fprime_strictly_increasing : true;
  }

  double f(double s) const {
    switch (kind_) {
      case Kind::entropy:
        return s > 0.0 ? s * std::log(s) : 0.0;  // f(0) = 0 by continuity
      case Kind::power_law:
        return std::pow(s, m_) / (m_ - 1.0);
      case Kind::custom:
        return f_(s);
    }
    return 0.0;
  }

  // May be -inf at s = 0 (entropy); callers clamp where needed.
  double fprime(double s) const {
    switch (kind_) {
      case Kind::entropy:
        return s > 0.0 ? std::log(s) + 1.0
                       : -std::numeric_limits<double>::infinity();
      case Kind::power_law:
        return m_ * std::pow(s, m_ - 1.0) / (m_ - 1.0);
      case Kind::custom:
        return fprime_(s);
    }
    return 0.0;
  }

  double fprime_clamped(double s, double clamp) const {
    return fprime(std::max(s, clamp));
  }

  double ell(double s) const {
    if (s < 0.0) throw std::domain_error("ell: negative density");
    switch (kind_) {
      case Kind::entropy:
        return 2.0 * std::sqrt(s);
      case Kind::power_law:
        return m_ * std::pow(s, m_ - 0.5) / (m_ - 0.5);
      case Kind::custom:
        return ell_(s);
    }
    return 0.0;
  }

 private:
  // Finite-difference consistency check ell'(s) = sqrt(s) f''(s) for custom
  // kinds, sampled away from zero.
  void spot_check_ell() const {
    const double step = 1e-6;
    for (double s : {0.25, 1.0, 4.0}) {
      double dell = (ell_(s + step) - ell_(s - step)) / (2.0 * step);
      double fpp = (fprime_(s + step) - fprime_(s - step)) / (2.0 * step);
      double want = std::sqrt(s) * fpp;
      double scale = std::max({1.0, std::abs(dell), std::abs(want)});
      if (std::abs(dell - want) > 1e-4 * scale)
        throw std::invalid_argument(
            "custom internal density: ell inconsistent with f'' at s=" +
            std::to_string(s));
    }
  }

  Kind kind_ = Kind::entropy;
  double m_ = 0.0;
  std::function<double(double)> f_, fprime_, ell_;
  CustomFlags flags_;
};

// Radial interaction kernel given as a table over distances, linearly
// interpolated. W(0) must be finite (first sample at r = 0).
class RadialKernel {
 public:
  RadialKernel(std::vector<double> radii, std::vector<double> values)
      : radii_(std::move(radii)), values_(std::move(values)) {
    if (radii_.size() != values_.size() || radii_.size() < 2)
      throw std::invalid_argument("radial kernel: need >= 2 samples");
    if (radii_.front() != 0.0)
      throw std::invalid_argument("radial kernel: first sample must be r = 0");
    for (std::size_t i = 1; i < radii_.size(); ++i)
      if (radii_[i] <= radii_[i - 1])
        throw std::invalid_argument("radial kernel: radii must increase");
    for (double v : values_)
      if (!std::isfinite(v))
        throw std::invalid_argument("radial kernel: values must be finite");
  }

  double max_radius() const { return radii_.back(); }

  double operator()(double r) const {
    if (r < 0.0 || r > radii_.back() * (1.0 + 1e-12))
      throw std::out_of_range("radial kernel: distance outside table");
    r = std::min(r, radii_.back());
    auto it = std::upper_bound(radii_.begin(), radii_.end(), r);
    if (it == radii_.begin()) return values_.front();
    std::size_t hi = static_cast<std::size_t>(it - radii_.begin());
    if (hi >= radii_.size()) return values_.back();
    std::size_t lo = hi - 1;
    double t = (r - radii_[lo]) / (radii_[hi] - radii_[lo]);
    return values_[lo] + t * (values_[hi] - values_[lo]);
  }

 private:
  std::vector<double> radii_, values_;
};

// Tagged description of the driving energy F^h: optional internal density,
// optional per-node potential with its Lipschitz constant, optional
// interaction kernel, or the crowd capacity constraint u <= 1.
class EnergySpec {
 public:
  static EnergySpec free_energy(const LatticeSpec& lattice,
                                std::optional<InternalDensity> internal,
                                std::vector<double> potential = {},
                                double lipschitz_v = 0.0) {
    EnergySpec s;
    s.lattice_ = lattice;
    s.internal_ = std::move(internal);
    s.potential_ = std::move(potential);
    s.lip_v_ = lipschitz_v;
    s.validate();
    return s;
  }

  static EnergySpec crowd(const LatticeSpec& lattice,
                          std::vector<double> potential, double lipschitz_v) {
    EnergySpec s;
    s.lattice_ = lattice;
    s.crowd_ = true;
    s.potential_ = std::move(potential);
    s.lip_v_ = lipschitz_v;
    s.validate();
    return s;
  }

  EnergySpec with_interaction(const RadialKernel& kernel) const {
    if (crowd_)
      throw std::invalid_argument("energy: crowd spec takes no interaction kernel");
    EnergySpec s = *this;
    s.interaction_ = kernel;
    s.build_interaction_matrix();
    return s;
  }

  const LatticeSpec& lattice() const { return lattice_; }
  bool is_crowd() const { return crowd_; }
  bool has_internal() const { return internal_.has_value(); }
  const InternalDensity& internal() const { return *internal_; }
  bool has_potential() const { return !potential_.empty(); }
  const std::vector<double>& potential() const { return potential_; }
  double potential_at(std::int64_t z) const {
    return potential_.empty() ? 0.0 : potential_[z];
  }
  double lipschitz_v() const { return lip_v_; }
  bool has_interaction() const { return interaction_.has_value(); }

  // 2 sum_zeta W(z - zeta) rho_zeta
  double interaction_gradient(const DiscreteMeasure& rho, std::int64_t z) const {
    const std::int64_t M = lattice_.size();
    double s = 0.0;
    for (std::int64_t zeta = 0; zeta < M; ++zeta)
      s += w_matrix_[z * M + zeta] * rho.weight(zeta);
    return 2.0 * s;
  }

  double interaction_energy(const DiscreteMeasure& rho) const {
    const std::int64_t M = lattice_.size();
    double s = 0.0;
    for (std::int64_t x = 0; x < M; ++x) {
      if (rho.weight(x) == 0.0) continue;
      double row = 0.0;
      for (std::int64_t y = 0; y < M; ++y)
        row += w_matrix_[x * M + y] * rho.weight(y);
      s += rho.weight(x) * row;
    }
    return s;
  }

 private:
  void validate() {
    if (lattice_.size() <= 0)
      throw std::invalid_argument("energy: lattice required");
    if (crowd_ && internal_.has_value())
      throw std::invalid_argument("energy: crowd constraint excludes an internal term");
    if (!potential_.empty()) {
      if (static_cast<std::int64_t>(potential_.size()) != lattice_.size())
        throw std::invalid_argument("energy: potential size != node count");
      // Lip(V) is user input; grid differences only lower-bound it, so the
      // declared value must dominate them.
      double grid = 0.0;
      lattice_.for_each_pair([&](std::int64_t z, std::int64_t zeta, int, int) {
        grid = std::max(grid, std::abs(potential_[z] - potential_[zeta]) /
                                  lattice_.spacing());
      });
      if (lip_v_ < grid - 1e-12 * std::max(1.0, grid))
        throw std::invalid_argument(
            "energy: declared Lipschitz constant below grid differences");
    }
  }

  void build_interaction_matrix() {
    const std::int64_t M = lattice_.size();
    double diam = 0.0;
    for (int k = 0; k < lattice_.dim(); ++k) {
      double side = lattice_.extent(k) * lattice_.spacing();
      diam += side * side;
    }
    diam = std::sqrt(diam);
    if (interaction_->max_radius() < diam - 1e-12)
      throw std::invalid_argument("energy: interaction table does not cover the box");
    w_matrix_.assign(M * M, 0.0);
    for (std::int64_t x = 0; x < M; ++x)
      for (std::int64_t y = 0; y <= x; ++y) {
        double w = (*interaction_)(std::sqrt(lattice_.squared_distance(x, y)));
        w_matrix_[x * M + y] = w;
        w_matrix_[y * M + x] = w;
      }
  }

  LatticeSpec lattice_;
  std::optional<InternalDensity> internal_;
  std::vector<double> potential_;
  double lip_v_ = 0.0;
  bool crowd_ = false;
  std::optional<RadialKernel> interaction_;
  std::vector<double> w_matrix_;
};

inline bool crowd_feasible(const DiscreteMeasure& rho) {
  return linf_density(rho) <= 1.0 + kCrowdSlack;
}

// F^h(rho) = sum f(rho_z/h^d) h^d + sum V(z) rho_z (+ interaction double sum).
// Crowd specs return +inf outside the capacity constraint.
inline double eval_energy(const EnergySpec& spec, const DiscreteMeasure& rho) {
  if (spec.lattice() != rho.lattice())
    throw std::invalid_argument("eval_energy: lattice mismatch");
  if (spec.is_crowd() && !crowd_feasible(rho))
    return std::numeric_limits<double>::infinity();
  double e = 0.0;
  const double cell = spec.lattice().cell_volume();
  if (spec.has_internal()) {
    const InternalDensity& f = spec.internal();
    for (std::int64_t z = 0; z < rho.size(); ++z)
      e += f.f(rho.weight(z) / cell) * cell;
  }
  if (spec.has_potential())
    for (std::int64_t z = 0; z < rho.size(); ++z)
      e += spec.potential_at(z) * rho.weight(z);
  if (spec.has_interaction()) e += spec.interaction_energy(rho);
  return e;
}

// dF^h/drho_z = f'(u_z) + V(z) (+ 2 sum W(z - .) rho). With clamp = 0 the
// call fails where f'(u) is not finite (entropy at vanishing cells).
inline std::vector<double> first_variation(const EnergySpec& spec,
                                           const DiscreteMeasure& rho,
                                           double clamp = 0.0) {
  if (spec.lattice() != rho.lattice())
    throw std::invalid_argument("first_variation: lattice mismatch");
  if (spec.is_crowd())
    throw std::invalid_argument("first_variation: crowd energy is not smooth");
  const double cell = spec.lattice().cell_volume();
  std::vector<double> g(rho.size(), 0.0);
  if (spec.has_internal()) {
    const InternalDensity& f = spec.internal();
    for (std::int64_t z = 0; z < rho.size(); ++z) {
      double u = rho.weight(z) / cell;
      double v = clamp > 0.0 ? f.fprime_clamped(u, clamp) : f.fprime(u);
      if (!std::isfinite(v))
        throw std::domain_error("first_variation: f' not finite at vanishing density"
                                " (enable clamping)");
      g[z] = v;
    }
  }
  if (spec.has_potential())
    for (std::int64_t z = 0; z < rho.size(); ++z) g[z] += spec.potential_at(z);
  if (spec.has_interaction())
    for (std::int64_t z = 0; z < rho.size(); ++z)
      g[z] += spec.interaction_gradient(rho, z);
  return g;
}

inline double ell(const InternalDensity& kind, double s) { return kind.ell(s); }

}  // namespace jkoflow
