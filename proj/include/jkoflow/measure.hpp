#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "jkoflow/lattice.hpp"

namespace jkoflow {

inline constexpr double kMassTolerance = 1e-12;
inline constexpr double kMassAbortTolerance = 1e-6;

// Piecewise-constant density field on the cells of a lattice.
struct PiecewiseConstantField {
  LatticeSpec lattice;
  std::vector<double> values;  // one density value per cell

  double integral() const {
    double cell = lattice.cell_volume();
    double s = 0.0;
    for (double v : values) s += v * cell;
    return s;
  }
};

// Probability measure supported on lattice nodes. Weights are nonnegative
// and sum to 1 within kMassTolerance. Value type: copy freely, snapshots are
// safe to share read-only.
class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;

  static DiscreteMeasure from_weights(const LatticeSpec& lattice,
                                      std::vector<double> weights) {
    DiscreteMeasure m(lattice, std::move(weights));
    m.validate();
    return m;
  }

  // Renormalizes to total mass 1; rejects all-zero and negative input.
  static DiscreteMeasure from_unnormalized(const LatticeSpec& lattice,
                                           std::vector<double> weights) {
    DiscreteMeasure m(lattice, std::move(weights));
    for (double w : m.w_)
      if (w < 0.0 || !std::isfinite(w))
        throw std::invalid_argument("measure: weights must be finite and >= 0");
    double s = m.sum();
    if (s <= 0.0) throw std::invalid_argument("measure: all-zero weights");
    for (double& w : m.w_) w /= s;
    return m;
  }

  static DiscreteMeasure uniform(const LatticeSpec& lattice) {
    return from_weights(lattice,
                        std::vector<double>(lattice.size(),
                                            1.0 / static_cast<double>(lattice.size())));
  }

  static DiscreteMeasure dirac(const LatticeSpec& lattice, std::int64_t node) {
    std::vector<double> w(lattice.size(), 0.0);
    w.at(node) = 1.0;
    return from_weights(lattice, std::move(w));
  }

  const LatticeSpec& lattice() const { return lattice_; }
  const std::vector<double>& weights() const { return w_; }
  double weight(std::int64_t z) const { return w_[z]; }
  std::int64_t size() const { return static_cast<std::int64_t>(w_.size()); }

  double total_mass() const { return sum(); }

  // Density view u_z = rho_z / h^d.
  double density(std::int64_t z) const { return w_[z] / lattice_.cell_volume(); }
  std::vector<double> density_view() const {
    std::vector<double> u(w_);
    double inv = 1.0 / lattice_.cell_volume();
    for (double& v : u) v *= inv;
    return u;
  }

  std::vector<std::int64_t> support() const {
    std::vector<std::int64_t> s;
    for (std::int64_t z = 0; z < size(); ++z)
      if (w_[z] > 0.0) s.push_back(z);
    return s;
  }

  // Returns the drift |sum - 1| before renormalizing. Throws once the drift
  // is large enough to indicate a solver bug.
  double renormalize() {
    double s = sum();
    double drift = std::abs(s - 1.0);
    if (drift > kMassAbortTolerance)
      throw std::runtime_error("measure: mass drift " + std::to_string(drift) +
                               " exceeds abort threshold");
    if (drift > kMassTolerance)
      for (double& w : w_) w /= s;
    return drift;
  }

  void validate() const {
    if (static_cast<std::int64_t>(w_.size()) != lattice_.size())
      throw std::invalid_argument("measure: weight count != node count");
    for (double w : w_)
      if (w < 0.0 || !std::isfinite(w))
        throw std::invalid_argument("measure: weights must be finite and >= 0");
    if (std::abs(sum() - 1.0) > kMassTolerance)
      throw std::invalid_argument("measure: total mass differs from 1 beyond tolerance");
  }

  bool operator==(const DiscreteMeasure& o) const {
    return lattice_ == o.lattice_ && w_ == o.w_;
  }

 private:
  DiscreteMeasure(const LatticeSpec& lattice, std::vector<double> weights)
      : lattice_(lattice), w_(std::move(weights)) {}

  double sum() const { return std::accumulate(w_.begin(), w_.end(), 0.0); }

  LatticeSpec lattice_;
  std::vector<double> w_;
};

inline PiecewiseConstantField reconstruct_density(const DiscreteMeasure& rho) {
  return PiecewiseConstantField{rho.lattice(), rho.density_view()};
}

// Builds a measure from midpoint samples of a nonnegative density,
// renormalized to total mass exactly 1.
inline DiscreteMeasure discretize_density(const LatticeSpec& lattice,
                                          const std::vector<double>& samples) {
  if (static_cast<std::int64_t>(samples.size()) != lattice.size())
    throw std::invalid_argument("discretize_density: sample count mismatch");
  return DiscreteMeasure::from_unnormalized(lattice, samples);
}

inline DiscreteMeasure discretize_density(
    const LatticeSpec& lattice, const std::function<double(const Point&)>& u) {
  std::vector<double> samples(lattice.size());
  for (std::int64_t z = 0; z < lattice.size(); ++z)
    samples[z] = u(lattice.position(z));
  return DiscreteMeasure::from_unnormalized(lattice, samples);
}

inline double linf_density(const DiscreteMeasure& rho) {
  double m = 0.0;
  for (std::int64_t z = 0; z < rho.size(); ++z)
    m = std::max(m, rho.density(z));
  return m;
}

inline double l1_distance(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  if (a.lattice() != b.lattice())
    throw std::invalid_argument("l1_distance: mismatched lattices");
  double s = 0.0;
  for (std::int64_t z = 0; z < a.size(); ++z)
    s += std::abs(a.weight(z) - b.weight(z));
  return s;
}

}  // namespace jkoflow
