#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace jkoflow {

inline constexpr int kMaxDim = 3;

using Point = std::array<double, kMaxDim>;
using MultiIndex = std::array<int, kMaxDim>;

// Regular cell-centered grid over an axis-aligned box. Node i sits at
// origin + (i_k + 1/2) h per axis, so the cells node + (-h/2, h/2)^d tile
// the box exactly. Immutable after construction; all member functions are
// pure and safe to call concurrently.
class LatticeSpec {
 public:
  LatticeSpec() = default;

  LatticeSpec(int dim, double spacing, const std::vector<int>& extents,
              const std::vector<double>& origin = {}) {
    if (dim < 1 || dim > kMaxDim)
      throw std::invalid_argument("lattice: dimension must be in {1,2,3}");
    if (!(spacing > 0.0))
      throw std::invalid_argument("lattice: spacing must be positive");
    if (static_cast<int>(extents.size()) != dim)
      throw std::invalid_argument("lattice: need one extent per axis");
    if (!origin.empty() && static_cast<int>(origin.size()) != dim)
      throw std::invalid_argument("lattice: origin size mismatch");
    dim_ = dim;
    h_ = spacing;
    size_ = 1;
    for (int k = 0; k < dim; ++k) {
      if (extents[k] < 1)
        throw std::invalid_argument("lattice: extents must be >= 1");
      n_[k] = extents[k];
      origin_[k] = origin.empty() ? 0.0 : origin[k];
      size_ *= extents[k];
    }
  }

  int dim() const { return dim_; }
  double spacing() const { return h_; }
  int extent(int axis) const { return n_[axis]; }
  double origin(int axis) const { return origin_[axis]; }
  std::int64_t size() const { return size_; }

  double cell_volume() const {
    double v = 1.0;
    for (int k = 0; k < dim_; ++k) v *= h_;
    return v;
  }
  double volume() const { return cell_volume() * static_cast<double>(size_); }

  // Flat index <-> multi index, axis 1 fastest.
  std::int64_t flat(const MultiIndex& idx) const {
    std::int64_t f = 0;
    for (int k = dim_ - 1; k >= 0; --k) f = f * n_[k] + idx[k];
    return f;
  }

  MultiIndex multi(std::int64_t flat_index) const {
    check_node(flat_index);
    MultiIndex idx{0, 0, 0};
    for (int k = 0; k < dim_; ++k) {
      idx[k] = static_cast<int>(flat_index % n_[k]);
      flat_index /= n_[k];
    }
    return idx;
  }

  Point position(std::int64_t flat_index) const {
    MultiIndex idx = multi(flat_index);
    Point p{0.0, 0.0, 0.0};
    for (int k = 0; k < dim_; ++k) p[k] = origin_[k] + (idx[k] + 0.5) * h_;
    return p;
  }

  struct Neighbor {
    std::int64_t node;
    int axis;
    int sign;  // +1 or -1
  };

  // In-box neighbors of z, ordered +e1, -e1, +e2, -e2, ...
  std::vector<Neighbor> neighbors(std::int64_t z) const {
    MultiIndex idx = multi(z);
    std::vector<Neighbor> out;
    out.reserve(2 * dim_);
    for (int k = 0; k < dim_; ++k) {
      for (int sign : {+1, -1}) {
        int j = idx[k] + sign;
        if (j < 0 || j >= n_[k]) continue;
        MultiIndex nb = idx;
        nb[k] = j;
        out.push_back(Neighbor{flat(nb), k, sign});
      }
    }
    return out;
  }

  // Visits every ordered neighbor pair (z, z + sign*h*e_axis) exactly once.
  template <class F>
  void for_each_pair(F&& f) const {
    for (std::int64_t z = 0; z < size_; ++z) {
      MultiIndex idx = multi(z);
      for (int k = 0; k < dim_; ++k) {
        for (int sign : {+1, -1}) {
          int j = idx[k] + sign;
          if (j < 0 || j >= n_[k]) continue;
          MultiIndex nb = idx;
          nb[k] = j;
          f(z, flat(nb), k, sign);
        }
      }
    }
  }

  // |Sigma^h| = sum_i 2 (n_i - 1) prod_{j != i} n_j
  std::int64_t sigma_count() const {
    std::int64_t total = 0;
    for (int k = 0; k < dim_; ++k) {
      std::int64_t rest = 1;
      for (int j = 0; j < dim_; ++j)
        if (j != k) rest *= n_[j];
      total += 2 * static_cast<std::int64_t>(n_[k] - 1) * rest;
    }
    return total;
  }

  // Nearest node to a point of the closed box; ties go to the smaller flat
  // index (per axis the lower cell wins).
  std::int64_t project(const Point& x) const {
    MultiIndex idx{0, 0, 0};
    for (int k = 0; k < dim_; ++k) {
      double lo = origin_[k];
      double hi = origin_[k] + n_[k] * h_;
      if (x[k] < lo || x[k] > hi)
        throw std::invalid_argument("project_to_lattice: point outside box (axis " +
                                    std::to_string(k) + ")");
      double t = (x[k] - lo) / h_;
      double fl = std::floor(t);
      int i = static_cast<int>(fl);
      if (t == fl && i >= 1) i -= 1;  // cell-boundary tie
      if (i >= n_[k]) i = n_[k] - 1;
      if (i < 0) i = 0;
      idx[k] = i;
    }
    return flat(idx);
  }

  double squared_distance(std::int64_t a, std::int64_t b) const {
    Point pa = position(a), pb = position(b);
    double s = 0.0;
    for (int k = 0; k < dim_; ++k) s += (pa[k] - pb[k]) * (pa[k] - pb[k]);
    return s;
  }

  // |x - y|^2 / h^2 as an exact integer (nodes of the same lattice).
  std::int64_t squared_lattice_distance(std::int64_t a, std::int64_t b) const {
    MultiIndex ia = multi(a), ib = multi(b);
    std::int64_t s = 0;
    for (int k = 0; k < dim_; ++k) {
      std::int64_t d = ia[k] - ib[k];
      s += d * d;
    }
    return s;
  }

  bool operator==(const LatticeSpec& o) const {
    if (dim_ != o.dim_ || h_ != o.h_ || size_ != o.size_) return false;
    for (int k = 0; k < dim_; ++k)
      if (n_[k] != o.n_[k] || origin_[k] != o.origin_[k]) return false;
    return true;
  }
  bool operator!=(const LatticeSpec& o) const { return !(*this == o); }

 private:
  void check_node(std::int64_t z) const {
    if (z < 0 || z >= size_)
      throw std::out_of_range("lattice: node index " + std::to_string(z) +
                              " out of range");
  }

  int dim_ = 0;
  double h_ = 0.0;
  std::array<int, kMaxDim> n_{1, 1, 1};
  std::array<double, kMaxDim> origin_{0.0, 0.0, 0.0};
  std::int64_t size_ = 0;
};

inline LatticeSpec build_lattice(int dim, double spacing,
                                 const std::vector<int>& extents,
                                 const std::vector<double>& origin = {}) {
  return LatticeSpec(dim, spacing, extents, origin);
}

}  // namespace jkoflow
