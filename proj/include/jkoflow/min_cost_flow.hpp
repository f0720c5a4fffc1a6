#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <stdexcept>
#include <vector>

namespace jkoflow {

// Primal network simplex for min-cost flow with real-valued supplies and
// optional arc capacities. Costs are 64-bit integers, so reduced costs and
// node potentials stay exact and the optimality test never suffers from
// rounding. Leaving-arc selection keeps the basis strongly feasible
// (strict test on the first cycle path, non-strict on the second), which
// rules out cycling on degenerate pivots.
class NetworkSimplex {
 public:
  using Cost = std::int64_t;
  using Flow = double;

  static constexpr Flow kInfCapacity = std::numeric_limits<Flow>::infinity();

  enum class Status { optimal, infeasible };

  explicit NetworkSimplex(int node_count) : n_(node_count) {
    if (node_count < 1) throw std::invalid_argument("mcf: need >= 1 node");
    supply_.assign(n_, 0.0);
  }

  void set_supply(int node, Flow b) { supply_.at(node) = b; }

  int add_arc(int from, int to, Cost cost, Flow capacity = kInfCapacity) {
    if (from < 0 || from >= n_ || to < 0 || to >= n_ || from == to)
      throw std::invalid_argument("mcf: bad arc endpoints");
    if (capacity < 0.0) throw std::invalid_argument("mcf: negative capacity");
    from_.push_back(from);
    to_.push_back(to);
    cost_.push_back(cost);
    cap_.push_back(capacity);
    return static_cast<int>(from_.size()) - 1;
  }

  int arc_count() const { return static_cast<int>(from_.size()); }

  Status solve() {
    const int m = arc_count();
    const int root = n_;
    const int total_nodes = n_ + 1;

    force_exact_balance();

    Cost max_cost = 0;
    for (Cost c : cost_) max_cost = std::max<Cost>(max_cost, c < 0 ? -c : c);
    {
      // potentials are bounded by tree-path cost sums
      const Cost bound = std::numeric_limits<Cost>::max() /
                         (static_cast<Cost>(total_nodes) * total_nodes + 1);
      if (max_cost + 1 > bound)
        throw std::invalid_argument("mcf: cost magnitude too large for exact mode");
    }
    const Cost art_cost = (max_cost + 1) * static_cast<Cost>(total_nodes);
    art_cost_cached_ = art_cost;

    flow_.assign(m, 0.0);
    state_.assign(m, kStateLower);
    art_detached_.assign(n_, 0);
    parent_.assign(total_nodes, -1);
    pred_.assign(total_nodes, -1);
    depth_.assign(total_nodes, 0);
    pi_.assign(total_nodes, 0);
    tree_adj_.assign(total_nodes, {});

    // All-artificial initial basis: node <-> root, oriented by supply sign.
    art_from_.assign(n_, 0);
    art_flow_.assign(n_, 0.0);
    for (int v = 0; v < n_; ++v) {
      art_from_[v] = supply_[v] >= 0.0 ? v : root;
      art_flow_[v] = std::abs(supply_[v]);
      pi_[v] = supply_[v] >= 0.0 ? art_cost : -art_cost;
      parent_[v] = root;
      pred_[v] = m + v;  // artificial arc ids live after the real ones
      depth_[v] = 1;
      tree_adj_[root].push_back(m + v);
      tree_adj_[v].push_back(m + v);
    }
    pi_[root] = 0;
    parent_[root] = -1;
    depth_[root] = 0;

    const int block = std::max(64, static_cast<int>(std::sqrt(double(m))) + 1);
    int cursor = 0;
    long long pivots = 0;
    const long long pivot_limit =
        200LL * m + 2000LL * total_nodes + 1000000LL;

    while (true) {
      int entering = -1;
      Cost best = 0;
      int scanned = 0;
      while (scanned < m) {
        int stop = std::min(m, cursor + block);
        for (int a = cursor; a < stop; ++a) {
          Cost cr = cost_[a] - pi_[from_[a]] + pi_[to_[a]];
          if (state_[a] == kStateLower && cr < -best) {
            best = -cr;
            entering = a;
          } else if (state_[a] == kStateUpper && cr > best) {
            best = cr;
            entering = a;
          }
        }
        scanned += stop - cursor;
        cursor = stop == m ? 0 : stop;
        if (entering >= 0) break;
      }
      if (entering < 0) break;  // full scan, dual feasible
      pivot(entering, root);
      if (++pivots > pivot_limit)
        throw std::runtime_error("mcf: pivot limit exceeded");
    }

    for (int v = 0; v < n_; ++v)
      if (art_flow_[v] > 1e-9) return Status::infeasible;
    solved_ = true;
    return Status::optimal;
  }

  Flow flow(int arc) const { return flow_.at(arc); }
  Cost potential(int node) const { return pi_.at(node); }

  double total_cost() const {
    long double s = 0.0L;
    for (int a = 0; a < arc_count(); ++a)
      s += static_cast<long double>(cost_[a]) * flow_[a];
    return static_cast<double>(s);
  }

  // Rebases potentials by shortest reduced-cost distances in the residual
  // graph from `root`. Afterwards pi[v] - pi[root] is a plain shortest-path
  // distance in the original costs, so the big-M offsets of artificial
  // basis arcs cancel out of every dual quantity. Returns false (leaving
  // potentials untouched) when some node is unreachable.
  bool rebase_potentials(int root) {
    if (!solved_) throw std::logic_error("mcf: rebase before solve");
    const int m = arc_count();
    struct Edge {
      int to;
      Cost len;
    };
    std::vector<std::vector<Edge>> adj(n_);
    for (int a = 0; a < m; ++a) {
      Cost cr = cost_[a] - pi_[from_[a]] + pi_[to_[a]];
      if (flow_[a] < cap_[a]) adj[from_[a]].push_back({to_[a], cr});
      if (flow_[a] > 0.0) adj[to_[a]].push_back({from_[a], -cr});
    }
    const Cost inf = std::numeric_limits<Cost>::max();
    std::vector<Cost> dist(n_, inf);
    using Item = std::pair<Cost, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
    dist[root] = 0;
    heap.push({0, root});
    while (!heap.empty()) {
      auto [d, v] = heap.top();
      heap.pop();
      if (d != dist[v]) continue;
      for (const Edge& e : adj[v]) {
        if (e.len < 0)
          throw std::logic_error("mcf: negative residual length after solve");
        Cost nd = d + e.len;
        if (nd < dist[e.to]) {
          dist[e.to] = nd;
          heap.push({nd, e.to});
        }
      }
    }
    for (int v = 0; v < n_; ++v)
      if (dist[v] == inf) return false;
    // with cr = c - pi_u + pi_v, subtracting distances keeps cr >= 0 and
    // leaves pi_v = pi_root - dist_orig(v), free of big-M offsets
    for (int v = 0; v < n_; ++v) pi_[v] -= dist[v];
    return true;
  }

 private:
  static constexpr int kStateLower = 0;
  static constexpr int kStateTree = 1;
  static constexpr int kStateUpper = 2;

  // Keeps sum(supply) at exactly zero so the artificial arcs can drain
  // completely; a leftover imbalance would park flow on a big-M arc.
  void force_exact_balance() {
    int jmax = 0;
    for (int v = 1; v < n_; ++v)
      if (std::abs(supply_[v]) > std::abs(supply_[jmax])) jmax = v;
    for (int round = 0; round < 64; ++round) {
      double r = 0.0;
      for (double b : supply_) r += b;
      if (r == 0.0) return;
      if (std::abs(r) > 1e-9)
        throw std::invalid_argument("mcf: supplies do not balance");
      supply_[jmax] -= r;
    }
  }

  bool is_artificial(int arc) const { return arc >= arc_count(); }

  double& arc_flow(int arc) {
    return is_artificial(arc) ? art_flow_[arc - arc_count()] : flow_[arc];
  }
  int arc_from(int arc) const {
    return is_artificial(arc) ? art_from_[arc - arc_count()] : from_[arc];
  }
  int arc_to(int arc) const {
    if (!is_artificial(arc)) return to_[arc];
    int v = arc - arc_count();
    return art_from_[v] == v ? n_ : v;
  }
  double arc_cap(int arc) const {
    return is_artificial(arc) ? kInfCapacity : cap_[arc];
  }

  void pivot(int entering, int root) {
    // Cycle orientation: flow increases from `first` to `second`.
    int first, second;
    if (state_[entering] == kStateLower) {
      first = from_[entering];
      second = to_[entering];
    } else {
      first = to_[entering];
      second = from_[entering];
    }

    int join = find_join(first, second);

    double delta;
    if (state_[entering] == kStateUpper)
      delta = flow_[entering];
    else
      delta = cap_[entering] == kInfCapacity ? kInfCapacity
                                             : cap_[entering] - flow_[entering];
    int leaving = entering;
    int out_node = -1;
    bool leaving_to_upper = false;

    // First path: the cycle runs downward through these pred arcs.
    for (int u = first; u != join; u = parent_[u]) {
      int a = pred_[u];
      bool points_up = arc_from(a) == u;  // arc oriented child -> parent
      double d;
      bool fills;
      if (points_up) {
        d = arc_flow(a);  // cycle opposes the arc
        fills = false;
      } else {
        double c = arc_cap(a);
        d = c == kInfCapacity ? kInfCapacity : c - arc_flow(a);
        fills = true;
      }
      if (d < delta) {
        delta = d;
        leaving = a;
        out_node = u;
        leaving_to_upper = fills;
      }
    }
    // Second path: the cycle runs upward; ties prefer arcs closer to the join.
    for (int u = second; u != join; u = parent_[u]) {
      int a = pred_[u];
      bool points_up = arc_from(a) == u;
      double d;
      bool fills;
      if (points_up) {
        double c = arc_cap(a);
        d = c == kInfCapacity ? kInfCapacity : c - arc_flow(a);
        fills = true;
      } else {
        d = arc_flow(a);
        fills = false;
      }
      if (d <= delta) {
        delta = d;
        leaving = a;
        out_node = u;
        leaving_to_upper = fills;
      }
    }

    if (delta == kInfCapacity)
      throw std::logic_error("mcf: unbounded pivot cycle");

    // Push delta around the cycle.
    if (delta != 0.0) {
      double val = state_[entering] == kStateUpper ? -delta : delta;
      flow_[entering] += val;
      for (int u = from_[entering]; u != join; u = parent_[u]) {
        int a = pred_[u];
        arc_flow(a) += arc_from(a) == u ? -val : val;
      }
      for (int u = to_[entering]; u != join; u = parent_[u]) {
        int a = pred_[u];
        arc_flow(a) += arc_from(a) == u ? val : -val;
      }
    }

    if (leaving == entering) {
      if (state_[entering] == kStateLower) {
        state_[entering] = kStateUpper;
        flow_[entering] = cap_[entering];
      } else {
        state_[entering] = kStateLower;
        flow_[entering] = 0.0;
      }
      return;
    }

    // Swap the arcs in the tree and rebuild parent/depth/pi from the root.
    detach_tree_arc(leaving, out_node);
    if (!is_artificial(leaving)) {
      // Snap bound flows exactly; tiny residue here is pure float noise.
      if (leaving_to_upper) {
        state_[leaving] = kStateUpper;
        flow_[leaving] = cap_[leaving];
      } else {
        state_[leaving] = kStateLower;
        flow_[leaving] = 0.0;
      }
    } else {
      art_flow_[leaving - arc_count()] = 0.0;
      art_detached_[leaving - arc_count()] = true;
    }
    attach_tree_arc(entering);
    state_[entering] = kStateTree;
    rebuild_tree(root);
  }

  int find_join(int a, int b) const {
    while (a != b) {
      if (depth_[a] > depth_[b])
        a = parent_[a];
      else
        b = parent_[b];
    }
    return a;
  }

  void detach_tree_arc(int arc, int child) {
    auto drop = [&](int v) {
      auto& lst = tree_adj_[v];
      for (std::size_t i = 0; i < lst.size(); ++i)
        if (lst[i] == arc) {
          lst[i] = lst.back();
          lst.pop_back();
          return;
        }
    };
    drop(child);
    drop(parent_[child]);
  }

  void attach_tree_arc(int arc) {
    tree_adj_[arc_from(arc)].push_back(arc);
    tree_adj_[arc_to(arc)].push_back(arc);
  }

  void rebuild_tree(int root) {
    const int total = n_ + 1;
    std::vector<int> stack;
    stack.reserve(total);
    stack.push_back(root);
    parent_[root] = -1;
    pred_[root] = -1;
    depth_[root] = 0;
    pi_[root] = 0;
    std::vector<char> seen(total, 0);
    seen[root] = 1;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int a : tree_adj_[v]) {
        int w = arc_from(a) == v ? arc_to(a) : arc_from(a);
        if (seen[w]) continue;
        seen[w] = 1;
        parent_[w] = v;
        pred_[w] = a;
        depth_[w] = depth_[v] + 1;
        Cost c = is_artificial(a) ? art_cost_of(a) : cost_[a];
        // tree arcs have zero reduced cost
        pi_[w] = arc_from(a) == w ? c + pi_[v] : pi_[v] - c;
        stack.push_back(w);
      }
    }
  }

  Cost art_cost_of(int) const { return art_cost_cached_; }

  int n_ = 0;
  std::vector<Flow> supply_;
  std::vector<int> from_, to_;
  std::vector<Cost> cost_;
  std::vector<Flow> cap_, flow_;
  std::vector<int> state_;

  std::vector<int> art_from_;
  std::vector<Flow> art_flow_;
  std::vector<char> art_detached_;

  std::vector<int> parent_, pred_, depth_;
  std::vector<Cost> pi_;
  std::vector<std::vector<int>> tree_adj_;
  Cost art_cost_cached_ = 0;
  bool solved_ = false;
};

}  // namespace jkoflow
