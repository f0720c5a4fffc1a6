#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "jkoflow/oracle.hpp"
#include "jkoflow/transport.hpp"

using namespace jkoflow;

namespace {

DiscreteMeasure random_measure(const LatticeSpec& lat, std::mt19937_64& rng,
                               bool full_support = true) {
  std::uniform_real_distribution<double> u(full_support ? 0.05 : 0.0, 1.0);
  std::vector<double> w(lat.size());
  for (auto& x : w) x = u(rng);
  return DiscreteMeasure::from_unnormalized(lat, w);
}

}  // namespace

TEST_CASE("identical marginals have zero cost and a diagonal plan") {
  auto lat = build_lattice(1, 0.5, {4});
  auto mu = DiscreteMeasure::from_weights(lat, {0.4, 0.1, 0.3, 0.2});
  auto r = solve_ot(mu, mu);
  CHECK(r.w2_squared == 0.0);
  for (const auto& e : r.plan.entries) CHECK(e.x == e.y);
  CHECK(r.plan.marginal_residual() < 1e-10);
}

TEST_CASE("two diracs") {
  auto lat = build_lattice(1, 1.0, {3});
  auto a = DiscreteMeasure::dirac(lat, 0);
  auto b = DiscreteMeasure::dirac(lat, 2);
  auto r = solve_ot(a, b);
  CHECK(r.w2_squared == Catch::Approx(4.0));
  CHECK(w2(a, b) == Catch::Approx(2.0));
}

TEST_CASE("monotone two-atom instance") {
  // mu = (1/2, 1/2, 0), nu = (0, 1/2, 1/2) on unit spacing: cost 1
  auto lat = build_lattice(1, 1.0, {3});
  auto mu = DiscreteMeasure::from_weights(lat, {0.5, 0.5, 0.0});
  auto nu = DiscreteMeasure::from_weights(lat, {0.0, 0.5, 0.5});
  QuantizedInstance inst{lat, 2, {{0, 1}, {1, 1}}, {{1, 1}, {2, 1}}, {}};
  auto brute = brute_force_ot(inst);
  auto r = solve_ot(mu, nu);
  CHECK(brute.w2_squared == Catch::Approx(1.0));
  CHECK(r.w2_squared == Catch::Approx(brute.w2_squared));
}

TEST_CASE("oracle equivalence on random quantized instances") {
  std::mt19937_64 rng(42);
  auto lat1 = build_lattice(1, 0.5, {6});
  auto lat2 = build_lattice(2, 0.25, {3, 3});
  for (int it = 0; it < 120; ++it) {
    const LatticeSpec& lat = it % 2 == 0 ? lat1 : lat2;
    std::uniform_int_distribution<int> qd(1, 6);
    int q = qd(rng);
    std::uniform_int_distribution<std::int64_t> nd(0, lat.size() - 1);
    QuantizedInstance inst{lat, q, {}, {}, {}};
    std::uniform_int_distribution<int> cnt(0, q);
    int left = q;
    while (left > 0) {
      int c = std::min(left, cnt(rng) + 1);
      inst.source_atoms.push_back({nd(rng), c});
      left -= c;
      if (inst.source_atoms.size() == 4) {
        if (left > 0) inst.source_atoms.back().second += left;
        left = 0;
      }
    }
    left = q;
    while (left > 0) {
      int c = std::min(left, cnt(rng) + 1);
      inst.target_atoms.push_back({nd(rng), c});
      left -= c;
      if (inst.target_atoms.size() == 4) {
        if (left > 0) inst.target_atoms.back().second += left;
        left = 0;
      }
    }
    auto brute = brute_force_ot(inst);
    auto r = solve_ot(inst.source_measure(), inst.target_measure());
    // both integers after scaling by q/h^2
    double h2 = lat.spacing() * lat.spacing();
    double solver_num = r.w2_squared * q / h2;
    CHECK(std::llround(solver_num) == brute.cost_numerator);
    CHECK(std::abs(solver_num - brute.cost_numerator) < 1e-9);
    auto rep = check_duality(r.plan, r.duals, 1e-9);
    CHECK(rep.ok);
  }
}

TEST_CASE("symmetry of the distance") {
  std::mt19937_64 rng(11);
  auto lat = build_lattice(2, 0.5, {3, 4});
  for (int it = 0; it < 10; ++it) {
    auto a = random_measure(lat, rng);
    auto b = random_measure(lat, rng);
    CHECK(std::abs(w2(a, b) - w2(b, a)) < 1e-10);
  }
}

TEST_CASE("triangle inequality") {
  std::mt19937_64 rng(12);
  auto lat = build_lattice(1, 0.25, {8});
  for (int it = 0; it < 10; ++it) {
    auto a = random_measure(lat, rng);
    auto b = random_measure(lat, rng);
    auto c = random_measure(lat, rng);
    CHECK(w2(a, c) <= w2(a, b) + w2(b, c) + 1e-9);
  }
}

TEST_CASE("translation covariance away from the boundary") {
  std::mt19937_64 rng(13);
  auto lat = build_lattice(1, 0.5, {8});
  std::vector<double> wa(8, 0.0), wb(8, 0.0);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int i = 1; i <= 3; ++i) {
    wa[i] = u(rng);
    wb[i] = u(rng);
  }
  auto a = DiscreteMeasure::from_unnormalized(lat, wa);
  auto b = DiscreteMeasure::from_unnormalized(lat, wb);
  std::vector<double> was(8, 0.0), wbs(8, 0.0);
  for (int i = 1; i <= 3; ++i) {
    was[i + 1] = a.weight(i);
    wbs[i + 1] = b.weight(i);
  }
  auto as = DiscreteMeasure::from_weights(lat, was);
  auto bs = DiscreteMeasure::from_weights(lat, wbs);
  CHECK(w2(a, b) == Catch::Approx(w2(as, bs)).margin(1e-12));
}

TEST_CASE("strong duality and support size") {
  std::mt19937_64 rng(14);
  auto lat = build_lattice(2, 1.0, {4, 3});
  for (int it = 0; it < 10; ++it) {
    auto a = random_measure(lat, rng);
    auto b = random_measure(lat, rng);
    auto r = solve_ot(a, b);
    auto rep = check_duality(r.plan, r.duals, 1e-9);
    CHECK(rep.ok);
    CHECK(rep.strong_duality_gap <= 1e-9);
    CHECK(static_cast<std::int64_t>(r.plan.entries.size()) <=
          2 * lat.size() - 1);
    for (const auto& e : r.plan.entries) CHECK(e.mass > 0.0);
  }
}

TEST_CASE("duals transported by the gauge stay valid") {
  std::mt19937_64 rng(15);
  auto lat = build_lattice(1, 0.5, {5});
  auto a = random_measure(lat, rng);
  auto b = random_measure(lat, rng);
  auto r = solve_ot(a, b);
  auto shifted = r.duals;
  for (auto& v : shifted.phi) v += 3.25;
  for (auto& v : shifted.psi) v -= 3.25;
  auto rep0 = check_duality(r.plan, r.duals, 1e-9);
  auto rep1 = check_duality(r.plan, shifted, 1e-9);
  CHECK(rep1.ok == rep0.ok);
  CHECK(rep1.max_support_gap == Catch::Approx(rep0.max_support_gap).margin(1e-12));
}

TEST_CASE("perturbed dual is flagged") {
  auto lat = build_lattice(1, 1.0, {4});
  auto a = DiscreteMeasure::from_weights(lat, {0.25, 0.25, 0.25, 0.25});
  auto b = DiscreteMeasure::from_weights(lat, {0.1, 0.4, 0.3, 0.2});
  auto r = solve_ot(a, b);
  auto bad = r.duals;
  bad.phi[1] += 0.1;
  auto rep = check_duality(r.plan, bad, 1e-9);
  CHECK_FALSE(rep.ok);
  double worst = std::max(rep.max_support_gap, rep.max_feasibility_violation);
  CHECK(worst == Catch::Approx(0.1).epsilon(0.01));
}

TEST_CASE("zero-weight nodes get c-transform potentials") {
  auto lat = build_lattice(1, 1.0, {5});
  std::vector<double> wa(5, 0.0), wb(5, 0.0);
  wa[0] = 1.0;
  wb[4] = 1.0;
  auto r = solve_ot(DiscreteMeasure::from_weights(lat, wa),
                    DiscreteMeasure::from_weights(lat, wb));
  REQUIRE(r.duals.phi.size() == 5);
  for (double v : r.duals.phi) CHECK(std::isfinite(v));
  for (double v : r.duals.psi) CHECK(std::isfinite(v));
  // feasibility against every node pair, not just the support
  for (std::int64_t x = 0; x < 5; ++x)
    for (std::int64_t y = 0; y < 5; ++y)
      CHECK(r.duals.phi[x] + r.duals.psi[y] <=
            0.5 * lat.squared_distance(x, y) + 1e-9);
}

TEST_CASE("1D solver agrees with the monotone coupling") {
  std::mt19937_64 rng(16);
  auto lat = build_lattice(1, 0.125, {16});
  for (int it = 0; it < 20; ++it) {
    auto a = random_measure(lat, rng);
    auto b = random_measure(lat, rng);
    auto r = solve_ot(a, b);
    CHECK(r.w2_squared ==
          Catch::Approx(monotone_w2_squared_1d(a, b)).margin(1e-10));
  }
}

TEST_CASE("mismatched lattices and masses are rejected") {
  auto lat = build_lattice(1, 0.5, {4});
  auto other = build_lattice(1, 0.25, {8});
  CHECK_THROWS_AS(solve_ot(DiscreteMeasure::uniform(lat),
                           DiscreteMeasure::uniform(other)),
                  std::invalid_argument);
}

TEST_CASE("displacement window validates against the full solve") {
  std::mt19937_64 rng(17);
  auto lat = build_lattice(1, 0.25, {12});
  auto a = random_measure(lat, rng);
  auto b = random_measure(lat, rng);
  OtOptions narrow;
  narrow.window = 2.0;  // wide enough here: max displacement stays local
  auto rw = solve_ot(a, b, narrow);
  auto rf = solve_ot(a, b);
  CHECK(rw.w2_squared == Catch::Approx(rf.w2_squared).margin(1e-12));
}
