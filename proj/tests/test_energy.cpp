#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "jkoflow/energy.hpp"

using namespace jkoflow;

namespace {

std::vector<double> node_potential(const LatticeSpec& lat,
                                   const std::function<double(const Point&)>& V) {
  std::vector<double> v(lat.size());
  for (std::int64_t z = 0; z < lat.size(); ++z) v[z] = V(lat.position(z));
  return v;
}

}  // namespace

TEST_CASE("internal energy values") {
  auto lat = build_lattice(1, 0.25, {4});
  auto uni = DiscreteMeasure::uniform(lat);

  auto ent = EnergySpec::free_energy(lat, InternalDensity::entropy());
  CHECK(eval_energy(ent, uni) == Catch::Approx(0.0).margin(1e-15));

  auto pm2 = EnergySpec::free_energy(lat, InternalDensity::power_law(2.0));
  CHECK(eval_energy(pm2, uni) == Catch::Approx(1.0));
}

TEST_CASE("crowd energy is +inf past the capacity") {
  auto lat = build_lattice(1, 0.25, {8}, {0.0});  // |Omega| = 2
  auto spec = EnergySpec::crowd(lat, std::vector<double>(8, 0.0), 0.0);
  auto uni = DiscreteMeasure::uniform(lat);  // u = 1/2
  CHECK(eval_energy(spec, uni) == 0.0);
  CHECK(crowd_feasible(uni));

  std::vector<double> w(8, 0.1 / 7);
  w[3] = 0.9;  // u_3 = 3.6
  auto bad = DiscreteMeasure::from_unnormalized(lat, w);
  CHECK(std::isinf(eval_energy(spec, bad)));
  CHECK_FALSE(crowd_feasible(bad));

  // boundary case u = 1 and a within-tolerance bump
  auto full = DiscreteMeasure::from_weights(
      lat, std::vector<double>(8, 0.125));
  CHECK(crowd_feasible(full));
}

TEST_CASE("first variation closed forms") {
  auto lat = build_lattice(1, 0.5, {2});

  auto ent = EnergySpec::free_energy(build_lattice(1, 0.25, {4}),
                                     InternalDensity::entropy());
  auto uni = DiscreteMeasure::uniform(build_lattice(1, 0.25, {4}));
  for (double g : first_variation(ent, uni))
    CHECK(g == Catch::Approx(1.0));  // log 1 + 1

  auto pm = EnergySpec::free_energy(lat, InternalDensity::power_law(2.0));
  auto rho = DiscreteMeasure::from_weights(lat, {0.25, 0.75});  // u = (0.5, 1.5)
  auto g = first_variation(pm, rho);
  CHECK(g[0] == Catch::Approx(1.0));
  CHECK(g[1] == Catch::Approx(3.0));

  auto latv = build_lattice(1, 0.5, {2});
  auto vonly = EnergySpec::free_energy(latv, std::nullopt,
                                       node_potential(latv, [](const Point& p) {
                                         return p[0];
                                       }),
                                       1.0);
  auto gv = first_variation(vonly, DiscreteMeasure::uniform(latv));
  CHECK(gv[0] == Catch::Approx(0.25));
  CHECK(gv[1] == Catch::Approx(0.75));
}

TEST_CASE("first variation matches finite differences") {
  auto lat = build_lattice(1, 0.25, {4});
  auto spec = EnergySpec::free_energy(lat, InternalDensity::power_law(3.0),
                                      node_potential(lat, [](const Point& p) {
                                        return std::sin(3 * p[0]);
                                      }),
                                      3.0);
  auto rho = DiscreteMeasure::from_unnormalized(lat, {0.3, 0.2, 0.4, 0.1});
  auto g = first_variation(spec, rho);
  const double step = 1e-6;
  for (std::int64_t z = 0; z < 4; ++z) {
    auto wp = rho.weights();
    auto wm = rho.weights();
    wp[z] += step;
    wm[z] -= step;
    // raw perturbation off the simplex: energy extends smoothly
    double ep = 0, em = 0;
    double cell = lat.cell_volume();
    for (std::int64_t x = 0; x < 4; ++x) {
      ep += spec.internal().f(wp[x] / cell) * cell + spec.potential()[x] * wp[x];
      em += spec.internal().f(wm[x] / cell) * cell + spec.potential()[x] * wm[x];
    }
    double fd = (ep - em) / (2 * step);
    CHECK(g[z] == Catch::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("entropy at zero requires the clamp") {
  auto lat = build_lattice(1, 0.5, {2});
  auto spec = EnergySpec::free_energy(lat, InternalDensity::entropy());
  auto d = DiscreteMeasure::dirac(lat, 0);
  CHECK_THROWS_AS(first_variation(spec, d), std::domain_error);
  auto g = first_variation(spec, d, 1e-10);
  CHECK(std::isfinite(g[1]));
}

TEST_CASE("ell closed forms") {
  CHECK(ell(InternalDensity::entropy(), 4.0) == Catch::Approx(4.0));
  CHECK(ell(InternalDensity::power_law(2.0), 1.0) == Catch::Approx(4.0 / 3.0));
  CHECK(ell(InternalDensity::entropy(), 0.0) == 0.0);
  CHECK(ell(InternalDensity::power_law(3.0), 0.0) == 0.0);
  CHECK_THROWS_AS(ell(InternalDensity::entropy(), -1.0), std::domain_error);
}

TEST_CASE("ell transform consistency by finite differences") {
  const double step = 1e-6;
  for (auto kind : {InternalDensity::entropy(), InternalDensity::power_law(2.0),
                    InternalDensity::power_law(3.5)}) {
    for (double s : {0.25, 1.0, 4.0}) {
      double dell = (kind.ell(s + step) - kind.ell(s - step)) / (2 * step);
      double fpp = (kind.fprime(s + step) - kind.fprime(s - step)) / (2 * step);
      CHECK(dell == Catch::Approx(std::sqrt(s) * fpp).epsilon(1e-6));
    }
  }
}

TEST_CASE("custom kind validates ell against f''") {
  auto good = InternalDensity::custom(
      [](double s) { return s * s; }, [](double s) { return 2 * s; },
      [](double s) { return 4.0 / 3.0 * std::pow(s, 1.5); });
  CHECK(good.ell(1.0) == Catch::Approx(4.0 / 3.0));

  CHECK_THROWS_AS(InternalDensity::custom([](double s) { return s * s; },
                                          [](double s) { return 2 * s; },
                                          [](double s) { return s; }),
                  std::invalid_argument);
}

TEST_CASE("declared Lipschitz constant must dominate grid differences") {
  auto lat = build_lattice(1, 0.5, {4});
  auto v = node_potential(lat, [](const Point& p) { return 2.0 * p[0]; });
  CHECK_NOTHROW(EnergySpec::free_energy(lat, std::nullopt, v, 2.0));
  CHECK_THROWS_AS(EnergySpec::free_energy(lat, std::nullopt, v, 1.0),
                  std::invalid_argument);
}

TEST_CASE("midpoint convexity along segments") {
  auto lat = build_lattice(1, 0.25, {4});
  auto spec = EnergySpec::free_energy(lat, InternalDensity::entropy(),
                                      node_potential(lat, [](const Point& p) {
                                        return p[0] * p[0];
                                      }),
                                      2.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uu(0.05, 1.0);
  for (int it = 0; it < 25; ++it) {
    std::vector<double> a(4), b(4);
    for (auto& x : a) x = uu(rng);
    for (auto& x : b) x = uu(rng);
    auto ra = DiscreteMeasure::from_unnormalized(lat, a);
    auto rb = DiscreteMeasure::from_unnormalized(lat, b);
    std::vector<double> mid(4);
    for (int i = 0; i < 4; ++i) mid[i] = 0.5 * (ra.weight(i) + rb.weight(i));
    auto rm = DiscreteMeasure::from_weights(lat, mid);
    CHECK(eval_energy(spec, rm) <=
          0.5 * eval_energy(spec, ra) + 0.5 * eval_energy(spec, rb) + 1e-12);
  }
}

TEST_CASE("interaction term and its gradient") {
  auto lat = build_lattice(1, 0.5, {3});
  RadialKernel w({0.0, 2.0}, {1.0, 0.0});  // tent kernel
  auto spec = EnergySpec::free_energy(lat, std::nullopt).with_interaction(w);
  auto rho = DiscreteMeasure::from_weights(lat, {0.5, 0.25, 0.25});
  double direct = 0.0;
  for (std::int64_t x = 0; x < 3; ++x)
    for (std::int64_t y = 0; y < 3; ++y)
      direct += w(std::sqrt(lat.squared_distance(x, y))) * rho.weight(x) *
                rho.weight(y);
  CHECK(eval_energy(spec, rho) == Catch::Approx(direct));

  auto g = first_variation(spec, rho);
  const double step = 1e-6;
  for (std::int64_t z = 0; z < 3; ++z) {
    auto wp = rho.weights();
    auto wm = rho.weights();
    wp[z] += step;
    wm[z] -= step;
    double ep = 0, em = 0;
    for (std::int64_t x = 0; x < 3; ++x)
      for (std::int64_t y = 0; y < 3; ++y) {
        double k = w(std::sqrt(lat.squared_distance(x, y)));
        ep += k * wp[x] * wp[y];
        em += k * wm[x] * wm[y];
      }
    CHECK(g[z] == Catch::Approx((ep - em) / (2 * step)).epsilon(1e-5));
  }
}

TEST_CASE("crowd spec excludes internal and interaction terms") {
  auto lat = build_lattice(1, 0.5, {4});
  auto crowd = EnergySpec::crowd(lat, std::vector<double>(4, 1.0), 0.0);
  CHECK(crowd.is_crowd());
  CHECK_FALSE(crowd.has_internal());
  CHECK_THROWS_AS(crowd.with_interaction(RadialKernel({0.0, 3.0}, {1.0, 0.0})),
                  std::invalid_argument);
}
