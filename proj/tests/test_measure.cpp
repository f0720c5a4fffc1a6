#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "jkoflow/measure.hpp"

using namespace jkoflow;

TEST_CASE("reconstruction is the density view") {
  auto lat = build_lattice(1, 0.25, {4});
  auto rho = DiscreteMeasure::uniform(lat);
  auto field = reconstruct_density(rho);
  for (double v : field.values) CHECK(v == Catch::Approx(1.0));
  CHECK(field.integral() == Catch::Approx(1.0));

  auto lat2 = build_lattice(1, 0.5, {2});
  auto d = DiscreteMeasure::dirac(lat2, 0);
  auto f2 = reconstruct_density(d);
  CHECK(f2.values[0] == Catch::Approx(2.0));
  CHECK(f2.values[1] == 0.0);

  auto m = DiscreteMeasure::from_weights(lat2, {0.25, 0.75});
  auto f3 = reconstruct_density(m);
  CHECK(f3.values[0] == Catch::Approx(0.5));
  CHECK(f3.values[1] == Catch::Approx(1.5));
}

TEST_CASE("reconstruction preserves mass exactly") {
  auto lat = build_lattice(2, 0.125, {8, 8});
  auto rho = discretize_density(
      lat, [](const Point& p) { return std::exp(-3.0 * (p[0] + p[1])); });
  double cell = lat.cell_volume();
  double s = 0.0;
  for (double v : reconstruct_density(rho).values) s += v * cell;
  CHECK(s == Catch::Approx(rho.total_mass()).epsilon(1e-14));
}

TEST_CASE("discretize_density basics") {
  auto lat = build_lattice(1, 0.25, {4});
  auto uni = discretize_density(lat, std::vector<double>{2.0, 2.0, 2.0, 2.0});
  for (std::int64_t z = 0; z < 4; ++z)
    CHECK(uni.weight(z) == Catch::Approx(0.25));

  auto half = discretize_density(lat, std::vector<double>{1.0, 1.0, 0.0, 0.0});
  CHECK(half.weight(0) == Catch::Approx(0.5));
  CHECK(half.weight(3) == 0.0);

  auto lat64 = build_lattice(1, 1.0 / 64, {64});
  auto gauss = discretize_density(lat64, [](const Point& p) {
    return std::exp(-20.0 * (p[0] - 0.5) * (p[0] - 0.5));
  });
  CHECK(std::abs(gauss.total_mass() - 1.0) < 1e-15);
  for (std::int64_t z = 0; z < 64; ++z) CHECK(gauss.weight(z) > 0.0);

  CHECK_THROWS_AS(discretize_density(lat, std::vector<double>{0, 0, 0, 0}),
                  std::invalid_argument);
}

TEST_CASE("norms and distances") {
  auto lat = build_lattice(1, 0.5, {2});
  auto uni = DiscreteMeasure::uniform(lat);
  CHECK(linf_density(uni) == Catch::Approx(1.0));
  CHECK(l1_distance(uni, uni) == 0.0);
  auto a = DiscreteMeasure::dirac(lat, 0);
  auto b = DiscreteMeasure::dirac(lat, 1);
  CHECK(l1_distance(a, b) == Catch::Approx(2.0));

  auto other = build_lattice(1, 0.25, {4});
  CHECK_THROWS_AS(l1_distance(a, DiscreteMeasure::uniform(other)),
                  std::invalid_argument);
}

TEST_CASE("validation and renormalization") {
  auto lat = build_lattice(1, 0.5, {2});
  CHECK_THROWS_AS(DiscreteMeasure::from_weights(lat, {0.6, 0.6}),
                  std::invalid_argument);
  CHECK_THROWS_AS(DiscreteMeasure::from_weights(lat, {-0.1, 1.1}),
                  std::invalid_argument);

  auto m = DiscreteMeasure::from_unnormalized(lat, {3.0, 1.0});
  CHECK(m.weight(0) == Catch::Approx(0.75));
  CHECK(m.total_mass() == Catch::Approx(1.0));
}
