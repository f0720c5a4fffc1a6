#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "jkoflow/lattice.hpp"

using namespace jkoflow;

TEST_CASE("cell-centered node positions") {
  auto lat = build_lattice(1, 0.25, {4}, {0.0});
  REQUIRE(lat.size() == 4);
  CHECK(lat.position(0)[0] == Catch::Approx(0.125));
  CHECK(lat.position(1)[0] == Catch::Approx(0.375));
  CHECK(lat.position(2)[0] == Catch::Approx(0.625));
  CHECK(lat.position(3)[0] == Catch::Approx(0.875));
  CHECK(lat.volume() == Catch::Approx(1.0));
}

TEST_CASE("neighbor pair counts") {
  auto lat = build_lattice(2, 1.0, {2, 2}, {0.0, 0.0});
  REQUIRE(lat.size() == 4);
  CHECK(lat.sigma_count() == 8);
  std::int64_t seen = 0;
  lat.for_each_pair([&](std::int64_t, std::int64_t, int, int) { ++seen; });
  CHECK(seen == lat.sigma_count());

  auto lat3 = build_lattice(3, 0.5, {3, 4, 5});
  std::int64_t count3 = 0;
  lat3.for_each_pair([&](std::int64_t, std::int64_t, int, int) { ++count3; });
  CHECK(count3 == lat3.sigma_count());
}

TEST_CASE("1D adjacency") {
  auto lat = build_lattice(1, 0.5, {2});
  auto nb0 = lat.neighbors(0);
  REQUIRE(nb0.size() == 1);
  CHECK(nb0[0].node == 1);
  auto nb1 = lat.neighbors(1);
  REQUIRE(nb1.size() == 1);
  CHECK(nb1[0].node == 0);

  auto lat3 = build_lattice(1, 1.0, {3});
  CHECK(lat3.neighbors(1).size() == 2);
  CHECK(lat3.neighbors(0).size() == 1);
}

TEST_CASE("2D interior node has 4 neighbors, ordered by axis") {
  auto lat = build_lattice(2, 1.0, {3, 3});
  auto nb = lat.neighbors(lat.flat({1, 1, 0}));
  REQUIRE(nb.size() == 4);
  CHECK(nb[0].axis == 0);
  CHECK(nb[0].sign == +1);
  CHECK(nb[1].axis == 0);
  CHECK(nb[1].sign == -1);
  CHECK(nb[2].axis == 1);
}

TEST_CASE("projection basics and tie rule") {
  auto lat = build_lattice(1, 1.0, {2});
  CHECK(lat.project({0.7, 0, 0}) == 0);
  // x = 1.0 is equidistant to nodes at 0.5 and 1.5; lower index wins
  CHECK(lat.project({1.0, 0, 0}) == 0);
  CHECK(lat.project({1.2, 0, 0}) == 1);
  CHECK_THROWS_AS(lat.project({2.5, 0, 0}), std::invalid_argument);

  auto lat2 = build_lattice(2, 0.5, {4, 4});
  for (std::int64_t z = 0; z < lat2.size(); ++z)
    CHECK(lat2.project(lat2.position(z)) == z);  // node round trip
}

TEST_CASE("projection error bounded by sqrt(d) h / 2") {
  std::mt19937_64 rng(7);
  auto lat = build_lattice(2, 0.25, {5, 3}, {-1.0, 2.0});
  std::uniform_real_distribution<double> ux(-1.0, -1.0 + 5 * 0.25);
  std::uniform_real_distribution<double> uy(2.0, 2.0 + 3 * 0.25);
  for (int i = 0; i < 200; ++i) {
    Point p{ux(rng), uy(rng), 0.0};
    auto z = lat.project(p);
    Point q = lat.position(z);
    double d2 = 0;
    for (int k = 0; k < 2; ++k) d2 += (p[k] - q[k]) * (p[k] - q[k]);
    CHECK(std::sqrt(d2) <= std::sqrt(2.0) * 0.25 / 2 + 1e-12);
  }
}

TEST_CASE("pair listing is symmetric") {
  auto lat = build_lattice(2, 1.0, {3, 2});
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  lat.for_each_pair([&](std::int64_t a, std::int64_t b, int, int) {
    pairs.emplace_back(a, b);
  });
  for (auto [a, b] : pairs) {
    bool found = false;
    for (auto [c, d] : pairs)
      if (c == b && d == a) found = true;
    CHECK(found);
  }
}

TEST_CASE("constructor rejections") {
  CHECK_THROWS_AS(build_lattice(0, 1.0, {}), std::invalid_argument);
  CHECK_THROWS_AS(build_lattice(1, 0.0, {4}), std::invalid_argument);
  CHECK_THROWS_AS(build_lattice(1, 1.0, {0}), std::invalid_argument);
  CHECK_THROWS_AS(build_lattice(4, 1.0, {2, 2, 2, 2}), std::invalid_argument);
}

TEST_CASE("flat and multi index round trip") {
  auto lat = build_lattice(3, 0.5, {3, 4, 2});
  for (std::int64_t z = 0; z < lat.size(); ++z)
    CHECK(lat.flat(lat.multi(z)) == z);
  // axis 1 fastest
  CHECK(lat.flat({1, 0, 0}) == 1);
  CHECK(lat.flat({0, 1, 0}) == 3);
  CHECK(lat.flat({0, 0, 1}) == 12);
}
