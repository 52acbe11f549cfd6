#include <random>

#include "catch_amalgamated.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "mfgdta/costs.hpp"
#include "mfgdta/model.hpp"

using namespace mfgdta;

TEST_CASE("running cost is the quadratic kinetic, density and efficiency sum") {
  const CostSpec g{};
  CHECK(running_cost(1.0, 0.5, {1.0, 1.0, 0.5}, g) == Catch::Approx(0.5 + 0.5 + 0.5));
  CHECK(running_cost(0.0, 0.0, {2.0, 0.0, 3.0}, g) == Catch::Approx(3.0));
  CHECK(queuing_cost(0.25, CostSpec{2.0}) == Catch::Approx(0.5));
}

TEST_CASE("Greenshields speed") {
  const CostSpec g{};
  CHECK(lwr_speed(0.0, g) == 1.0);
  CHECK(lwr_speed(0.25, g) == Catch::Approx(0.75));
  CHECK(lwr_speed(1.0, g) == 0.0);
  CHECK(lwr_speed(1.5, g) == 0.0);
  CostSpec floor_speed{};
  floor_speed.u_min = 0.1;
  CHECK(lwr_speed(0.95, floor_speed) == Catch::Approx(0.1));
}

TEST_CASE("optimal speed matches a dense search on random inputs") {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> grad(-5.0, 3.0), c1(0.1, 5.0), umin(0.0, 0.3), span(0.2, 2.0), rho(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    CostSpec g{};
    g.u_min = umin(rng);
    g.u_max = g.u_min + span(rng);
    const CostCoefficients c{c1(rng), 1.0, 0.5};
    const double gr = grad(rng);
    const double r = rho(rng);
    worst = std::max(worst, std::abs(optimal_speed(gr, r, c, g) - oracles::argmin_by_search(gr, c, g, r)));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("affine terminal profile is sampled at sublink starts") {
  using fixtures::two_path;
  NetworkSpec s = two_path({}, {}, {}, {}, 0.8);
  s.demand["1"] = DemandProfile({{0.0, 1.0, 0.75}});
  TerminalSpec ts;
  ts.nodal = {{"1", 2.0}, {"2", 1.0}, {"3", 1.0}};
  ts.profiles = {{"1-2", {2.0, -1.0}}};
  const Model m(Network(s), CostSpec{}, Grid::make(0.25, 0.25, 6.0), ts);
  const auto& chain = m.dnet.chain(0);
  REQUIRE(chain.size() == 4);
  const double want[] = {2.0, 1.75, 1.5, 1.25};
  for (std::size_t p = 0; p < 4; ++p) {
    CHECK(m.terminal.sublink_value[static_cast<std::size_t>(chain[p])] == Catch::Approx(want[p]));
  }
  // nodal interpolation on 2-4 from pi_2 = 1 to the destination at 0
  const auto& c24 = m.dnet.chain(2);
  CHECK(m.terminal.sublink_value[static_cast<std::size_t>(c24[2])] == Catch::Approx(0.5));
}

TEST_CASE("invalid global costs are rejected") {
  CostSpec g{};
  g.u_max = 0.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = CostSpec{};
  g.c4 = -1.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
}
