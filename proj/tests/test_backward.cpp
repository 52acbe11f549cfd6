#include <random>

#include "catch_amalgamated.hpp"
#include "fixtures.hpp"
#include "mfgdta/backward.hpp"

using namespace mfgdta;

TEST_CASE("route best response picks the cheapest sublinks") {
  std::vector<double> beta(2);
  CHECK(route_best_response(std::vector<double>{2.0, 3.0}, beta) == 2.0);
  CHECK(beta == std::vector<double>{1.0, 0.0});
  CHECK(route_best_response(std::vector<double>{2.0, 2.0}, beta) == 2.0);
  CHECK(beta == std::vector<double>{0.5, 0.5});

  // shifting every value moves pi, not the support
  std::vector<double> shifted(3);
  std::vector<double> plain(3);
  route_best_response(std::vector<double>{1.0, 0.5, 0.7}, plain);
  CHECK(route_best_response(std::vector<double>{4.0, 3.5, 3.7}, shifted) == 3.5);
  CHECK(shifted == plain);
}

TEST_CASE("HJB link step minimizes the one-step Hamiltonian") {
  const CostSpec g{};
  const Grid grid = Grid::make(0.1, 0.1, 1.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> v(0.0, 3.0), lam(0.0, 3.0), rho(0.0, 1.0), c1(0.2, 4.0);
  for (int i = 0; i < 2000; ++i) {
    const CostCoefficients c{c1(rng), 1.0, 0.5};
    const double vn = v(rng), ln = lam(rng), r = rho(rng);
    const auto step = hjb_link_step(vn, ln, r, c, g, grid);
    // value of any admissible speed is no better than the returned one
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j <= 1000; ++j) {
      const double u = j / 1000.0;
      best = std::min(best, vn + grid.dt * (u * (ln - vn) / grid.dx + running_cost(u, r, c, g)));
    }
    REQUIRE(step.value <= best + 1e-12);
    REQUIRE(step.value >= best - 1e-5);
  }
  const auto lwr = hjb_link_step(1.0, 0.5, 0.25, {1.0, 1.0, 0.5}, g, grid, Mode::kLwr);
  CHECK(lwr.speed == Catch::Approx(0.75));
}

TEST_CASE("nodal cost interpolates pi at the queue exit time") {
  const CostSpec g{};
  const Grid grid = Grid::make(0.1, 0.1, 1.0);
  std::vector<double> pi(11);
  for (int k = 0; k <= 10; ++k) pi[static_cast<std::size_t>(k)] = 5.0 - k * 0.1;
  CHECK(nodal_cost(pi, 0.0, 1.0, 3, grid, g) == Catch::Approx(pi[3]));
  // wait 0.15 = 1.5 steps: pi halfway between levels 4 and 5, plus c4 * 0.15
  CHECK(nodal_cost(pi, 0.15, 1.0, 3, grid, g) == Catch::Approx(0.5 * (pi[4] + pi[5]) + 0.15));
  // waits beyond the horizon cost the remaining time and land on pi(T)
  CHECK(nodal_cost(pi, 5.0, 1.0, 8, grid, g) == Catch::Approx(pi[10] + 0.2));
}

TEST_CASE("first car on an empty link pays the free-flow optimum") {
  // cost of crossing length 1 at constant u is c1 u / 2 + c3 / u, minimal at
  // u = sqrt(2 c3 / c1) = 1 with value 1
  for (double dx : {0.1, 0.05, 0.025}) {
    const Model m = fixtures::single_link_model(dx);
    const Field rho(m.steps() + 1, m.num_sublinks());
    const Field queue(m.steps() + 1, m.num_nodes());
    const ValueField vf = backward_pass(m, rho, queue, Mode::kMfg);
    CHECK(vf.pi(0, 0) == Catch::Approx(1.0).margin(2.0 * dx));
    CHECK(vf.u(0, 0) == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("terminal data seeds the last level") {
  const Model m = fixtures::single_link_model(0.25);
  const Field rho(m.steps() + 1, m.num_sublinks());
  const Field queue(m.steps() + 1, m.num_nodes());
  const ValueField vf = backward_pass(m, rho, queue, Mode::kMfg);
  const int nt = m.steps();
  CHECK(vf.V(nt, 0) == Catch::Approx(10.0));
  CHECK(vf.V(nt, 3) == Catch::Approx(2.5));
  CHECK(vf.pi(nt, 0) == Catch::Approx(10.0));
  CHECK(vf.lambda(0, static_cast<std::size_t>(m.destination())) == 0.0);
}
