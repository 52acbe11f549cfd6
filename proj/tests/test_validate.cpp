#include "catch_amalgamated.hpp"
#include "fixtures.hpp"
#include "mfgdta/validate.hpp"

using namespace mfgdta;

namespace {

// Empty-network solution: no demand loaded, values from the backward sweep.
Solution empty_solution(const Model& model) {
  Solution sol;
  sol.model = std::make_shared<const Model>(model);
  const int nt = model.steps();
  const std::size_t ns = model.num_sublinks();
  sol.loading.traffic = {Field(nt + 1, ns), Field(nt, ns), Field(nt, ns), Field(nt, ns)};
  sol.loading.queues = {Field(nt + 1, model.num_nodes()), std::vector<double>(static_cast<std::size_t>(nt) + 1)};
  sol.values = backward_pass(model, sol.rho(), sol.queue(), Mode::kMfg);
  sol.loading.traffic.u = sol.values.u;
  sol.status = Status::kConverged;
  return sol;
}

}  // namespace

TEST_CASE("single car on an empty link recovers the value function") {
  for (double dx : {0.1, 0.05, 0.025}) {
    const Solution sol = empty_solution(fixtures::single_link_model(dx));
    const CarTrajectory tr = simulate_car(sol, 0, 0.0);
    REQUIRE_FALSE(tr.censored());
    CHECK(*tr.arrival == Catch::Approx(1.0).margin(1e-9));
    const double err = std::abs(tr.cost() - sol.values.lambda(0, 0));
    CHECK(err <= 2.0 * dx);
  }
}

TEST_CASE("car trajectories are ordered and bounded") {
  const Solution sol = empty_solution(fixtures::single_link_model(0.1));
  const CarTrajectory tr = simulate_car(sol, 0, 0.5);
  REQUIRE(tr.events.size() >= 2);
  for (std::size_t i = 1; i < tr.events.size(); ++i) CHECK(tr.events[i].time > tr.events[i - 1].time);
  for (const auto& ev : tr.events) {
    CHECK(ev.position >= 0.0);
    CHECK(ev.position <= sol.grid().dx);
  }
  CHECK(tr.cost() >= 0.0);
  CHECK(tr.events.front().kind == EventKind::kDrive);
}

TEST_CASE("departing at the horizon costs the origin terminal value") {
  NetworkSpec s = fixtures::two_path({}, {}, {}, {}, 1.0);
  s.demand["1"] = DemandProfile({{0.0, 0.5, 0.5}});
  TerminalSpec ts;
  ts.nodal = {{"1", 2.0}, {"2", 1.0}, {"3", 1.0}};
  const Solution sol = empty_solution(Model(Network(s), CostSpec{}, Grid::make(0.5, 0.5, 3.0), ts));
  const CarTrajectory tr = simulate_car(sol, 0, 3.0);
  CHECK(tr.censored());
  CHECK(tr.events.empty());
  CHECK(tr.cost() == Catch::Approx(2.0));
}

TEST_CASE("simulate_car rejects bad inputs") {
  const Solution sol = empty_solution(fixtures::study_model(0.5));
  CHECK_THROWS_AS(simulate_car(sol, 1, 0.0), ConfigError);
  CHECK_THROWS_AS(simulate_car(sol, 0, -0.5), ConfigError);
  CHECK_THROWS_AS(simulate_car(sol, 0, 3.5), ConfigError);
}

TEST_CASE("sampled routing is reproducible per seed") {
  const Solution sol = empty_solution(fixtures::study_model(0.1));
  const auto a = simulate_car(sol, 0, 0.0, Routing::sampled(42));
  const auto b = simulate_car(sol, 0, 0.0, Routing::sampled(42));
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) CHECK(a.events[i].sublink == b.events[i].sublink);
  // on the symmetric network both paths cost the same
  CHECK(a.cost() == Catch::Approx(simulate_car(sol, 0, 0.0).cost()).margin(1e-9));
}

TEST_CASE("projection copies coarse cells onto 2x2 fine blocks") {
  const Model coarse_m = fixtures::study_model(0.5);
  const Model fine_m = fixtures::study_model(0.25);
  Solution coarse = empty_solution(coarse_m);
  // rho on link 1-2 is (a, b) per level
  const auto& chain = coarse_m.dnet.chain(0);
  for (int k = 0; k <= coarse_m.steps(); ++k) {
    coarse.loading.traffic.rho(k, static_cast<std::size_t>(chain[0])) = 0.1 * k;
    coarse.loading.traffic.rho(k, static_cast<std::size_t>(chain[1])) = 0.1 * k + 0.05;
  }
  const ProjectedFields p = project_solution(coarse, fine_m);
  const auto& fchain = fine_m.dnet.chain(0);
  REQUIRE(fchain.size() == 4);
  for (int k = 0; k <= fine_m.steps(); ++k) {
    const double a = 0.1 * (k / 2);
    const double want[] = {a, a, a + 0.05, a + 0.05};
    for (std::size_t pos = 0; pos < 4; ++pos) {
      CHECK(p.rho(k, static_cast<std::size_t>(fchain[pos])) == Catch::Approx(want[pos]));
    }
  }
  // turning ratios stay on sublinks leaving original nodes
  const auto e0 = static_cast<std::size_t>(fchain[0]);
  CHECK(p.beta(0, e0) == coarse.values.beta(0, static_cast<std::size_t>(chain[0])));
  CHECK(p.beta(1, e0) == coarse.values.beta(0, static_cast<std::size_t>(chain[0])));
  CHECK(p.beta(0, static_cast<std::size_t>(fchain[1])) == 1.0);

  CHECK_THROWS_AS(project_solution(coarse, fixtures::study_model(0.125)), GridError);
}

TEST_CASE("projection preserves constants and grid_error measures offsets") {
  const Model coarse_m = fixtures::study_model(0.5);
  const Model fine_m = fixtures::study_model(0.25);
  Solution coarse = empty_solution(coarse_m);
  coarse.loading.traffic.rho.fill(0.3);
  coarse.values.u.fill(0.7);
  coarse.values.V.fill(1.5);
  const ProjectedFields p = project_solution(coarse, fine_m);
  for (double v : p.rho.values()) CHECK(v == 0.3);
  for (double v : p.V.values()) CHECK(v == 1.5);

  Solution fine = empty_solution(fine_m);
  fine.loading.traffic.rho = p.rho;
  fine.values.u = p.u;
  fine.values.V = p.V;
  fine.values.beta = p.beta;
  GridErrors err = grid_error(fine, p);
  CHECK(err.rho == 0.0);
  CHECK(err.u == 0.0);
  CHECK(err.V == 0.0);
  CHECK(err.beta == 0.0);

  for (auto& v : fine.values.V.values()) v += 0.125;
  for (auto& v : fine.loading.traffic.rho.values()) v -= 0.25;
  err = grid_error(fine, p);
  CHECK(err.V == Catch::Approx(0.125));
  CHECK(err.rho == Catch::Approx(0.25));
}

TEST_CASE("log-log slope of a power law") {
  const std::vector<double> x{0.2, 0.1, 0.05};
  const std::vector<double> y{0.4, 0.1, 0.025};
  CHECK(loglog_slope(x, y) == Catch::Approx(2.0));
  CHECK(std::isnan(loglog_slope(x, std::vector<double>{0.0, 0.0, 0.0})));
}

TEST_CASE("metrics of an empty network and of a single occupied cell") {
  Solution sol = empty_solution(fixtures::study_model(0.5));
  Metrics mt = metrics(sol);
  for (double v : mt.average_velocity) CHECK(v == 0.0);
  for (int n : mt.occupied_links) CHECK(n == 0);

  sol.loading.traffic.rho(0, 0) = 0.5;
  sol.values.u(0, 0) = 0.8;
  mt = metrics(sol);
  CHECK(mt.average_velocity[0] == Catch::Approx(0.8));
  CHECK(mt.occupied_links[0] == 1);
  CHECK(mt.network_mass[0] == Catch::Approx(0.25));
  CHECK(mt.pi.size() == 4);
  CHECK(mt.queue[0].size() == static_cast<std::size_t>(sol.model->steps() + 1));
}
