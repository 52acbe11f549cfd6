#include <random>

#include "catch_amalgamated.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "mfgdta/forward.hpp"

using namespace mfgdta;

namespace {

Model random_load_model() {
  NetworkSpec s = fixtures::two_path({1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}, 0.35);
  s.links.push_back({"", "2", "3", 0.5, {1, 0, 0.1}});
  s.demand["1"] = DemandProfile({{0.0, 1.0, 0.9}});
  s.demand["2"] = DemandProfile({{0.5, 1.5, 0.3}});
  TerminalSpec ts;
  ts.nodal = {{"1", 0.0}, {"2", 0.0}, {"3", 0.0}};
  return Model(Network(s), CostSpec{}, Grid::make(0.1, 0.1, 5.0), ts);
}

}  // namespace

TEST_CASE("queue step worked cases") {
  auto r = queue_step(0.0, 0.5, 0.0, 1.0, 0.1);
  CHECK(r.queue == 0.0);
  CHECK(r.outflow == Catch::Approx(0.5));
  r = queue_step(0.0, 1.5, 0.5, 1.0, 0.1);
  CHECK(r.queue == Catch::Approx(0.1));
  CHECK(r.outflow == Catch::Approx(1.0));
  r = queue_step(0.05, 0.0, 0.0, 1.0, 0.1);
  CHECK(r.queue == 0.0);
  CHECK(r.outflow == Catch::Approx(0.5));
}

TEST_CASE("queue step equals the enumerated LCP on random inputs") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> q(0.0, 2.0), a(0.0, 3.0), m(0.05, 2.0), dt(0.01, 0.5);
  for (int i = 0; i < 10000; ++i) {
    const double qv = i % 5 == 0 ? 0.0 : q(rng);
    const double av = a(rng);
    const double mv = m(rng);
    const double dv = dt(rng);
    const auto got = queue_step(qv, av, 0.0, mv, dv);
    const auto want = oracles::queue_lcp(qv, av, mv, dv);
    REQUIRE(got.queue == Catch::Approx(want.queue).margin(1e-12));
    REQUIRE(got.outflow == Catch::Approx(want.outflow).margin(1e-9));
    // outflow never exceeds capacity nor what is available
    REQUIRE(got.outflow <= mv * (1.0 + 1e-12));
    REQUIRE(got.outflow <= av + qv / dv + 1e-9);
  }
}

TEST_CASE("split outflow is proportional and flags bad ratios") {
  std::vector<double> p(2);
  CHECK(split_outflow(1.0, std::vector<double>{0.7, 0.3}, p) == Catch::Approx(0.0).margin(1e-15));
  CHECK(p[0] == Catch::Approx(0.7));
  CHECK(p[1] == Catch::Approx(0.3));
  CHECK(split_outflow(0.0, std::vector<double>{0.2, 0.2}, p) == 0.0);
  CHECK(p[0] == 0.0);
  CHECK(split_outflow(0.8, std::vector<double>{0.6, 0.6}, p) == Catch::Approx(0.2));
}

TEST_CASE("continuity step rejects negative densities") {
  CHECK(continuity_step(0.2, 0.1, 0.3, 0.5) == Catch::Approx(0.1));
  CHECK_THROWS_AS(continuity_step(0.0, 0.0, 0.5, 1.0), SchemeError);
}

TEST_CASE("loading conserves mass exactly for arbitrary controls") {
  const Model m = random_load_model();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int nt = m.steps();
  Field speed(nt, m.num_sublinks());
  Field beta(nt, m.num_sublinks());
  for (auto& v : speed.values()) v = unit(rng);
  for (int k = 0; k < nt; ++k) {
    for (std::size_t i = 0; i < m.num_nodes(); ++i) {
      const auto& outs = m.dnet.out(static_cast<int>(i));
      double sum = 0.0;
      std::vector<double> w;
      for (std::size_t j = 0; j < outs.size(); ++j) {
        w.push_back(unit(rng) + 1e-3);
        sum += w.back();
      }
      for (std::size_t j = 0; j < outs.size(); ++j) beta(k, static_cast<std::size_t>(outs[j])) = w[j] / sum;
    }
  }
  const Loading ld = forward_pass(m, speed, beta, Mode::kMfg);
  CHECK(mass_balance_error(m, ld) <= 1e-10);
  for (double r : ld.traffic.rho.values()) CHECK(r >= 0.0);
  for (double q : ld.queues.queue.values()) CHECK(q >= 0.0);
  // auxiliary nodes never hold a queue
  for (std::size_t i = 0; i < m.num_nodes(); ++i) {
    if (!m.dnet.node(static_cast<int>(i)).auxiliary()) continue;
    for (int k = 0; k <= nt; ++k) CHECK(ld.queues.queue(k, i) == 0.0);
  }
}

TEST_CASE("LWR loading uses the Greenshields speed exactly") {
  const Model m = random_load_model();
  Field speed(m.steps(), m.num_sublinks(), 0.123);
  Field beta(m.steps(), m.num_sublinks(), 0.5);
  for (int k = 0; k < m.steps(); ++k) {
    for (std::size_t e = 0; e < m.num_sublinks(); ++e) {
      if (m.dnet.out(m.dnet.sublink(static_cast<int>(e)).from).size() == 1) beta(k, e) = 1.0;
    }
  }
  const Loading ld = forward_pass(m, speed, beta, Mode::kLwr);
  for (int k = 0; k < m.steps(); ++k) {
    for (std::size_t e = 0; e < m.num_sublinks(); ++e) {
      REQUIRE(ld.traffic.u(k, e) == lwr_speed(ld.traffic.rho(k, e), m.costs));
    }
  }
  CHECK(mass_balance_error(m, ld) <= 1e-10);
}
