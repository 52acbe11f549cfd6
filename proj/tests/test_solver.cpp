#include <random>

#include "catch_amalgamated.hpp"
#include "fixtures.hpp"
#include "mfgdta/solver.hpp"

using namespace mfgdta;

namespace {

const Solution& study_solution(Mode mode) {
  static std::map<Mode, Solution> cache;
  auto it = cache.find(mode);
  if (it == cache.end()) {
    SolverConfig cfg;
    cfg.mode = mode;
    it = cache.emplace(mode, solve_mfe(fixtures::study_model(0.1), cfg)).first;
  }
  return it->second;
}

}  // namespace

TEST_CASE("relaxed Jacobian matches central differences") {
  NetworkSpec s = fixtures::two_path({1, 1, 1}, {1, 2, 0.5}, {2, 1, 1}, {1, 1, 1}, 0.4);
  s.demand["1"] = DemandProfile({{0.0, 1.0, 0.6}});
  TerminalSpec ts;
  ts.nodal = {{"1", 1.0}, {"2", 0.5}, {"3", 0.5}};
  const Model m(Network(s), CostSpec{}, Grid::make(0.25, 0.25, 3.0), ts);

  for (Mode mode : {Mode::kMfg, Mode::kLwr}) {
    Field frozen(m.steps() + 1, m.num_nodes());
    RelaxedSystem sys(m, mode, frozen);
    sys.set_smoothing(1e-2);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unit(0.05, 0.6);
    const Field zero_rho(m.steps() + 1, m.num_sublinks());
    ValueField vf = backward_pass(m, zero_rho, frozen, mode);
    Field rho(m.steps() + 1, m.num_sublinks());
    for (auto& v : rho.values()) v = unit(rng);
    Field queue(m.steps() + 1, m.num_nodes());
    for (auto& v : queue.values()) v = 0.3 * unit(rng);
    Field beta(m.steps(), m.num_sublinks(), 0.5);
    const Eigen::VectorXd x = sys.pack(rho, vf.V, queue, beta, vf.pi);

    Eigen::VectorXd r;
    RelaxedSystem::Matrix jac;
    sys.jacobian(x, r, jac);
    const Eigen::MatrixXd dense(jac);
    double worst = 0.0;
    for (Eigen::Index c = 0; c < x.size(); ++c) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[c]));
      Eigen::VectorXd xp = x, xm = x, rp, rm;
      xp[c] += h;
      xm[c] -= h;
      sys.residual(xp, rp);
      sys.residual(xm, rm);
      const Eigen::VectorXd fd = (rp - rm) / (2.0 * h);
      worst = std::max(worst, (fd - dense.col(c)).cwiseAbs().maxCoeff());
    }
    INFO("mode " << to_string(mode));
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("symmetric two-path equilibrium") {
  const Solution& sol = study_solution(Mode::kMfg);
  REQUIRE(sol.status == Status::kConverged);
  const auto& r = sol.residuals;
  CHECK(r.max_equation_defect() <= 10.0 * 1e-6);
  CHECK(r.mass_balance_error <= 1e-8);
  CHECK(r.outer_error_history.back() <= 1e-6);

  const Model& m = *sol.model;
  const auto e12 = static_cast<std::size_t>(m.dnet.chain(0).front());
  const auto e13 = static_cast<std::size_t>(m.dnet.chain(1).front());
  for (int k = 0; k < m.steps(); ++k) {
    CHECK(sol.values.beta(k, e12) == Catch::Approx(0.5).margin(1e-6));
    CHECK(sol.values.V(k, e12) == Catch::Approx(sol.values.V(k, e13)).margin(1e-6));
  }
  // all demand is cleared through node 1 without a queue (0.5 < M = 1)
  for (int k = 0; k <= m.steps(); ++k) CHECK(sol.queue()(k, 0) == 0.0);
}

TEST_CASE("reloading the equilibrium controls reproduces the solution") {
  const Solution& sol = study_solution(Mode::kMfg);
  const Model& m = *sol.model;
  Field beta = sol.values.beta;
  // the solver's turning ratios live in the loading; rebuild them from p
  for (int k = 0; k < m.steps(); ++k) {
    for (std::size_t i = 0; i < m.num_nodes(); ++i) {
      const auto& outs = m.dnet.out(static_cast<int>(i));
      double total = 0.0;
      for (int e : outs) total += sol.loading.traffic.p(k, static_cast<std::size_t>(e));
      if (total > 1e-12) {
        for (int e : outs) beta(k, static_cast<std::size_t>(e)) = sol.loading.traffic.p(k, static_cast<std::size_t>(e)) / total;
      }
    }
  }
  const Loading again = forward_pass(m, sol.values.u, beta, Mode::kMfg);
  double worst = 0.0;
  const auto a = again.traffic.rho.values();
  const auto b = sol.rho().values();
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst <= 1e-8);
}

TEST_CASE("LWR equilibrium drives at the Greenshields speed") {
  const Solution& sol = study_solution(Mode::kLwr);
  REQUIRE(sol.status == Status::kConverged);
  const Model& m = *sol.model;
  for (int k = 0; k < m.steps(); ++k) {
    for (std::size_t e = 0; e < m.num_sublinks(); ++e) {
      REQUIRE(sol.values.u(k, e) == lwr_speed(sol.rho()(k, e), m.costs));
    }
  }
}

TEST_CASE("residual check detects perturbed solutions") {
  const Solution& good = study_solution(Mode::kMfg);
  const Model& m = *good.model;
  const int k = 3;

  Solution bad = good;
  const auto e = static_cast<std::size_t>(m.dnet.chain(0).front());
  bad.values.u(k, e) = std::max(0.0, bad.values.u(k, e) - 0.3);
  CHECK(verify_residuals(bad).hjb_residual >= 1e-3);

  bad = good;
  bad.loading.traffic.rho(k + 1, e) += 0.05;
  CHECK(verify_residuals(bad).continuity_residual >= 1e-3);

  bad = good;
  bad.loading.queues.queue(k + 1, 0) += 0.05;
  CHECK(verify_residuals(bad).queue_lcp_residual >= 1e-3);

  bad = good;
  bad.values.pi(k, 0) -= 0.05;
  CHECK(verify_residuals(bad).route_comp_residual >= 1e-3);
}

TEST_CASE("invalid solver settings are rejected") {
  SolverConfig cfg;
  cfg.tol_inner = 0.0;
  CHECK_THROWS_AS(solve_mfe(fixtures::study_model(0.5), cfg), ConfigError);
}
