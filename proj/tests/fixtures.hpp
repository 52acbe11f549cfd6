#pragma once

#include <memory>
#include <string>

#include "mfgdta/model.hpp"
#include "mfgdta/network.hpp"

namespace fixtures {

using namespace mfgdta;

/// Four-link network 1->{2,3}->4 with one coefficient set per link.
inline NetworkSpec two_path(CostCoefficients c12, CostCoefficients c13, CostCoefficients c24, CostCoefficients c34,
                            double capacity) {
  NetworkSpec s;
  s.nodes = {"1", "2", "3", "4"};
  s.links = {{"", "1", "2", 1.0, c12}, {"", "1", "3", 1.0, c13}, {"", "2", "4", 1.0, c24}, {"", "3", "4", 1.0, c34}};
  s.capacities = {{"1", capacity}, {"2", capacity}, {"3", capacity}};
  s.destination = "4";
  return s;
}

/// Symmetric two-path problem of the convergence study.
inline Model study_model(double dx) {
  const CostCoefficients c{1.0, 1.0, 0.5};
  NetworkSpec s = two_path(c, c, c, c, 1.0);
  s.demand["1"] = DemandProfile({{0.0, 0.5, 0.5}});
  TerminalSpec ts;
  ts.nodal = {{"1", 0.0}, {"2", 0.0}, {"3", 0.0}};
  return Model(Network(s), CostSpec{}, Grid::make(dx, dx, 3.0), ts);
}

/// Single link 1->2 of length 1 with a heavy terminal penalty, so the first
/// car drives through at the free-flow optimum u = sqrt(2 c3 / c1).
inline Model single_link_model(double dx, double c3 = 0.5, double horizon = 4.0) {
  NetworkSpec s;
  s.nodes = {"1", "2"};
  s.links = {{"", "1", "2", 1.0, {1.0, 0.0, c3}}};
  s.capacities = {{"1", 1.0}};
  s.destination = "2";
  s.demand["1"] = DemandProfile({{0.0, dx, 1e-6}});
  TerminalSpec ts;
  ts.nodal = {{"1", 10.0}};
  ts.profiles = {{"1-2", {10.0, -10.0}}};
  return Model(Network(s), CostSpec{}, Grid::make(dx, dx, horizon), ts);
}

}  // namespace fixtures
