#pragma once

#include <map>
#include <string>
#include <utility>

#include "mfgdta/costs.hpp"
#include "mfgdta/field.hpp"
#include "mfgdta/network.hpp"

namespace mfgdta {

enum class Mode { kMfg, kLwr };

inline const char* to_string(Mode m) { return m == Mode::kMfg ? "mfg" : "lwr"; }

/// Terminal data as given by a config: nodal values plus optional per-link profiles.
struct TerminalSpec {
  std::map<std::string, double> nodal;
  std::map<std::string, LinkTerminal> profiles;
};

/// One fully specified discrete problem: refined network, costs, mesh,
/// sampled demand and terminal data.
struct Model {
  DiscretizedNetwork dnet;
  CostSpec costs;
  Grid grid;
  TerminalCondition terminal;
  Field demand;  // d_i^k = d_i(t_k), levels 0..Nt, width = refined node count

  Model(const Network& net, const CostSpec& c, const Grid& g, const TerminalSpec& ts)
      : dnet(discretize(net, g, (c.validate(), c.u_max))), costs(c), grid(g) {
    terminal = ts.profiles.empty() ? terminal_from_nodal(ts.nodal, dnet)
                                   : terminal_from_profiles(ts.nodal, ts.profiles, dnet);
    demand = Field(g.steps + 1, dnet.num_nodes());
    const double slack = 1e-9 * g.dt;
    for (int o : net.origins()) {
      for (int k = 0; k <= g.steps; ++k) {
        demand(k, static_cast<std::size_t>(o)) = net.demand(o).rate_at(g.time(k), slack);
      }
    }
  }

  int steps() const { return grid.steps; }
  std::size_t num_sublinks() const { return dnet.num_sublinks(); }
  std::size_t num_nodes() const { return dnet.num_nodes(); }
  int destination() const { return dnet.destination(); }

  /// Vehicles loaded by the sampled demand over steps [0, k).
  double cumulative_demand(int k) const {
    double sum = 0.0;
    for (int m = 0; m < k; ++m) {
      for (double d : demand.layer(m)) sum += d;
    }
    return sum * grid.dt;
  }
};

}  // namespace mfgdta
