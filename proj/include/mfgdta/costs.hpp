#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mfgdta/error.hpp"
#include "mfgdta/network.hpp"

namespace mfgdta {

/// Global cost and speed parameters shared by all links.
struct CostSpec {
  double c4 = 1.0;  // queuing cost per unit delay
  double u_min = 0.0;
  double u_max = 1.0;
  double rho_jam = 1.0;

  void validate() const {
    if (!(c4 >= 0.0)) throw ConfigError("c4 must be >= 0");
    if (!(u_min >= 0.0) || !(u_max > u_min)) throw ConfigError("speeds must satisfy 0 <= u_min < u_max");
    if (!(rho_jam > 0.0)) throw ConfigError("rho_jam must be > 0");
  }
};

/// c1/2 (u/u_max)^2 + c2 rho/rho_jam + c3.
inline double running_cost(double u, double rho, const CostCoefficients& c, const CostSpec& g) {
  const double v = u / g.u_max;
  return 0.5 * c.c1 * v * v + c.c2 * rho / g.rho_jam + c.c3;
}

inline double queuing_cost(double delay, const CostSpec& g) { return g.c4 * delay; }

/// Greenshields speed u_max (1 - rho/rho_jam), clamped to [u_min, u_max].
inline double lwr_speed(double rho, const CostSpec& g) {
  const double u = std::max(0.0, g.u_max * (1.0 - rho / g.rho_jam));
  return std::clamp(u, g.u_min, g.u_max);
}

/// Minimizer over [u_min, u_max] of u * grad + running_cost(u, rho).
/// The density term does not depend on u, so rho does not enter the argmin.
inline double optimal_speed(double grad, double /*rho*/, const CostCoefficients& c, const CostSpec& g) {
  const double unconstrained = -grad * g.u_max * g.u_max / c.c1;
  return std::clamp(unconstrained, g.u_min, g.u_max);
}

/// Terminal data on the refined network: V(., T) per sublink and pi(T) per
/// node (auxiliary nodes carry the value of their outgoing sublink).
struct TerminalCondition {
  std::vector<double> sublink_value;
  std::vector<double> node_value;
};

/// Affine terminal profile V_l(x, T) = offset + slope * x on one original link.
struct LinkTerminal {
  double offset = 0.0;
  double slope = 0.0;
};

namespace detail {

inline void finish_terminal(const DiscretizedNetwork& dnet, TerminalCondition& tc) {
  for (std::size_t i = 0; i < dnet.num_nodes(); ++i) {
    if (dnet.node(static_cast<int>(i)).auxiliary()) {
      tc.node_value[i] = tc.sublink_value[static_cast<std::size_t>(dnet.out(static_cast<int>(i)).front())];
    }
  }
  for (double v : tc.sublink_value) {
    if (!(v >= 0.0)) throw ConfigError("terminal costs must be nonnegative");
  }
  for (double v : tc.node_value) {
    if (!(v >= 0.0)) throw ConfigError("terminal costs must be nonnegative");
  }
}

}  // namespace detail

/// Sublink terminal values by linear interpolation, at sublink starts, between
/// the nodal terminal values at the ends of the parent link. The destination
/// is pinned to 0.
inline TerminalCondition terminal_from_nodal(const std::map<std::string, double>& nodal,
                                             const DiscretizedNetwork& dnet) {
  const Network& net = dnet.network();
  std::vector<double> pi(net.num_nodes(), 0.0);
  for (std::size_t i = 0; i < net.num_nodes(); ++i) {
    if (static_cast<int>(i) == net.destination()) continue;
    auto it = nodal.find(net.node_name(static_cast<int>(i)));
    if (it == nodal.end()) throw ConfigError("missing terminal value for node " + net.node_name(static_cast<int>(i)));
    pi[i] = it->second;
  }
  TerminalCondition tc;
  tc.sublink_value.assign(dnet.num_sublinks(), 0.0);
  tc.node_value.assign(dnet.num_nodes(), 0.0);
  for (std::size_t i = 0; i < net.num_nodes(); ++i) tc.node_value[i] = pi[i];
  for (std::size_t l = 0; l < net.num_links(); ++l) {
    const Link& link = net.link(static_cast<int>(l));
    const auto& chain = dnet.chain(static_cast<int>(l));
    const double a = pi[static_cast<std::size_t>(link.from)];
    const double b = pi[static_cast<std::size_t>(link.to)];
    const double n = static_cast<double>(chain.size());
    for (std::size_t pos = 0; pos < chain.size(); ++pos) {
      tc.sublink_value[static_cast<std::size_t>(chain[pos])] = a + (b - a) * static_cast<double>(pos) / n;
    }
  }
  detail::finish_terminal(dnet, tc);
  return tc;
}

/// Terminal values from explicit nodal values and per-link affine profiles.
/// Links without a profile fall back to nodal interpolation.
inline TerminalCondition terminal_from_profiles(const std::map<std::string, double>& nodal,
                                                const std::map<std::string, LinkTerminal>& profiles,
                                                const DiscretizedNetwork& dnet) {
  TerminalCondition tc = terminal_from_nodal(nodal, dnet);
  const Network& net = dnet.network();
  for (const auto& [id, prof] : profiles) {
    auto l = net.find_link(id);
    if (!l) throw ConfigError("terminal profile for unknown link " + id);
    const auto& chain = dnet.chain(*l);
    for (std::size_t pos = 0; pos < chain.size(); ++pos) {
      tc.sublink_value[static_cast<std::size_t>(chain[pos])] = prof.offset + prof.slope * static_cast<double>(pos) * dnet.dx();
    }
  }
  detail::finish_terminal(dnet, tc);
  return tc;
}

}  // namespace mfgdta
