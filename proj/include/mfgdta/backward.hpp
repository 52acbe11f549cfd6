#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mfgdta/costs.hpp"
#include "mfgdta/field.hpp"
#include "mfgdta/model.hpp"

namespace mfgdta {

/// Backward unknowns. V has levels 0..Nt per sublink, u and beta 0..Nt-1 per
/// sublink; pi and lambda have levels 0..Nt per node (0 at the destination).
struct ValueField {
  Field V;
  Field u;
  Field pi;
  Field lambda;
  Field beta;  // best-response turning ratios of each sublink at its start node
};

struct LinkStep {
  double value = 0.0;  // V^k
  double speed = 0.0;  // u^k
};

/// One upwind step of the link HJB recursion. In LWR mode the speed is the
/// equilibrium speed U(rho) instead of the optimal control.
inline LinkStep hjb_link_step(double value_next, double lambda_down_next, double rho, const CostCoefficients& c,
                              const CostSpec& g, const Grid& grid, Mode mode = Mode::kMfg) {
  const double grad = (lambda_down_next - value_next) / grid.dx;
  const double u = mode == Mode::kMfg ? optimal_speed(grad, rho, c, g) : lwr_speed(rho, g);
  return {value_next + grid.dt * (u * grad + running_cost(u, rho, c, g)), u};
}

namespace detail {

/// `weight_queue` places the interpolation point, `cost_queue` prices the
/// delay; the two coincide except inside the queue fixed point.
template <class PiAt>
double nodal_cost_impl(PiAt&& pi_at, double weight_queue, double cost_queue, double capacity, int k, const Grid& grid,
                       const CostSpec& g) {
  const int nt = grid.steps;
  const bool uncapped = std::isinf(capacity);
  const double delay = uncapped ? 0.0 : weight_queue / capacity;
  const double at = static_cast<double>(k) + delay / grid.dt;
  double value;
  if (at >= static_cast<double>(nt)) {
    value = pi_at(nt);
  } else {
    const int base = std::min(static_cast<int>(std::floor(at)), nt - 1);
    const double w = at - static_cast<double>(base);
    value = (1.0 - w) * pi_at(base) + w * pi_at(base + 1);
  }
  const double wait = uncapped ? 0.0 : cost_queue / capacity;
  return value + queuing_cost(std::min(wait, grid.horizon - k * grid.dt), g);
}

}  // namespace detail

/// Cost of entering the queue at a node at level k: pi interpolated at the
/// exit index k + Q/(M dt) (pi(Nt) beyond the horizon) plus the queuing cost
/// of the capped delay. `pi` is the node's full series over levels 0..Nt.
inline double nodal_cost(std::span<const double> pi, double queue, double capacity, int k, const Grid& grid,
                         const CostSpec& g) {
  return detail::nodal_cost_impl([&](int m) { return pi[static_cast<std::size_t>(m)]; }, queue, queue, capacity, k,
                                 grid, g);
}

inline double tie_tolerance(double pi) { return 1e-9 * (1.0 + std::abs(pi)); }

/// pi = min_j V_j; beta uniform over the (tolerance-)minimizers. Returns pi.
inline double route_best_response(std::span<const double> values, std::span<double> beta) {
  double pi = values[0];
  for (double v : values) pi = std::min(pi, v);
  const double tol = tie_tolerance(pi);
  int ties = 0;
  for (double v : values) ties += v <= pi + tol ? 1 : 0;
  for (std::size_t j = 0; j < values.size(); ++j) beta[j] = values[j] <= pi + tol ? 1.0 / ties : 0.0;
  return pi;
}

namespace detail {

/// lambda at every node for level k, given pi at levels >= k. `queue` places
/// the interpolation point; `live` (defaults to `queue`) prices the delay.
inline void fill_lambda(const Model& model, const Field& queue, ValueField& vf, int k, const Field* live = nullptr) {
  const auto& dnet = model.dnet;
  const Field& cost_queue = live != nullptr ? *live : queue;
  for (std::size_t i = 0; i < dnet.num_nodes(); ++i) {
    if (static_cast<int>(i) == dnet.destination()) {
      vf.lambda(k, i) = 0.0;
      continue;
    }
    const DNode& node = dnet.node(static_cast<int>(i));
    if (node.auxiliary()) {
      vf.lambda(k, i) = vf.pi(k, i);
      continue;
    }
    vf.lambda(k, i) = nodal_cost_impl([&](int m) { return vf.pi(m, i); }, queue(k, i), cost_queue(k, i), node.capacity,
                                      k, model.grid, model.costs);
  }
}

}  // namespace detail

/// Backward sweep of the discrete HJB system for given densities and queues.
/// Per level k = Nt-1..0: lambda^{k+1} at every node, then V^k and u^k on
/// every sublink, then pi^k and the best-response beta^k at every node.
/// With `live` given, `queue` only places the nodal cost interpolation and
/// `live` prices the queuing delay (the relaxed system of the queue fixed point).
inline ValueField backward_pass(const Model& model, const Field& rho, const Field& queue, Mode mode,
                                const Field* live = nullptr) {
  const auto& dnet = model.dnet;
  const int nt = model.steps();
  const std::size_t ns = dnet.num_sublinks();
  const std::size_t nn = dnet.num_nodes();
  const int dest = dnet.destination();

  ValueField vf;
  vf.V = Field(nt + 1, ns);
  vf.u = Field(nt, ns);
  vf.pi = Field(nt + 1, nn);
  vf.lambda = Field(nt + 1, nn);
  vf.beta = Field(nt, ns);

  for (std::size_t e = 0; e < ns; ++e) vf.V(nt, e) = model.terminal.sublink_value[e];
  for (std::size_t i = 0; i < nn; ++i) {
    vf.pi(nt, i) = static_cast<int>(i) == dest ? 0.0 : model.terminal.node_value[i];
  }
  detail::fill_lambda(model, queue, vf, nt, live);

  std::vector<double> row, share;
  for (int k = nt - 1; k >= 0; --k) {
    for (std::size_t e = 0; e < ns; ++e) {
      const Sublink& s = dnet.sublink(static_cast<int>(e));
      const auto step = hjb_link_step(vf.V(k + 1, e), vf.lambda(k + 1, static_cast<std::size_t>(s.to)), rho(k, e),
                                      s.cost, model.costs, model.grid, mode);
      vf.V(k, e) = step.value;
      vf.u(k, e) = step.speed;
    }
    for (std::size_t i = 0; i < nn; ++i) {
      const auto& outs = dnet.out(static_cast<int>(i));
      if (static_cast<int>(i) == dest || outs.empty()) {
        vf.pi(k, i) = 0.0;
        for (int e : outs) vf.beta(k, static_cast<std::size_t>(e)) = 0.0;
        continue;
      }
      row.resize(outs.size());
      share.resize(outs.size());
      for (std::size_t j = 0; j < outs.size(); ++j) row[j] = vf.V(k, static_cast<std::size_t>(outs[j]));
      vf.pi(k, i) = route_best_response(row, share);
      for (std::size_t j = 0; j < outs.size(); ++j) vf.beta(k, static_cast<std::size_t>(outs[j])) = share[j];
    }
    detail::fill_lambda(model, queue, vf, k, live);
  }
  return vf;
}

}  // namespace mfgdta
