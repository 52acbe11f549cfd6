#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfgdta/costs.hpp"
#include "mfgdta/error.hpp"
#include "mfgdta/field.hpp"
#include "mfgdta/model.hpp"

namespace mfgdta {

/// Forward unknowns on every sublink. rho has levels 0..Nt; u, q, p have 0..Nt-1.
struct TrafficField {
  Field rho;
  Field u;
  Field q;  // exit flow
  Field p;  // entry flow
};

/// Node queues, levels 0..Nt, plus cumulative arrivals at the destination.
struct QueueState {
  Field queue;
  std::vector<double> arrived;  // vehicles absorbed by the destination before t_k
};

struct Loading {
  TrafficField traffic;
  QueueState queues;
};

struct QueueUpdate {
  double queue = 0.0;    // Q^{k+1}
  double outflow = 0.0;  // total node outflow over [t_k, t_{k+1})
};

/// Backward-Euler point queue: the unique solution of
/// 0 <= (Q1 - Q)/dt + M - inflow - demand  _|_  Q1 >= 0.
inline QueueUpdate queue_step(double queue, double inflow, double demand, double capacity, double dt) {
  const double arriving = inflow + demand;
  const double candidate = queue + dt * (arriving - capacity);
  if (candidate > 0.0) return {candidate, capacity};
  return {0.0, arriving + queue / dt};
}

/// p_j = beta_j * outflow. Returns |sum beta - 1| when the outflow is positive,
/// 0 otherwise, so callers can flag inconsistent turning ratios.
inline double split_outflow(double outflow, std::span<const double> beta, std::span<double> entry) {
  double sum = 0.0;
  for (std::size_t j = 0; j < beta.size(); ++j) {
    entry[j] = beta[j] * outflow;
    sum += beta[j];
  }
  return outflow > 0.0 ? std::abs(sum - 1.0) : 0.0;
}

/// rho^{k+1} = rho^k + dt/dx (p - q) on one sublink.
inline double continuity_step(double rho, double entry, double exit, double dt_over_dx) {
  const double next = rho + dt_over_dx * (entry - exit);
  if (next < -1e-12) throw SchemeError("negative density " + std::to_string(next) + " in continuity update");
  return next;
}

/// Dynamic network loading. In MFG mode `speed` supplies u^k for every
/// sublink; in LWR mode u^k = U(rho^k) is computed on the fly and `speed` is
/// ignored. `beta` holds the turning ratio of each sublink at its start node.
inline Loading forward_pass(const Model& model, const Field& speed, const Field& beta, Mode mode) {
  const auto& dnet = model.dnet;
  const int nt = model.steps();
  const std::size_t ns = dnet.num_sublinks();
  const std::size_t nn = dnet.num_nodes();
  const double ratio = model.grid.dt / model.grid.dx;
  const double dt = model.grid.dt;
  const int dest = dnet.destination();

  Loading out;
  auto& tf = out.traffic;
  tf.rho = Field(nt + 1, ns);
  tf.u = Field(nt, ns);
  tf.q = Field(nt, ns);
  tf.p = Field(nt, ns);
  out.queues.queue = Field(nt + 1, nn);
  out.queues.arrived.assign(static_cast<std::size_t>(nt) + 1, 0.0);

  std::vector<double> outflow(nn, 0.0);
  for (int k = 0; k < nt; ++k) {
    auto rho = tf.rho.layer(k);
    auto u = tf.u.layer(k);
    auto q = tf.q.layer(k);
    auto p = tf.p.layer(k);
    for (std::size_t e = 0; e < ns; ++e) {
      u[e] = mode == Mode::kLwr ? lwr_speed(rho[e], model.costs) : speed(k, e);
      q[e] = rho[e] * u[e];
    }
    double arriving = 0.0;
    for (std::size_t i = 0; i < nn; ++i) {
      double inflow = 0.0;
      for (int e : dnet.in(static_cast<int>(i))) inflow += q[static_cast<std::size_t>(e)];
      if (static_cast<int>(i) == dest) {
        arriving = inflow;
        outflow[i] = 0.0;
        continue;
      }
      const DNode& node = dnet.node(static_cast<int>(i));
      if (node.auxiliary()) {
        outflow[i] = inflow;
      } else {
        const auto upd = queue_step(out.queues.queue(k, i), inflow, model.demand(k, i), node.capacity, dt);
        out.queues.queue(k + 1, i) = upd.queue;
        outflow[i] = upd.outflow;
      }
    }
    for (std::size_t e = 0; e < ns; ++e) {
      p[e] = beta(k, e) * outflow[static_cast<std::size_t>(dnet.sublink(static_cast<int>(e)).from)];
    }
    auto next = tf.rho.layer(k + 1);
    for (std::size_t e = 0; e < ns; ++e) next[e] = continuity_step(rho[e], p[e], q[e], ratio);
    out.queues.arrived[static_cast<std::size_t>(k) + 1] = out.queues.arrived[static_cast<std::size_t>(k)] + dt * arriving;
  }
  return out;
}

/// Vehicles on links and in queues at level k.
inline double network_mass(const Model& model, const Loading& ld, int k) {
  double m = 0.0;
  for (double r : ld.traffic.rho.layer(k)) m += r * model.grid.dx;
  for (double qv : ld.queues.queue.layer(k)) m += qv;
  return m;
}

/// Worst relative discrete mass-balance defect over all levels.
inline double mass_balance_error(const Model& model, const Loading& ld) {
  double worst = 0.0;
  double loaded = 0.0;
  const double total = model.cumulative_demand(model.steps());
  for (int k = 0; k <= model.steps(); ++k) {
    if (k > 0) {
      for (double d : model.demand.layer(k - 1)) loaded += d * model.grid.dt;
    }
    const double lhs = network_mass(model, ld, k) + ld.queues.arrived[static_cast<std::size_t>(k)];
    const double scale = std::max(total, 1e-300);
    worst = std::max(worst, std::abs(lhs - loaded) / scale);
  }
  return total > 0.0 ? worst : 0.0;
}

}  // namespace mfgdta
