#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfgdta/error.hpp"
#include "mfgdta/field.hpp"
#include "mfgdta/solver.hpp"

namespace mfgdta {

// ---- single-car oracle -----------------------------------------------------

enum class EventKind { kDrive, kEnqueue, kDequeue, kArrive };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::kDrive: return "drive";
    case EventKind::kEnqueue: return "enqueue";
    case EventKind::kDequeue: return "dequeue";
    case EventKind::kArrive: return "arrive";
  }
  return "?";
}

/// `sublink` is set for drive/dequeue events (the sublink being entered),
/// `node` for enqueue/arrive.
struct CarEvent {
  double time = 0.0;
  double position = 0.0;  // along the sublink, 0 at nodes
  int sublink = -1;
  int node = -1;
  EventKind kind = EventKind::kDrive;
};

struct CarTrajectory {
  std::vector<CarEvent> events;
  double running_cost = 0.0;
  double queuing_cost = 0.0;
  double terminal_cost = 0.0;
  int origin = -1;
  double t0 = 0.0;
  std::optional<double> arrival;  // empty when censored at T

  double cost() const { return running_cost + queuing_cost + terminal_cost; }
  bool censored() const { return !arrival.has_value(); }
};

/// Deterministic routing follows the cheapest outgoing sublink (the support
/// of an equilibrium beta); sampled routing draws from beta.
struct Routing {
  bool sample = false;
  std::uint64_t seed = 0;

  static Routing argmin() { return {}; }
  static Routing sampled(std::uint64_t seed) { return {true, seed}; }
};

namespace detail {

inline int step_at(double t, const Grid& g) {
  return std::clamp(static_cast<int>(std::floor(t / g.dt + 1e-9)), 0, g.steps);
}

/// Q_i(t) by linear interpolation between time levels.
inline double queue_at(const Field& queue, int node, double t, const Grid& g) {
  const double s = std::clamp(t / g.dt, 0.0, static_cast<double>(g.steps));
  const int k = std::min(static_cast<int>(std::floor(s)), g.steps - 1);
  const double w = s - k;
  const auto i = static_cast<std::size_t>(node);
  return (1.0 - w) * queue(k, i) + w * queue(k + 1, i);
}

}  // namespace detail

/// Drives one car through a solved equilibrium: piecewise-constant speeds of
/// the occupied cell, exact waits Q/M at nodes, and the running, queuing and
/// terminal costs of a single car. The integration is event driven, stopping
/// at cell ends and time-step boundaries.
inline CarTrajectory simulate_car(const Solution& sol, int origin, double t0, Routing routing = Routing::argmin()) {
  const Model& model = *sol.model;
  const auto& dnet = model.dnet;
  const Grid& g = model.grid;
  const CostSpec& costs = model.costs;
  const auto& origins = dnet.network().origins();
  if (std::find(origins.begin(), origins.end(), origin) == origins.end()) {
    throw ConfigError("node " + std::to_string(origin) + " is not an origin");
  }
  if (!(t0 >= 0.0) || t0 > g.horizon) throw ConfigError("departure time outside [0, T]");
  const double eps = 1e-9 * g.dt;

  CarTrajectory tr;
  tr.origin = origin;
  tr.t0 = t0;
  std::mt19937_64 rng(routing.seed);
  double t = t0;
  int node = origin;

  while (true) {
    if (node == dnet.destination()) {
      tr.events.push_back({t, 0.0, -1, node, EventKind::kArrive});
      tr.arrival = t;
      return tr;
    }
    if (t >= g.horizon - eps) {
      tr.terminal_cost = model.terminal.node_value[static_cast<std::size_t>(node)];
      return tr;
    }
    const DNode& dn = dnet.node(node);
    bool waited = false;
    if (!dn.auxiliary()) {
      const double wait = std::min(detail::queue_at(sol.queue(), node, t, g) / dn.capacity, g.horizon - t);
      if (wait > eps) {
        tr.events.push_back({t, 0.0, -1, node, EventKind::kEnqueue});
        tr.queuing_cost += queuing_cost(wait, costs);
        t += wait;
        waited = true;
        if (t >= g.horizon - eps) {
          tr.terminal_cost = model.terminal.node_value[static_cast<std::size_t>(node)];
          return tr;
        }
      }
    }

    // choose the next sublink at the departure step
    const int k = std::min(detail::step_at(t, g), g.steps - 1);
    const auto& outs = dnet.out(node);
    int e = outs.front();
    if (outs.size() > 1) {
      if (routing.sample) {
        std::vector<double> w;
        for (int o : outs) w.push_back(std::max(0.0, sol.values.beta(k, static_cast<std::size_t>(o))));
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        e = outs[pick(rng)];
      } else {
        double best = std::numeric_limits<double>::infinity();
        for (int o : outs) {
          const double v = sol.values.V(k, static_cast<std::size_t>(o));
          if (v < best) {
            best = v;
            e = o;
          }
        }
      }
    }
    tr.events.push_back({t, 0.0, e, -1, waited ? EventKind::kDequeue : EventKind::kDrive});

    // traverse the cell
    const auto& sl = dnet.sublink(e);
    double pos = 0.0;
    while (pos < g.dx - 1e-12 && t < g.horizon - eps) {
      const int kk = std::min(detail::step_at(t, g), g.steps - 1);
      const double u = sol.values.u(kk, static_cast<std::size_t>(e));
      const double rho = sol.rho()(kk, static_cast<std::size_t>(e));
      double span = std::max((kk + 1) * g.dt - t, 0.0);
      if (span <= eps) span = g.dt;  // t sits on a boundary within rounding
      span = std::min(span, g.horizon - t);
      if (u > 0.0) span = std::min(span, (g.dx - pos) / u);
      tr.running_cost += span * running_cost(u, rho, sl.cost, costs);
      pos += u * span;
      t += span;
    }
    if (pos < g.dx - 1e-12) {
      tr.terminal_cost = model.terminal.sublink_value[static_cast<std::size_t>(e)];
      return tr;
    }
    node = sl.to;
  }
}

// ---- multigrid comparison --------------------------------------------------

/// Coarse fields copied onto a grid refined by 2 in space and time.
struct ProjectedFields {
  Field rho;
  Field u;
  Field V;
  Field beta;
};

/// Piecewise-constant projection: each coarse cell value fills its 2x2 fine
/// descendants. A turning ratio moves to the fine sublink starting at the same
/// node; fine sublinks starting at new auxiliary nodes get 1.
inline ProjectedFields project_solution(const Solution& coarse, const Model& fine) {
  const Model& cm = *coarse.model;
  const auto& cg = cm.grid;
  const auto& fg = fine.grid;
  const auto same = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
  if (!same(fg.dx * 2.0, cg.dx) || !same(fg.dt * 2.0, cg.dt) || fg.steps != 2 * cg.steps ||
      fine.dnet.network().num_links() != cm.dnet.network().num_links()) {
    throw GridError("fine grid is not the coarse grid refined by 2");
  }
  const int nt = fg.steps;
  const std::size_t ns = fine.num_sublinks();
  ProjectedFields p{Field(nt + 1, ns), Field(nt, ns), Field(nt + 1, ns), Field(nt, ns)};
  for (std::size_t e = 0; e < ns; ++e) {
    const Sublink& s = fine.dnet.sublink(static_cast<int>(e));
    const auto& chain = cm.dnet.chain(s.parent);
    if (static_cast<std::size_t>(s.position / 2) >= chain.size()) throw GridError("link refinement mismatch");
    const auto c = static_cast<std::size_t>(chain[static_cast<std::size_t>(s.position / 2)]);
    const bool starts_at_coarse_node = s.position % 2 == 0;
    for (int k = 0; k <= nt; ++k) {
      p.rho(k, e) = coarse.rho()(k / 2, c);
      p.V(k, e) = coarse.values.V(k / 2, c);
    }
    for (int k = 0; k < nt; ++k) {
      p.u(k, e) = coarse.values.u(k / 2, c);
      p.beta(k, e) = starts_at_coarse_node ? coarse.values.beta(k / 2, c) : 1.0;
    }
  }
  return p;
}

struct GridErrors {
  double rho = 0.0;
  double u = 0.0;
  double V = 0.0;
  double beta = 0.0;
};

/// Mean absolute differences over all cells; beta is compared on sublinks
/// leaving original nodes, where routing happens.
inline GridErrors grid_error(const Solution& fine, const ProjectedFields& p) {
  const auto mae = [](const Field& a, const Field& b) {
    if (a.levels() != b.levels() || a.width() != b.width()) throw GridError("field shapes differ");
    double sum = 0.0;
    const auto x = a.values();
    const auto y = b.values();
    for (std::size_t i = 0; i < x.size(); ++i) sum += std::abs(x[i] - y[i]);
    return x.empty() ? 0.0 : sum / static_cast<double>(x.size());
  };
  GridErrors err;
  err.rho = mae(fine.rho(), p.rho);
  err.u = mae(fine.values.u, p.u);
  err.V = mae(fine.values.V, p.V);

  const auto& dnet = fine.model->dnet;
  const Field& b = fine.values.beta;
  if (b.levels() != p.beta.levels() || b.width() != p.beta.width()) throw GridError("field shapes differ");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t e = 0; e < dnet.num_sublinks(); ++e) {
    if (dnet.node(dnet.sublink(static_cast<int>(e)).from).auxiliary()) continue;
    for (int k = 0; k < b.levels(); ++k) {
      sum += std::abs(b(k, e) - p.beta(k, e));
      ++count;
    }
  }
  err.beta = count ? sum / static_cast<double>(count) : 0.0;
  return err;
}

/// Least-squares slope of log(y) against log(x). NaN when fewer than two
/// points have positive values.
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
    const double a = std::log(x[i]);
    const double b = std::log(y[i]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
    ++n;
  }
  const double den = n * sxx - sx * sx;
  if (n < 2 || den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (n * sxy - sx * sy) / den;
}

struct ConvergenceLevel {
  double dx = 0.0;          // coarse mesh size of the pair
  GridErrors error;         // fine solution vs projected coarse solution
  bool converged = false;   // both solves converged
};

struct ConvergenceStudy {
  std::vector<ConvergenceLevel> levels;
  std::vector<Solution> solutions;  // one per mesh size, coarse to fine
  std::vector<double> car_error;    // |simulated car cost - lambda_origin(0)| per mesh size
  GridErrors slope;
};

/// Solves on every mesh size (dx = dt), compares consecutive pairs and fits
/// first-order slopes. `make_model` builds the problem for one mesh size.
inline ConvergenceStudy convergence_study(const std::function<Model(double)>& make_model, std::span<const double> dxs,
                                          const SolverConfig& cfg) {
  ConvergenceStudy study;
  for (double dx : dxs) study.solutions.push_back(solve_mfe(make_model(dx), cfg));
  for (std::size_t i = 0; i + 1 < study.solutions.size(); ++i) {
    const Solution& coarse = study.solutions[i];
    const Solution& fine = study.solutions[i + 1];
    ConvergenceLevel lv;
    lv.dx = coarse.grid().dx;
    lv.error = grid_error(fine, project_solution(coarse, *fine.model));
    lv.converged = coarse.status == Status::kConverged && fine.status == Status::kConverged;
    study.levels.push_back(lv);
  }
  for (const Solution& s : study.solutions) {
    const int o = s.model->dnet.network().origins().front();
    const double oracle = s.values.lambda(0, static_cast<std::size_t>(o));
    study.car_error.push_back(std::abs(simulate_car(s, o, 0.0).cost() - oracle));
  }
  std::vector<double> x, r, u, v, b;
  for (const auto& lv : study.levels) {
    x.push_back(lv.dx);
    r.push_back(lv.error.rho);
    u.push_back(lv.error.u);
    v.push_back(lv.error.V);
    b.push_back(lv.error.beta);
  }
  study.slope = {loglog_slope(x, r), loglog_slope(x, u), loglog_slope(x, v), loglog_slope(x, b)};
  return study;
}

// ---- experiment metrics ----------------------------------------------------

/// Vehicle density above which a cell counts as occupied.
inline constexpr double kOccupancyThreshold = 1e-3;

/// Time series derived from a solution. Speed-based series have Nt entries,
/// the others Nt + 1; nodal series are indexed by original node.
struct Metrics {
  std::vector<double> time;
  std::vector<double> average_velocity;
  std::vector<int> occupied_links;
  std::vector<double> network_mass;  // vehicles on links plus queues
  std::vector<std::vector<double>> pi;
  std::vector<std::vector<double>> queue;
};

inline Metrics metrics(const Solution& sol) {
  const Model& m = *sol.model;
  const auto& dnet = m.dnet;
  const Network& net = dnet.network();
  const Grid& g = m.grid;
  const Field& rho = sol.rho();
  Metrics out;
  for (int k = 0; k <= g.steps; ++k) {
    out.time.push_back(g.time(k));
    out.network_mass.push_back(network_mass(m, sol.loading, k));
    int occupied = 0;
    for (std::size_t l = 0; l < net.num_links(); ++l) {
      double peak = 0.0;
      for (int e : dnet.chain(static_cast<int>(l))) peak = std::max(peak, rho(k, static_cast<std::size_t>(e)));
      if (peak > kOccupancyThreshold) ++occupied;
    }
    out.occupied_links.push_back(occupied);
  }
  for (int k = 0; k < g.steps; ++k) {
    double mass = 0.0, flow = 0.0;
    for (std::size_t e = 0; e < dnet.num_sublinks(); ++e) {
      mass += rho(k, e);
      flow += rho(k, e) * sol.values.u(k, e);
    }
    out.average_velocity.push_back(mass > 0.0 ? flow / mass : 0.0);
  }
  for (std::size_t i = 0; i < net.num_nodes(); ++i) {
    std::vector<double> p, q;
    for (int k = 0; k <= g.steps; ++k) {
      p.push_back(sol.values.pi(k, i));
      q.push_back(sol.queue()(k, i));
    }
    out.pi.push_back(std::move(p));
    out.queue.push_back(std::move(q));
  }
  return out;
}

/// First time from which the network holds less than `threshold` vehicles
/// until T, after the demand has started; nullopt if never.
inline std::optional<double> network_empty_time(const Solution& sol, double threshold = 1e-3) {
  const Metrics mt = metrics(sol);
  std::optional<double> first;
  bool loaded = false;
  for (std::size_t k = 0; k < mt.time.size(); ++k) {
    if (mt.network_mass[k] >= threshold) {
      loaded = true;
      first.reset();
    } else if (loaded && !first) {
      first = mt.time[k];
    }
  }
  return first;
}

/// Vehicles entering original link `l` over the horizon.
inline double link_entry_volume(const Solution& sol, int l) {
  const Model& m = *sol.model;
  const auto e = static_cast<std::size_t>(m.dnet.chain(l).front());
  double sum = 0.0;
  for (int k = 0; k < m.steps(); ++k) sum += sol.loading.traffic.p(k, e);
  return sum * m.grid.dt;
}

/// Vehicles on original link `l` at level k.
inline double link_mass(const Solution& sol, int l, int k) {
  const Model& m = *sol.model;
  double sum = 0.0;
  for (int e : m.dnet.chain(l)) sum += sol.rho()(k, static_cast<std::size_t>(e));
  return sum * m.grid.dx;
}

}  // namespace mfgdta
