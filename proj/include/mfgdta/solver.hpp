#pragma once

#include <Eigen/SparseLU>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include "mfgdta/backward.hpp"
#include "mfgdta/error.hpp"
#include "mfgdta/field.hpp"
#include "mfgdta/forward.hpp"
#include "mfgdta/model.hpp"
#include "mfgdta/relaxed.hpp"

namespace mfgdta {

struct SolverConfig {
  Mode mode = Mode::kMfg;
  double eps_outer = 1e-6;  // threshold on |Q^(n+1) - Q^(n)|^2
  double tol_inner = 1e-6;  // equation defect accepted from one relaxed solve
  int max_outer = 50;
  int max_inner = 2000;     // averaging sweeps plus Newton steps per relaxed solve
  int warm_sweeps = 100;    // fallback best-response averaging sweeps
  double warm_gap = 1e-2;   // averaging stops early once best responses move less than this

  void validate() const {
    if (!(eps_outer > 0.0) || !(tol_inner > 0.0) || !(warm_gap > 0.0)) throw ConfigError("solver tolerances must be > 0");
    if (max_outer < 1 || max_inner < 1 || warm_sweeps < 1) throw ConfigError("solver iteration caps must be >= 1");
  }
};

enum class Status { kConverged, kNotConverged };

inline const char* to_string(Status s) { return s == Status::kConverged ? "converged" : "not_converged"; }

struct ResidualReport {
  double queue_lcp_residual = 0.0;
  double route_comp_residual = 0.0;
  double hjb_residual = 0.0;  // value recursion and speed optimality (or u = U(rho))
  double continuity_residual = 0.0;
  double mass_balance_error = 0.0;
  std::vector<double> outer_error_history;

  double max_equation_defect() const {
    return std::max({queue_lcp_residual, route_comp_residual, hjb_residual, continuity_residual});
  }
};

struct Solution {
  std::shared_ptr<const Model> model;
  Mode mode = Mode::kMfg;
  Loading loading;
  ValueField values;
  ResidualReport residuals;
  Status status = Status::kNotConverged;
  int outer_iterations = 0;
  int inner_iterations = 0;  // summed over outer rounds
  double wall_seconds = 0.0;

  const Grid& grid() const { return model->grid; }
  const Field& rho() const { return loading.traffic.rho; }
  const Field& queue() const { return loading.queues.queue; }
};

/// Equation defects of (loading, values) on `model`. lambda is rebuilt from
/// pi, with `weight_queue` placing the interpolation and the loading's own
/// queues pricing the delay; passing the loading's queues checks the
/// unrelaxed system.
inline ResidualReport measure_residuals(const Model& model, Mode mode, const Loading& ld, const ValueField& vf,
                                        const Field& weight_queue) {
  const auto& dnet = model.dnet;
  const auto& g = model.costs;
  const int nt = model.steps();
  const std::size_t ns = dnet.num_sublinks();
  const std::size_t nn = dnet.num_nodes();
  const double dt = model.grid.dt;
  const double ratio = dt / model.grid.dx;
  const int dest = dnet.destination();
  const Field& rho = ld.traffic.rho;
  const Field& queue = ld.queues.queue;

  ResidualReport rep;
  std::vector<double> outflow(nn);
  for (int k = 0; k < nt; ++k) {
    for (std::size_t i = 0; i < nn; ++i) {
      double in = 0.0;
      for (int e : dnet.in(static_cast<int>(i))) in += rho(k, static_cast<std::size_t>(e)) * vf.u(k, static_cast<std::size_t>(e));
      const DNode& node = dnet.node(static_cast<int>(i));
      if (static_cast<int>(i) == dest) {
        outflow[i] = 0.0;
      } else if (node.auxiliary()) {
        outflow[i] = in;
      } else {
        const double d = model.demand(k, i);
        const double slack = (queue(k + 1, i) - queue(k, i)) / dt + node.capacity - in - d;
        rep.queue_lcp_residual = std::max(rep.queue_lcp_residual, std::abs(std::min(slack, queue(k + 1, i))));
        outflow[i] = in + d - (queue(k + 1, i) - queue(k, i)) / dt;
      }
    }
    for (std::size_t e = 0; e < ns; ++e) {
      const auto from = static_cast<std::size_t>(dnet.sublink(static_cast<int>(e)).from);
      const double p = vf.beta(k, e) * outflow[from];
      const double q = rho(k, e) * vf.u(k, e);
      const double defect = rho(k + 1, e) - rho(k, e) - ratio * (p - q);
      rep.continuity_residual = std::max(rep.continuity_residual, std::abs(defect));
    }
  }

  // lambda from pi and the given queues
  ValueField lam;
  lam.pi = vf.pi;
  lam.lambda = Field(nt + 1, nn);
  for (int k = 0; k <= nt; ++k) detail::fill_lambda(model, weight_queue, lam, k, &queue);

  for (int k = 0; k < nt; ++k) {
    for (std::size_t e = 0; e < ns; ++e) {
      const Sublink& s = dnet.sublink(static_cast<int>(e));
      const double u = vf.u(k, e);
      const double grad = (lam.lambda(k + 1, static_cast<std::size_t>(s.to)) - vf.V(k + 1, e)) / model.grid.dx;
      const double defect = vf.V(k, e) - vf.V(k + 1, e) - dt * (u * grad + running_cost(u, rho(k, e), s.cost, g));
      const double target = mode == Mode::kMfg ? optimal_speed(grad, rho(k, e), s.cost, g) : lwr_speed(rho(k, e), g);
      rep.hjb_residual = std::max({rep.hjb_residual, std::abs(defect), std::abs(u - target)});
    }
    for (std::size_t i = 0; i < nn; ++i) {
      if (static_cast<int>(i) == dest) continue;
      const double pi = vf.pi(k, i);
      double sum = 0.0;
      double worst = std::max(0.0, -pi);
      for (int eo : dnet.out(static_cast<int>(i))) {
        const auto e = static_cast<std::size_t>(eo);
        const double b = vf.beta(k, e);
        const double gap = vf.V(k, e) - pi;
        sum += b;
        worst = std::max({worst, -b, -gap, std::abs(b * gap)});
      }
      worst = std::max(worst, 1.0 - sum);
      if (pi > 0.0) worst = std::max(worst, std::abs(sum - 1.0));
      rep.route_comp_residual = std::max(rep.route_comp_residual, worst);
    }
  }
  rep.mass_balance_error = mass_balance_error(model, ld);
  return rep;
}

/// Recomputes every defect with the solution's own queues everywhere.
inline ResidualReport verify_residuals(const Solution& sol) {
  ResidualReport rep = measure_residuals(*sol.model, sol.mode, sol.loading, sol.values, sol.queue());
  rep.outer_error_history = sol.residuals.outer_error_history;
  return rep;
}

struct RelaxedResult {
  Loading loading;
  ValueField values;
  ResidualReport residual;  // measured with the frozen queues
  bool converged = false;
  int sweeps = 0;           // best-response averaging sweeps
  int newton_steps = 0;
  Eigen::VectorXd state;    // packed unknowns, reusable as a warm start
};

namespace detail {

constexpr double kInitialSmoothing = 1e-2;
constexpr double kStartScale = 0.05;
constexpr double kMaxScaleStep = 0.25;
constexpr double kMinScaleStep = 1e-2;

/// Smoothed semismooth Newton with an Armijo line search on 0.5 |F|^2.
/// The smoothing parameter is driven to zero; returns true once |F|_inf <= tol
/// with exact (unsmoothed) equations.
class NewtonDriver {
 public:
  explicit NewtonDriver(double tol) : tol_(tol) {}

  bool run(RelaxedSystem& sys, Eigen::VectorXd& x, double mu0, int& budget, int& steps) {
    double mu = mu0;
    sys.set_smoothing(mu);
    if (!stage(sys, x, target(mu), budget, steps, kMaxStageSteps)) {
      sys.set_smoothing(0.0);
      return false;
    }
    double factor = kReduction;
    while (mu > 0.0) {
      // try to finish on the exact system; otherwise tighten the smoothing,
      // more gently after each failed stage
      Eigen::VectorXd trial = x;
      sys.set_smoothing(0.0);
      if (stage(sys, trial, tol_, budget, steps, kExactAttemptSteps)) {
        x = std::move(trial);
        return true;
      }
      const double next = mu * factor > kSmallestSmoothing ? mu * factor : 0.0;
      trial = x;
      sys.set_smoothing(next);
      if (stage(sys, trial, target(next), budget, steps, kMaxStageSteps)) {
        x = std::move(trial);
        mu = next;
        factor = std::max(factor * factor, kReduction);
      } else {
        factor = std::sqrt(factor);
        if (factor > kGentlestReduction || budget <= 0) break;
      }
    }
    sys.set_smoothing(0.0);
    return mu == 0.0;
  }

  /// Solves the system at fixed smoothing mu to a loose tolerance. `x` keeps
  /// the progress made even on failure.
  bool track(RelaxedSystem& sys, Eigen::VectorXd& x, double mu, int& budget, int& steps) {
    sys.set_smoothing(mu);
    return stage(sys, x, std::max(tol_, 0.1 * mu), budget, steps, kTrackSteps);
  }

 private:
  bool stage(const RelaxedSystem& sys, Eigen::VectorXd& x, double target, int& budget, int& steps, int max_steps) {
    Eigen::VectorXd r, trial_r;
    RelaxedSystem::Matrix jac;
    int stalls = 0;
    std::vector<double> history;
    for (int it = 0; it < max_steps; ++it) {
      sys.jacobian(x, r, jac);
      if (r.lpNorm<Eigen::Infinity>() <= target) return true;
      if (budget <= 0) return false;
      --budget;
      ++steps;
      if (!analyzed_) {
        lu_.analyzePattern(jac);
        analyzed_ = true;
      }
      lu_.factorize(jac);
      if (lu_.info() != Eigen::Success) return false;
      const Eigen::VectorXd dir = lu_.solve(-r);
      if (!dir.allFinite()) return false;
      const double merit = 0.5 * r.squaredNorm();
      history.push_back(merit);
      if (history.size() > kMemory) history.erase(history.begin());
      const double reference = *std::max_element(history.begin(), history.end());
      double t = 1.0;
      bool accepted = false;
      Eigen::VectorXd trial;
      for (int ls = 0; ls < 30; ++ls) {
        trial = x + t * dir;
        sys.project(trial);
        sys.residual(trial, trial_r);
        if (0.5 * trial_r.squaredNorm() <= reference - 2e-4 * t * merit) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) return false;
      x = std::move(trial);
      stalls = t < 1e-3 ? stalls + 1 : 0;
      if (stalls >= 5) return false;
    }
    sys.residual(x, r);
    return r.lpNorm<Eigen::Infinity>() <= target;
  }

  double target(double mu) const { return mu > 0.0 ? std::max(tol_, 0.1 * mu) : tol_; }

  static constexpr int kMaxStageSteps = 40;
  static constexpr double kReduction = 0.1;
  static constexpr double kGentlestReduction = 0.9;
  static constexpr double kSmallestSmoothing = 1e-8;
  static constexpr int kTrackSteps = 20;
  static constexpr int kExactAttemptSteps = 8;
  static constexpr std::size_t kMemory = 8;

  double tol_;
  Eigen::SparseLU<RelaxedSystem::Matrix> lu_;
  bool analyzed_ = false;
};

/// Running averages of best-response loadings.
struct Average {
  Field rho;
  Field queue;
  int count = 0;
};

/// Fictitious play: best-respond to the running average and fold the
/// response in with weight 1/n. Returns the last best-response gap in rho.
inline double average_best_responses(const Model& model, Mode mode, const Field& frozen, Average& avg, int sweeps,
                                     double gap_tol, int& budget) {
  double gap = std::numeric_limits<double>::infinity();
  for (int s = 0; s < sweeps && budget > 0; ++s, --budget) {
    const ValueField vf = backward_pass(model, avg.rho, frozen, mode, &avg.queue);
    const Loading ld = forward_pass(model, vf.u, vf.beta, mode);
    ++avg.count;
    const double w = 1.0 / static_cast<double>(avg.count);
    gap = 0.0;
    auto a = avg.rho.values();
    const auto b = ld.traffic.rho.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
      gap = std::max(gap, std::abs(b[i] - a[i]));
      a[i] += w * (b[i] - a[i]);
    }
    auto qa = avg.queue.values();
    const auto qb = ld.queues.queue.values();
    for (std::size_t i = 0; i < qa.size(); ++i) qa[i] += w * (qb[i] - qa[i]);
    if (gap <= gap_tol) break;
  }
  return gap;
}

inline Eigen::VectorXd pack_from_average(const RelaxedSystem& sys, const Model& model, Mode mode, const Average& avg,
                                         const Field& frozen) {
  const ValueField vf = backward_pass(model, avg.rho, frozen, mode, &avg.queue);
  const Loading ld = forward_pass(model, vf.u, vf.beta, mode);
  const ValueField v2 = backward_pass(model, ld.traffic.rho, frozen, mode, &ld.queues.queue);
  return sys.pack(ld.traffic.rho, v2.V, ld.queues.queue, v2.beta, v2.pi);
}

/// Best response to an empty network under demand scaled by `scale`, refined
/// once: accurate when traffic is light.
inline Eigen::VectorXd light_traffic_start(const RelaxedSystem& sys, const Model& model, Mode mode,
                                           const Field& frozen, double scale) {
  Model light = model;
  for (double& d : light.demand.values()) d *= scale;
  Average empty{Field(model.steps() + 1, model.num_sublinks()), Field(model.steps() + 1, model.num_nodes())};
  return pack_from_average(sys, light, mode, empty, frozen);
}

/// Newton on the exact system, then from the same start with smoothing.
inline bool polish(NewtonDriver& newton, RelaxedSystem& sys, Eigen::VectorXd& x, int& budget, int& steps) {
  Eigen::VectorXd trial = x;
  if (newton.run(sys, trial, 0.0, budget, steps)) {
    x = std::move(trial);
    return true;
  }
  trial = x;
  if (newton.run(sys, trial, kInitialSmoothing, budget, steps)) {
    x = std::move(trial);
    return true;
  }
  return false;
}

/// Follows the smoothed solution from light traffic up to the full demand,
/// shrinking the demand increment whenever Newton fails, then removes the
/// smoothing. At a fold of the path the last state is used as a start for the
/// full demand directly.
inline bool continue_in_demand(NewtonDriver& newton, RelaxedSystem& sys, const Model& model, Mode mode,
                               const Field& frozen, Eigen::VectorXd& x, int& budget, int& steps) {
  double scale = kStartScale;
  double step = kStartScale;
  sys.set_demand_scale(scale);
  x = light_traffic_start(sys, model, mode, frozen, scale);
  bool ok = newton.track(sys, x, kInitialSmoothing, budget, steps);
  while (ok && scale < 1.0) {
    const double next = std::min(1.0, scale + step);
    sys.set_demand_scale(next);
    Eigen::VectorXd trial = x;
    if (newton.track(sys, trial, kInitialSmoothing, budget, steps)) {
      x = std::move(trial);
      scale = next;
      step = std::min(1.5 * step, kMaxScaleStep);
    } else {
      step *= 0.5;
      ok = step >= kMinScaleStep && budget > 0;
    }
  }
  sys.set_demand_scale(1.0);
  if (!ok && budget <= 0) return false;
  return newton.run(sys, x, kInitialSmoothing, budget, steps);
}

/// Consistent fields from a Newton state: values from the state's densities
/// and queues, then a loading driven by those speeds and the state's
/// turning ratios.
inline void finalize(const Model& model, Mode mode, const RelaxedSystem& sys, const Field& frozen,
                     const Eigen::VectorXd& x, RelaxedResult& out) {
  const Field beta = sys.beta_field(x);
  const Field live = sys.queue_field(x);
  out.values = backward_pass(model, sys.rho_field(x), frozen, mode, &live);
  out.loading = forward_pass(model, out.values.u, beta, mode);
  // LWR speeds follow the loaded densities exactly
  if (mode == Mode::kLwr) out.values = backward_pass(model, out.loading.traffic.rho, frozen, mode, &live);
  out.values.beta = beta;
  out.residual = measure_residuals(model, mode, out.loading, out.values, frozen);
}

/// One way of reaching the exact system from a light-traffic start.
struct Attempt {
  double route_weight;
  double speed_weight;
  bool continuation;
};

}  // namespace detail

/// Solves the equilibrium system with `frozen` queues inside the nodal cost.
/// A warm start is polished directly by Newton. Otherwise a few smoothing
/// profiles are tried from a light-traffic start, first at the full demand
/// and then by continuation in the demand level. Best-response averaging
/// gives a last Newton start; the result is flagged unconverged if all fail.
inline RelaxedResult solve_relaxed(const Model& model, const Field& frozen, const SolverConfig& cfg,
                                   const Eigen::VectorXd* warm = nullptr) {
  static constexpr detail::Attempt kAttempts[] = {
      {30.0, 30.0, false}, {1.0, 1.0, false}, {30.0, 30.0, true}, {1.0, 1.0, true}};
  cfg.validate();
  const Mode mode = cfg.mode;
  RelaxedSystem sys(model, mode, frozen);
  detail::NewtonDriver newton(1e-2 * cfg.tol_inner);
  RelaxedResult out;
  int budget = cfg.max_inner;

  Eigen::VectorXd x;
  bool solved = false;
  if (warm != nullptr && static_cast<std::size_t>(warm->size()) == sys.size()) {
    x = *warm;
    solved = detail::polish(newton, sys, x, budget, out.newton_steps);
  }
  for (const auto& attempt : kAttempts) {
    if (solved || budget <= 0) break;
    sys.set_smoothing_weights(attempt.route_weight, attempt.speed_weight);
    if (attempt.continuation) {
      solved = detail::continue_in_demand(newton, sys, model, mode, frozen, x, budget, out.newton_steps);
    } else {
      x = detail::light_traffic_start(sys, model, mode, frozen, 1.0);
      solved = newton.run(sys, x, detail::kInitialSmoothing, budget, out.newton_steps);
    }
  }
  if (!solved) {
    sys.set_smoothing_weights(1.0, 1.0);
    detail::Average avg{Field(model.steps() + 1, model.num_sublinks()), Field(model.steps() + 1, model.num_nodes())};
    int sweeps = cfg.warm_sweeps;
    detail::average_best_responses(model, mode, frozen, avg, cfg.warm_sweeps, cfg.warm_gap, sweeps);
    out.sweeps = cfg.warm_sweeps - sweeps;
    x = detail::pack_from_average(sys, model, mode, avg, frozen);
    solved = newton.run(sys, x, detail::kInitialSmoothing, budget, out.newton_steps);
  }

  detail::finalize(model, mode, sys, frozen, x, out);
  out.state = std::move(x);
  out.converged = solved && out.residual.max_equation_defect() <= cfg.tol_inner;
  return out;
}

/// Mean field equilibrium: fixed point on the queues starting from Q = 0.
inline Solution solve_mfe(std::shared_ptr<const Model> model, const SolverConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Solution sol;
  sol.model = model;
  sol.mode = cfg.mode;

  Field frozen(model->steps() + 1, model->num_nodes());
  std::vector<double> history;
  std::optional<Eigen::VectorXd> warm;
  RelaxedResult last;
  for (int n = 0; n < cfg.max_outer; ++n) {
    last = solve_relaxed(*model, frozen, cfg, warm ? &*warm : nullptr);
    sol.inner_iterations += last.sweeps + last.newton_steps;
    sol.outer_iterations = n + 1;
    double err = 0.0;
    const auto a = last.loading.queues.queue.values();
    const auto b = frozen.values();
    for (std::size_t i = 0; i < a.size(); ++i) err += (a[i] - b[i]) * (a[i] - b[i]);
    history.push_back(err);
    frozen = last.loading.queues.queue;
    warm = last.state;
    if (err <= cfg.eps_outer) break;
  }

  sol.loading = std::move(last.loading);
  sol.values = std::move(last.values);
  sol.residuals.outer_error_history = history;
  sol.residuals = verify_residuals(sol);
  sol.residuals.outer_error_history = std::move(history);
  const bool outer_ok = sol.residuals.outer_error_history.back() <= cfg.eps_outer;
  sol.status = outer_ok && last.converged ? Status::kConverged : Status::kNotConverged;
  sol.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sol;
}

inline Solution solve_mfe(const Model& model, const SolverConfig& cfg) {
  return solve_mfe(std::make_shared<const Model>(model), cfg);
}

}  // namespace mfgdta
