#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "mfgdta/backward.hpp"
#include "mfgdta/costs.hpp"
#include "mfgdta/field.hpp"
#include "mfgdta/forward.hpp"
#include "mfgdta/model.hpp"

namespace mfgdta {

/// The discrete equilibrium system with queues frozen inside the nodal cost
/// interpolation (the queuing cost itself stays live), assembled as one
/// square nonlinear system F(x) = 0.
///
/// Unknowns: rho^{1..Nt} and V^{0..Nt-1} on every sublink, Q^{1..Nt} at every
/// capacitated node, and (beta^k, pi^k), k < Nt, at every node with more than
/// one outgoing sublink. Speeds, flows and outflows are eliminated. Route
/// complementarity uses the Fischer-Burmeister function with a tiny proximal
/// term eps * beta, which selects the uniform split on exact ties and keeps
/// the Jacobian regular where no flow reaches a node.
class RelaxedSystem {
 public:
  using Vector = Eigen::VectorXd;
  using Matrix = Eigen::SparseMatrix<double>;

  static constexpr double kTieRegularization = 1e-7;

  RelaxedSystem(const Model& model, Mode mode, const Field& frozen_queue)
      : model_(model), mode_(mode), frozen_(frozen_queue) {
    const auto& dnet = model_.dnet;
    nt_ = model_.steps();
    ns_ = dnet.num_sublinks();
    nn_ = dnet.num_nodes();
    slot_.assign(nn_, -1);
    choice_.assign(nn_, -1);
    local_.assign(ns_, -1);
    for (std::size_t i = 0; i < nn_; ++i) {
      const int ii = static_cast<int>(i);
      if (ii == dnet.destination() || dnet.node(ii).auxiliary()) continue;
      slot_[i] = static_cast<int>(queued_.size());
      queued_.push_back(ii);
      const auto& outs = dnet.out(ii);
      if (outs.size() > 1) {
        choice_[i] = static_cast<int>(choice_offset_.size());
        choice_offset_.push_back(block_);
        choices_.push_back(ii);
        for (std::size_t j = 0; j < outs.size(); ++j) local_[static_cast<std::size_t>(outs[j])] = block_ + static_cast<int>(j);
        block_ += static_cast<int>(outs.size()) + 1;  // betas then pi
      }
    }
    off_v_ = static_cast<std::size_t>(nt_) * ns_;
    off_q_ = off_v_ + static_cast<std::size_t>(nt_) * ns_;
    off_b_ = off_q_ + static_cast<std::size_t>(nt_) * queued_.size();
    size_ = off_b_ + static_cast<std::size_t>(nt_) * static_cast<std::size_t>(block_);
  }

  std::size_t size() const { return size_; }

  /// Smoothing parameter of the max/clamp/complementarity kinks; 0 is exact.
  void set_smoothing(double mu) { mu_ = mu; }
  double smoothing() const { return mu_; }
  /// Relative smoothing of the route complementarity and the speed clamps;
  /// queues are smoothed with mu itself.
  void set_smoothing_weights(double route, double speed) {
    route_weight_ = route;
    speed_weight_ = speed;
  }
  /// Multiplies every origin demand; used for continuation from light traffic.
  void set_demand_scale(double s) { demand_scale_ = s; }
  double demand_scale() const { return demand_scale_; }
  Mode mode() const { return mode_; }
  const std::vector<int>& choice_nodes() const { return choices_; }

  // ---- state packing ---------------------------------------------------

  /// Packs fields into the unknown vector. pi is only read at choice nodes.
  Vector pack(const Field& rho, const Field& value, const Field& queue, const Field& beta, const Field& pi) const {
    Vector x = Vector::Zero(static_cast<Eigen::Index>(size_));
    for (int k = 1; k <= nt_; ++k)
      for (std::size_t e = 0; e < ns_; ++e) x[rho_idx(e, k)] = rho(k, e);
    for (int k = 0; k < nt_; ++k)
      for (std::size_t e = 0; e < ns_; ++e) x[v_idx(e, k)] = value(k, e);
    for (int k = 1; k <= nt_; ++k)
      for (std::size_t s = 0; s < queued_.size(); ++s) x[q_idx(s, k)] = queue(k, static_cast<std::size_t>(queued_[s]));
    for (int k = 0; k < nt_; ++k) {
      for (std::size_t c = 0; c < choices_.size(); ++c) {
        const int i = choices_[c];
        const auto& outs = model_.dnet.out(i);
        for (int e : outs) x[beta_idx(static_cast<std::size_t>(e), k)] = beta(k, static_cast<std::size_t>(e));
        x[pi_idx(c, k)] = pi(k, static_cast<std::size_t>(i));
      }
    }
    return x;
  }

  /// Clips turning ratios to [0, 1]; used on Newton trial points.
  void project(Vector& x) const {
    for (int k = 0; k < nt_; ++k) {
      for (int c : choices_) {
        for (int e : model_.dnet.out(c)) {
          double& b = x[beta_idx(static_cast<std::size_t>(e), k)];
          b = std::clamp(b, 0.0, 1.0);
        }
      }
    }
  }

  Field rho_field(const Vector& x) const {
    Field f(nt_ + 1, ns_);
    for (int k = 1; k <= nt_; ++k)
      for (std::size_t e = 0; e < ns_; ++e) f(k, e) = x[rho_idx(e, k)];
    return f;
  }

  Field queue_field(const Vector& x) const {
    Field f(nt_ + 1, nn_);
    for (int k = 1; k <= nt_; ++k)
      for (std::size_t s = 0; s < queued_.size(); ++s) f(k, static_cast<std::size_t>(queued_[s])) = x[q_idx(s, k)];
    return f;
  }

  /// Turning ratios with beta = 1 on sublinks leaving single-exit nodes.
  Field beta_field(const Vector& x) const {
    Field f(nt_, ns_);
    for (int k = 0; k < nt_; ++k)
      for (std::size_t e = 0; e < ns_; ++e) f(k, e) = beta(x, e, k);
    return f;
  }

  // ---- evaluation --------------------------------------------------------

  void residual(const Vector& x, Vector& r) const {
    r.resize(static_cast<Eigen::Index>(size_));
    Assembler a{x, &r, nullptr};
    assemble(a);
  }

  /// Residual and Jacobian.
  void jacobian(const Vector& x, Vector& r, Matrix& jac) const {
    r.resize(static_cast<Eigen::Index>(size_));
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(size_ * 16);
    Assembler a{x, &r, &trips};
    assemble(a);
    jac.resize(static_cast<Eigen::Index>(size_), static_cast<Eigen::Index>(size_));
    jac.setFromTriplets(trips.begin(), trips.end());
  }

 private:
  struct Smooth {
    double v = 0.0;
    double d = 0.0;
  };

  /// max(0, z), smoothed as (z + sqrt(z^2 + 4 mu^2)) / 2 when mu > 0.
  Smooth smax(double z) const { return smax(z, mu_); }
  static Smooth smax(double z, double mu) {
    if (mu <= 0.0) return {std::max(0.0, z), z > 0.0 ? 1.0 : 0.0};
    const double root = std::sqrt(z * z + 4.0 * mu * mu);
    return {0.5 * (z + root), 0.5 * (1.0 + z / root)};
  }

  Smooth sclamp(double z, double lo, double hi) const {
    const Smooth a = smax(z - lo, speed_weight_ * mu_);
    const Smooth b = smax(z - hi, speed_weight_ * mu_);
    return {lo + a.v - b.v, a.d - b.d};
  }

  /// Speed as a function of the gradient (MFG) or the density (LWR), with
  /// its derivative with respect to that argument.
  Smooth speed(double arg, const CostCoefficients& c) const {
    const auto& g = model_.costs;
    if (mode_ == Mode::kMfg) {
      const double slope = -g.u_max * g.u_max / c.c1;
      const Smooth s = sclamp(slope * arg, g.u_min, g.u_max);
      return {s.v, s.d * slope};
    }
    // U(rho) <= u_max holds for rho >= 0, so only the lower clamp is kept;
    // smoothing an upper kink sitting exactly at rho = 0 would bias empty cells.
    const double slope = -g.u_max / g.rho_jam;
    const double lo = std::max(0.0, g.u_min);
    const Smooth s = smax(g.u_max + slope * arg - lo, speed_weight_ * mu_);
    return {lo + s.v, s.d * slope};
  }

  struct Term {
    Eigen::Index idx;
    double w;
  };

  /// c + sum w * x[idx], plus an optional queuing cost unit * min(x[queue], cap).
  struct Affine {
    double c = 0.0;
    std::vector<Term> terms;
    Eigen::Index queue = -1;
    double unit = 0.0;
    double cap = 0.0;

    double eval(const Vector& x) const {
      double v = c;
      for (const auto& t : terms) v += t.w * x[t.idx];
      if (queue >= 0) v += unit * std::min(x[queue], cap);
      return v;
    }
    double queue_slope(const Vector& x) const { return queue >= 0 && x[queue] < cap ? unit : 0.0; }
  };

  struct Assembler {
    const Vector& x;
    Vector* r;
    std::vector<Eigen::Triplet<double>>* trips;

    bool jac() const { return trips != nullptr; }
    void add(Eigen::Index row, Eigen::Index col, double v) const {
      trips->emplace_back(static_cast<int>(row), static_cast<int>(col), v);
    }
    void add(Eigen::Index row, const Affine& a, double scale) const {
      for (const auto& t : a.terms) add(row, t.idx, scale * t.w);
      if (a.queue >= 0) add(row, a.queue, scale * a.queue_slope(x));
    }
  };

  Eigen::Index rho_idx(std::size_t e, int k) const {
    return static_cast<Eigen::Index>(static_cast<std::size_t>(k - 1) * ns_ + e);
  }
  Eigen::Index v_idx(std::size_t e, int k) const {
    return static_cast<Eigen::Index>(off_v_ + static_cast<std::size_t>(k) * ns_ + e);
  }
  Eigen::Index q_idx(std::size_t slot, int k) const {
    return static_cast<Eigen::Index>(off_q_ + static_cast<std::size_t>(k - 1) * queued_.size() + slot);
  }
  Eigen::Index beta_idx(std::size_t e, int k) const {
    return static_cast<Eigen::Index>(off_b_ + static_cast<std::size_t>(k) * static_cast<std::size_t>(block_) +
                                     static_cast<std::size_t>(local_[e]));
  }
  Eigen::Index pi_idx(std::size_t c, int k) const {
    const int i = choices_[c];
    return static_cast<Eigen::Index>(off_b_ + static_cast<std::size_t>(k) * static_cast<std::size_t>(block_) +
                                     static_cast<std::size_t>(choice_offset_[c]) + model_.dnet.out(i).size());
  }

  double rho(const Vector& x, std::size_t e, int k) const { return k == 0 ? 0.0 : x[rho_idx(e, k)]; }
  double value(const Vector& x, std::size_t e, int k) const {
    return k == nt_ ? model_.terminal.sublink_value[e] : x[v_idx(e, k)];
  }
  double queue(const Vector& x, int node, int k) const {
    const int s = slot_[static_cast<std::size_t>(node)];
    return (k == 0 || s < 0) ? 0.0 : x[q_idx(static_cast<std::size_t>(s), k)];
  }
  double beta(const Vector& x, std::size_t e, int k) const {
    return local_[e] < 0 ? 1.0 : x[beta_idx(e, k)];
  }

  /// pi_i^k as an affine form of the unknowns.
  void pi_form(int i, int k, double w, Affine& out) const {
    const auto& dnet = model_.dnet;
    if (i == dnet.destination()) return;
    if (k == nt_) {
      out.c += w * model_.terminal.node_value[static_cast<std::size_t>(i)];
      return;
    }
    const int c = choice_[static_cast<std::size_t>(i)];
    if (c >= 0) {
      out.terms.push_back({pi_idx(static_cast<std::size_t>(c), k), w});
    } else {
      out.terms.push_back({v_idx(static_cast<std::size_t>(dnet.out(i).front()), k), w});
    }
  }

  /// lambda_j^m: pi interpolated at the point fixed by the frozen queue, plus
  /// the queuing cost of the live queue Q_j^m.
  Affine lambda_form(int j, int m) const {
    Affine a;
    const auto& dnet = model_.dnet;
    if (j == dnet.destination()) return a;
    const DNode& node = dnet.node(j);
    if (node.auxiliary()) {
      pi_form(j, m, 1.0, a);
      return a;
    }
    const auto& grid = model_.grid;
    const double delay = frozen_(m, static_cast<std::size_t>(j)) / node.capacity;
    const double at = static_cast<double>(m) + delay / grid.dt;
    if (at >= static_cast<double>(nt_)) {
      pi_form(j, nt_, 1.0, a);
    } else {
      const int base = std::min(static_cast<int>(std::floor(at)), nt_ - 1);
      const double w = at - static_cast<double>(base);
      if (w == 0.0) {
        pi_form(j, base, 1.0, a);
      } else {
        pi_form(j, base, 1.0 - w, a);
        pi_form(j, base + 1, w, a);
      }
    }
    if (m > 0) {
      a.queue = q_idx(static_cast<std::size_t>(slot_[static_cast<std::size_t>(j)]), m);
      a.unit = model_.costs.c4 / node.capacity;
      a.cap = (grid.horizon - m * grid.dt) * node.capacity;
    }
    return a;
  }

  /// Exit flow q_e^k = rho_e^k u_e^k with its partial derivatives.
  struct ExitFlow {
    double q = 0.0;
    double u = 0.0;
    double dq_drho = 0.0;
    double dq_dv = 0.0;       // w.r.t. V_e^{k+1}
    double dq_dlambda = 0.0;  // w.r.t. lambda_{to(e)}^{k+1}
    const Affine* lambda = nullptr;
  };

  ExitFlow exit_flow(const Vector& x, std::size_t e, int k, const Affine& lambda) const {
    const auto& s = model_.dnet.sublink(static_cast<int>(e));
    ExitFlow f;
    f.lambda = &lambda;
    const double r = rho(x, e, k);
    if (mode_ == Mode::kMfg) {
      const double grad = (lambda.eval(x) - value(x, e, k + 1)) / model_.grid.dx;
      const Smooth sp = speed(grad, s.cost);
      f.u = sp.v;
      f.dq_dlambda = r * sp.d / model_.grid.dx;
      f.dq_dv = -r * sp.d / model_.grid.dx;
      f.dq_drho = f.u;
    } else {
      const Smooth sp = speed(r, s.cost);
      f.u = sp.v;
      f.dq_drho = f.u + r * sp.d;
    }
    f.q = r * f.u;
    return f;
  }

  void add_exit_flow(const Assembler& a, Eigen::Index row, std::size_t e, int k, const ExitFlow& f,
                     double scale) const {
    if (k > 0) a.add(row, rho_idx(e, k), scale * f.dq_drho);
    if (mode_ == Mode::kMfg) {
      if (k + 1 < nt_) a.add(row, v_idx(e, k + 1), scale * f.dq_dv);
      a.add(row, *f.lambda, scale * f.dq_dlambda);
    }
  }

  void assemble(const Assembler& a) const {
    const auto& dnet = model_.dnet;
    const auto& g = model_.costs;
    const double dt = model_.grid.dt;
    const double dx = model_.grid.dx;
    const double ratio = dt / dx;
    const Vector& x = a.x;
    Vector& r = *a.r;

    std::vector<Affine> lambda(nn_);
    std::vector<ExitFlow> flow(ns_);
    std::vector<double> inflow(nn_), outflow(nn_);

    for (int k = 0; k < nt_; ++k) {
      for (std::size_t i = 0; i < nn_; ++i) lambda[i] = lambda_form(static_cast<int>(i), k + 1);
      for (std::size_t e = 0; e < ns_; ++e) {
        flow[e] = exit_flow(x, e, k, lambda[static_cast<std::size_t>(dnet.sublink(static_cast<int>(e)).to)]);
      }
      for (std::size_t i = 0; i < nn_; ++i) {
        double in = 0.0;
        for (int e : dnet.in(static_cast<int>(i))) in += flow[static_cast<std::size_t>(e)].q;
        inflow[i] = in;
      }

      // queues: Q^{k+1} = max(0, Q^k + dt (in + d - M))
      for (std::size_t s = 0; s < queued_.size(); ++s) {
        const int i = queued_[s];
        const auto iu = static_cast<std::size_t>(i);
        const double cap = dnet.node(i).capacity;
        const double arg = queue(x, i, k) + dt * (inflow[iu] + demand_scale_ * model_.demand(k, iu) - cap);
        const Eigen::Index row = q_idx(s, k + 1);
        const Smooth qm = smax(arg);
        r[row] = x[row] - qm.v;
        outflow[iu] = inflow[iu] + demand_scale_ * model_.demand(k, iu) - (x[row] - queue(x, i, k)) / dt;
        if (a.jac()) {
          a.add(row, row, 1.0);
          const double active = qm.d;
          if (k > 0) a.add(row, q_idx(s, k), -active);
          for (int e : dnet.in(i)) add_exit_flow(a, row, static_cast<std::size_t>(e), k, flow[static_cast<std::size_t>(e)], -active * dt);
        }
      }
      for (std::size_t i = 0; i < nn_; ++i) {
        if (dnet.node(static_cast<int>(i)).auxiliary()) outflow[i] = inflow[i];
      }

      // continuity: rho^{k+1} - rho^k - r (p - q) = 0
      for (std::size_t e = 0; e < ns_; ++e) {
        const Sublink& sl = dnet.sublink(static_cast<int>(e));
        const auto from = static_cast<std::size_t>(sl.from);
        const double b = beta(x, e, k);
        const double p = b * outflow[from];
        const Eigen::Index row = rho_idx(e, k + 1);
        r[row] = x[row] - rho(x, e, k) - ratio * (p - flow[e].q);
        if (!a.jac()) continue;
        a.add(row, row, 1.0);
        if (k > 0) a.add(row, rho_idx(e, k), -1.0);
        add_exit_flow(a, row, e, k, flow[e], ratio);
        if (local_[e] >= 0) a.add(row, beta_idx(e, k), -ratio * outflow[from]);
        // outflow = in + d - (Q^{k+1} - Q^k)/dt (capacitated) or in (auxiliary)
        for (int h : dnet.in(sl.from)) add_exit_flow(a, row, static_cast<std::size_t>(h), k, flow[static_cast<std::size_t>(h)], -ratio * b);
        const int s = slot_[from];
        if (s >= 0) {
          a.add(row, q_idx(static_cast<std::size_t>(s), k + 1), ratio * b / dt);
          if (k > 0) a.add(row, q_idx(static_cast<std::size_t>(s), k), -ratio * b / dt);
        }
      }

      // HJB: V^k - V^{k+1} - dt (u grad + f(u, rho^k)) = 0
      for (std::size_t e = 0; e < ns_; ++e) {
        const Sublink& sl = dnet.sublink(static_cast<int>(e));
        const Affine& lam = lambda[static_cast<std::size_t>(sl.to)];
        const double rk = rho(x, e, k);
        const double vnext = value(x, e, k + 1);
        const double grad = (lam.eval(x) - vnext) / dx;
        const Eigen::Index row = v_idx(e, k);
        // d/dgrad and d/drho of u grad + f(u, rho) with u = u(grad) or u(rho)
        double u, d_grad, d_rho;
        if (mode_ == Mode::kMfg) {
          const Smooth sp = speed(grad, sl.cost);
          u = sp.v;
          d_grad = u + (grad + sl.cost.c1 * u / (g.u_max * g.u_max)) * sp.d;
          d_rho = sl.cost.c2 / g.rho_jam;
        } else {
          const Smooth sp = speed(rk, sl.cost);
          u = sp.v;
          d_grad = u;
          d_rho = (grad + sl.cost.c1 * u / (g.u_max * g.u_max)) * sp.d + sl.cost.c2 / g.rho_jam;
        }
        r[row] = x[row] - vnext - dt * (u * grad + running_cost(u, rk, sl.cost, g));
        if (!a.jac()) continue;
        a.add(row, row, 1.0);
        if (k + 1 < nt_) a.add(row, v_idx(e, k + 1), -1.0 + dt * d_grad / dx);
        a.add(row, lam, -dt * d_grad / dx);
        if (k > 0) a.add(row, rho_idx(e, k), -dt * d_rho);
      }

      // route choice: FB(beta, V - pi + eps beta) = 0, sum beta = 1
      for (std::size_t c = 0; c < choices_.size(); ++c) {
        const int i = choices_[c];
        const Eigen::Index prow = pi_idx(c, k);
        const double pi = x[prow];
        double sum = 0.0;
        for (int eo : dnet.out(i)) {
          const auto e = static_cast<std::size_t>(eo);
          const Eigen::Index brow = beta_idx(e, k);
          const double bv = x[brow];
          sum += bv;
          const double gap = x[v_idx(e, k)] - pi + kTieRegularization * bv;
          const double mr = route_weight_ * mu_;
          const double norm = std::sqrt(bv * bv + gap * gap + 2.0 * mr * mr);
          r[brow] = norm - bv - gap;
          if (!a.jac()) continue;
          double da, db;
          if (norm > 1e-300) {
            da = bv / norm - 1.0;
            db = gap / norm - 1.0;
          } else {
            da = db = 1.0 / std::sqrt(2.0) - 1.0;
          }
          a.add(brow, brow, da + db * kTieRegularization);
          a.add(brow, v_idx(e, k), db);
          a.add(brow, prow, -db);
        }
        r[prow] = sum - 1.0;
        if (a.jac()) {
          for (int eo : dnet.out(i)) a.add(prow, beta_idx(static_cast<std::size_t>(eo), k), 1.0);
        }
      }
    }
  }

  const Model& model_;
  Mode mode_;
  const Field& frozen_;
  int nt_ = 0;
  std::size_t ns_ = 0, nn_ = 0;
  std::vector<int> slot_;          // node -> queue slot, -1 if uncapacitated
  std::vector<int> queued_;        // queue slot -> node
  std::vector<int> choice_;        // node -> choice index, -1 if single exit
  std::vector<int> choices_;       // choice index -> node
  std::vector<int> choice_offset_; // choice index -> offset inside a time block
  std::vector<int> local_;         // sublink -> offset inside a time block, -1 if forced
  int block_ = 0;
  double mu_ = 0.0;
  double demand_scale_ = 1.0;
  double route_weight_ = 1.0;
  double speed_weight_ = 1.0;
  std::size_t off_v_ = 0, off_q_ = 0, off_b_ = 0, size_ = 0;
};

}  // namespace mfgdta
