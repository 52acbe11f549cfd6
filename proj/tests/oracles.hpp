#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <stdexcept>

#include "mfgdta/costs.hpp"
#include "mfgdta/forward.hpp"

namespace oracles {

/// Dense grid scan followed by ternary search on the bracketing cells; never
/// uses the closed form.
inline double argmin_by_search(double grad, const mfgdta::CostCoefficients& c, const mfgdta::CostSpec& g, double rho) {
  const auto h = [&](double u) { return u * grad + mfgdta::running_cost(u, rho, c, g); };
  const int n = 2000;
  const double step = (g.u_max - g.u_min) / n;
  int best = 0;
  for (int i = 1; i <= n; ++i) {
    if (h(g.u_min + i * step) < h(g.u_min + best * step)) best = i;
  }
  double lo = g.u_min + std::max(best - 1, 0) * step;
  double hi = g.u_min + std::min(best + 1, n) * step;
  for (int it = 0; it < 200; ++it) {
    const double a = lo + (hi - lo) / 3.0;
    const double b = hi - (hi - lo) / 3.0;
    if (h(a) < h(b)) {
      hi = b;
    } else {
      lo = a;
    }
  }
  return 0.5 * (lo + hi);
}

/// Enumerates both complementarity branches of
///   w = (Q1 - Q)/dt + M - a >= 0,  Q1 >= 0,  w * Q1 = 0
/// and returns the feasible one.
inline mfgdta::QueueUpdate queue_lcp(double q, double a, double m, double dt) {
  const double w0 = -q / dt + m - a;  // branch Q1 = 0
  const double q1 = q + dt * (a - m);  // branch w = 0
  mfgdta::QueueUpdate out;
  if (w0 >= 0.0) {
    out.queue = 0.0;
  } else {
    if (q1 < 0.0) throw std::logic_error("no feasible branch");
    out.queue = q1;
  }
  out.outflow = a - (out.queue - q) / dt;
  return out;
}

}  // namespace oracles
