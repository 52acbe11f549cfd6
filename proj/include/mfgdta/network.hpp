#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mfgdta/error.hpp"

namespace mfgdta {

/// Coefficients of the quadratic running cost on one link.
struct CostCoefficients {
  double c1 = 1.0;  // kinetic energy weight
  double c2 = 0.0;  // density (safety) weight
  double c3 = 0.0;  // efficiency weight, cost per unit travel time

  friend bool operator==(const CostCoefficients&, const CostCoefficients&) = default;
};

/// Constant rate on [start, end). Sampling a grid-aligned segment at left
/// endpoints loads exactly rate * (end - start) vehicles.
struct DemandSegment {
  double start = 0.0;
  double end = 0.0;
  double rate = 0.0;
};

class DemandProfile {
 public:
  DemandProfile() = default;
  explicit DemandProfile(std::vector<DemandSegment> segments) : segments_(std::move(segments)) {}

  const std::vector<DemandSegment>& segments() const { return segments_; }
  bool empty() const { return segments_.empty(); }

  /// Rate at time t; `slack` widens the interval test against floating grid times.
  double rate_at(double t, double slack = 0.0) const {
    double rate = 0.0;
    for (const auto& s : segments_) {
      if (t >= s.start - slack && t < s.end - slack) rate += s.rate;
    }
    return rate;
  }

  double total() const {
    double sum = 0.0;
    for (const auto& s : segments_) sum += s.rate * (s.end - s.start);
    return sum;
  }

 private:
  std::vector<DemandSegment> segments_;
};

struct LinkSpec {
  std::string id;  // optional; defaults to "from-to"
  std::string from;
  std::string to;
  double length = 1.0;
  CostCoefficients cost;
};

/// Unvalidated description of a road network, as read from a config file.
struct NetworkSpec {
  std::vector<std::string> nodes;
  std::vector<LinkSpec> links;
  std::map<std::string, double> capacities;
  std::map<std::string, DemandProfile> demand;
  std::string destination;
};

struct Link {
  std::string id;
  int from = -1;
  int to = -1;
  double length = 0.0;
  CostCoefficients cost;
};

/// Validated directed road network with a single destination.
class Network {
 public:
  explicit Network(const NetworkSpec& spec) { build(spec); }

  std::size_t num_nodes() const { return names_.size(); }
  std::size_t num_links() const { return links_.size(); }
  const std::string& node_name(int i) const { return names_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& node_names() const { return names_; }
  const std::vector<Link>& links() const { return links_; }
  const Link& link(int l) const { return links_.at(static_cast<std::size_t>(l)); }
  int destination() const { return destination_; }
  const std::vector<int>& origins() const { return origins_; }
  /// +infinity for the destination.
  double capacity(int i) const { return capacity_.at(static_cast<std::size_t>(i)); }
  const DemandProfile& demand(int i) const { return demand_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& out_links(int i) const { return out_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& in_links(int i) const { return in_.at(static_cast<std::size_t>(i)); }

  std::optional<int> find_node(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  int node_index(const std::string& name) const {
    auto i = find_node(name);
    if (!i) throw NetworkError(NetworkErrorKind::kUnknownNode, name);
    return *i;
  }

  std::optional<int> find_link(const std::string& id) const {
    for (std::size_t l = 0; l < links_.size(); ++l) {
      if (links_[l].id == id) return static_cast<int>(l);
    }
    return std::nullopt;
  }

  /// Link from `a` to `b` (first match), by node names.
  std::optional<int> find_link(const std::string& a, const std::string& b) const {
    auto ia = find_node(a);
    auto ib = find_node(b);
    if (!ia || !ib) return std::nullopt;
    for (int l : out_links(*ia)) {
      if (links_[static_cast<std::size_t>(l)].to == *ib) return l;
    }
    return std::nullopt;
  }

 private:
  void build(const NetworkSpec& spec) {
    for (const auto& n : spec.nodes) {
      if (index_.count(n)) throw NetworkError(NetworkErrorKind::kDuplicateNode, n);
      index_.emplace(n, static_cast<int>(names_.size()));
      names_.push_back(n);
    }
    const auto n = names_.size();
    out_.assign(n, {});
    in_.assign(n, {});

    if (spec.destination.empty()) throw NetworkError(NetworkErrorKind::kNoDestination, "destination not set");
    destination_ = lookup(spec.destination, "destination");

    for (const auto& ls : spec.links) {
      Link l;
      l.from = lookup(ls.from, "link start");
      l.to = lookup(ls.to, "link end");
      l.id = ls.id.empty() ? ls.from + "-" + ls.to : ls.id;
      l.length = ls.length;
      l.cost = ls.cost;
      if (!(l.length > 0.0) || !std::isfinite(l.length)) {
        throw NetworkError(NetworkErrorKind::kNonpositiveLength, "link " + l.id);
      }
      if (!(l.cost.c1 > 0.0) || !(l.cost.c2 >= 0.0) || !(l.cost.c3 >= 0.0)) {
        throw NetworkError(NetworkErrorKind::kInvalidCost, "link " + l.id + " needs c1 > 0, c2 >= 0, c3 >= 0");
      }
      out_[static_cast<std::size_t>(l.from)].push_back(static_cast<int>(links_.size()));
      in_[static_cast<std::size_t>(l.to)].push_back(static_cast<int>(links_.size()));
      links_.push_back(std::move(l));
    }
    if (in_[static_cast<std::size_t>(destination_)].empty()) {
      throw NetworkError(NetworkErrorKind::kDestinationWithoutInflow, spec.destination);
    }

    capacity_.assign(n, std::numeric_limits<double>::infinity());
    for (const auto& [name, m] : spec.capacities) {
      const int i = lookup(name, "capacity");
      if (!(m > 0.0)) throw NetworkError(NetworkErrorKind::kNonpositiveCapacity, "node " + name);
      if (i != destination_) capacity_[static_cast<std::size_t>(i)] = m;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<int>(i) != destination_ && !spec.capacities.count(names_[i])) {
        throw NetworkError(NetworkErrorKind::kMissingCapacity, "node " + names_[i]);
      }
    }

    demand_.assign(n, DemandProfile{});
    for (const auto& [name, profile] : spec.demand) {
      const int i = lookup(name, "demand");
      for (const auto& s : profile.segments()) {
        if (!(s.rate >= 0.0) || !(s.end >= s.start)) {
          throw NetworkError(NetworkErrorKind::kNegativeDemand, "origin " + name);
        }
      }
      if (profile.empty()) continue;
      if (i == destination_) throw NetworkError(NetworkErrorKind::kDemandAtDestination, name);
      demand_[static_cast<std::size_t>(i)] = profile;
      origins_.push_back(i);
    }
    std::sort(origins_.begin(), origins_.end());
    if (origins_.empty()) throw NetworkError(NetworkErrorKind::kNoOrigin, "no node carries demand");

    check_connectivity();
  }

  int lookup(const std::string& name, const char* what) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw NetworkError(NetworkErrorKind::kUnknownNode, std::string(what) + " '" + name + "'");
    return it->second;
  }

  void check_connectivity() const {
    const auto n = names_.size();
    std::vector<char> from_origin(n, 0), to_dest(n, 0);
    std::queue<int> frontier;
    for (int o : origins_) {
      from_origin[static_cast<std::size_t>(o)] = 1;
      frontier.push(o);
    }
    while (!frontier.empty()) {
      const int i = frontier.front();
      frontier.pop();
      for (int l : out_[static_cast<std::size_t>(i)]) {
        const int j = links_[static_cast<std::size_t>(l)].to;
        if (!from_origin[static_cast<std::size_t>(j)]) {
          from_origin[static_cast<std::size_t>(j)] = 1;
          frontier.push(j);
        }
      }
    }
    to_dest[static_cast<std::size_t>(destination_)] = 1;
    frontier.push(destination_);
    while (!frontier.empty()) {
      const int j = frontier.front();
      frontier.pop();
      for (int l : in_[static_cast<std::size_t>(j)]) {
        const int i = links_[static_cast<std::size_t>(l)].from;
        if (!to_dest[static_cast<std::size_t>(i)]) {
          to_dest[static_cast<std::size_t>(i)] = 1;
          frontier.push(i);
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!from_origin[i]) throw NetworkError(NetworkErrorKind::kUnreachableNode, "node " + names_[i]);
      if (!to_dest[i]) throw NetworkError(NetworkErrorKind::kDeadEndNode, "node " + names_[i]);
    }
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
  std::vector<Link> links_;
  std::vector<std::vector<int>> out_, in_;
  std::vector<double> capacity_;
  std::vector<DemandProfile> demand_;
  std::vector<int> origins_;
  int destination_ = -1;
};

inline Network build_network(const NetworkSpec& spec) { return Network(spec); }

namespace detail {

/// Returns round(value / step) when value is an integer multiple of step.
inline std::optional<int> integer_ratio(double value, double step) {
  const double r = value / step;
  const double n = std::round(r);
  if (n < 1.0 || std::abs(r - n) > 1e-9 * std::max(1.0, n)) return std::nullopt;
  return static_cast<int>(n);
}

}  // namespace detail

/// Uniform space-time mesh.
struct Grid {
  double dx = 0.0;
  double dt = 0.0;
  double horizon = 0.0;
  int steps = 0;  // Nt = horizon / dt

  double time(int k) const { return k * dt; }

  static Grid make(double dx, double dt, double horizon) {
    if (!(dx > 0.0) || !(dt > 0.0) || !(horizon > 0.0)) throw GridError("grid sizes must be positive");
    auto nt = detail::integer_ratio(horizon, dt);
    if (!nt) throw GridError("T/dt is not a positive integer");
    return Grid{dx, dt, horizon, *nt};
  }

  /// u_max * dt <= dx.
  bool satisfies_cfl(double u_max) const { return u_max * dt <= dx * (1.0 + 1e-12); }
};

/// Node of the refined network: an original node, or an auxiliary node inside a link.
struct DNode {
  std::string name;
  int original = -1;     // index in the original network, -1 if auxiliary
  int parent_link = -1;  // owning link for auxiliary nodes
  double capacity = std::numeric_limits<double>::infinity();

  bool auxiliary() const { return original < 0; }
};

struct Sublink {
  int from = -1;
  int to = -1;
  int parent = -1;    // original link index
  int position = 0;   // 0-based position along the parent chain
  CostCoefficients cost;
};

/// Network refined into sublinks of length dx. Original nodes keep their
/// indices; auxiliary nodes follow in link order.
class DiscretizedNetwork {
 public:
  DiscretizedNetwork(Network net, double dx) : net_(std::move(net)), dx_(dx) { build(); }

  const Network& network() const { return net_; }
  double dx() const { return dx_; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_sublinks() const { return sublinks_.size(); }
  std::size_t num_auxiliary() const { return nodes_.size() - net_.num_nodes(); }
  const DNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  const std::vector<DNode>& nodes() const { return nodes_; }
  const Sublink& sublink(int e) const { return sublinks_[static_cast<std::size_t>(e)]; }
  const std::vector<Sublink>& sublinks() const { return sublinks_; }
  const std::vector<int>& out(int i) const { return out_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& in(int i) const { return in_[static_cast<std::size_t>(i)]; }
  /// Sublinks of original link l, in chain order.
  const std::vector<int>& chain(int l) const { return chains_[static_cast<std::size_t>(l)]; }
  int destination() const { return net_.destination(); }

  /// Collapse auxiliary nodes: adjacency between original nodes as (from, to) pairs.
  std::vector<std::pair<int, int>> collapsed_adjacency() const {
    std::vector<std::pair<int, int>> edges;
    for (std::size_t l = 0; l < chains_.size(); ++l) {
      int at = sublinks_[static_cast<std::size_t>(chains_[l].front())].from;
      int e = chains_[l].front();
      // walk forward through auxiliary nodes
      while (true) {
        const int j = sublinks_[static_cast<std::size_t>(e)].to;
        if (!nodes_[static_cast<std::size_t>(j)].auxiliary()) {
          edges.emplace_back(at, j);
          break;
        }
        e = out_[static_cast<std::size_t>(j)].front();
      }
    }
    return edges;
  }

 private:
  void build() {
    for (std::size_t i = 0; i < net_.num_nodes(); ++i) {
      DNode n;
      n.name = net_.node_name(static_cast<int>(i));
      n.original = static_cast<int>(i);
      n.capacity = net_.capacity(static_cast<int>(i));
      nodes_.push_back(std::move(n));
    }
    chains_.resize(net_.num_links());
    for (std::size_t l = 0; l < net_.num_links(); ++l) {
      const Link& link = net_.link(static_cast<int>(l));
      auto cells = detail::integer_ratio(link.length, dx_);
      if (!cells) throw GridError("length of link " + link.id + " is not an integer multiple of dx");
      int at = link.from;
      for (int pos = 0; pos < *cells; ++pos) {
        int next = link.to;
        if (pos + 1 < *cells) {
          DNode aux;
          aux.name = link.id + "#" + std::to_string(pos + 1);
          aux.parent_link = static_cast<int>(l);
          next = static_cast<int>(nodes_.size());
          nodes_.push_back(std::move(aux));
        }
        chains_[l].push_back(static_cast<int>(sublinks_.size()));
        sublinks_.push_back(Sublink{at, next, static_cast<int>(l), pos, link.cost});
        at = next;
      }
    }
    out_.assign(nodes_.size(), {});
    in_.assign(nodes_.size(), {});
    for (std::size_t e = 0; e < sublinks_.size(); ++e) {
      out_[static_cast<std::size_t>(sublinks_[e].from)].push_back(static_cast<int>(e));
      in_[static_cast<std::size_t>(sublinks_[e].to)].push_back(static_cast<int>(e));
    }
  }

  Network net_;
  double dx_;
  std::vector<DNode> nodes_;
  std::vector<Sublink> sublinks_;
  std::vector<std::vector<int>> out_, in_, chains_;
};

/// Refines every link into len/dx sublinks; requires the CFL condition for `u_max`.
inline DiscretizedNetwork discretize(const Network& net, const Grid& grid, double u_max) {
  if (!grid.satisfies_cfl(u_max)) throw GridError("CFL violated: u_max * dt > dx");
  return DiscretizedNetwork(net, grid.dx);
}

}  // namespace mfgdta
