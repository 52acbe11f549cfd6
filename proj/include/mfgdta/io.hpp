#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mfgdta/error.hpp"
#include "mfgdta/model.hpp"
#include "mfgdta/solver.hpp"
#include "mfgdta/validate.hpp"

namespace mfgdta {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

struct OutputSpec {
  std::string directory = "out";
  bool fields = true;
  bool queues = true;
  bool beta = true;
  bool summary = true;
  bool plots = true;
};

/// Everything needed to run one experiment. `modes` holds one entry, or
/// both modes for a comparison run.
struct ExperimentConfig {
  std::string name;
  NetworkSpec network;
  CostSpec costs;
  double dx = 0.0;
  double dt = 0.0;
  double horizon = 0.0;
  TerminalSpec terminal;
  SolverConfig solver;
  std::vector<Mode> modes{Mode::kMfg};
  OutputSpec output;
};

namespace detail {

/// Reads typed members of a JSON object and reports the dotted path of any
/// missing or malformed field.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& at(const std::string& key) const {
    if (!j_.contains(key)) throw ConfigError("missing field " + field(key));
    return j_.at(key);
  }

  Reader object(const std::string& key) const { return Reader(at(key), field(key)); }

  double number(const std::string& key) const {
    const Json& v = at(key);
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

  int integer(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const Json& v = at(key);
    if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
    return v.get<int>();
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const Json& v = at(key);
    if (!v.is_boolean()) throw ConfigError(field(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) const {
    const Json& v = at(key);
    if (v.is_number()) return v.dump();  // node names may be written as numbers
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) const {
    return has(key) ? string(key) : fallback;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }
  const Json& json() const { return j_; }

 private:
  const Json& j_;
  std::string path_;
};

inline std::string name_of(const Json& v, const std::string& field) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return v.dump();
  throw ConfigError(field + ": expected a node name");
}

inline Mode parse_mode(const std::string& s, const std::string& field) {
  if (s == "mfg") return Mode::kMfg;
  if (s == "lwr") return Mode::kLwr;
  throw ConfigError(field + ": unknown mode '" + s + "' (expected mfg or lwr)");
}

inline std::vector<Mode> parse_modes(const std::string& s, const std::string& field) {
  if (s == "both") return {Mode::kMfg, Mode::kLwr};
  return {parse_mode(s, field)};
}

/// Shortest distance (by link length) from every node to the destination.
inline std::map<std::string, double> distance_to_destination(const NetworkSpec& spec) {
  std::map<std::string, std::vector<std::pair<std::string, double>>> into;
  for (const auto& l : spec.links) into[l.to].push_back({l.from, l.length});
  std::map<std::string, double> dist;
  using Item = std::pair<double, std::string>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  open.push({0.0, spec.destination});
  while (!open.empty()) {
    auto [d, n] = open.top();
    open.pop();
    if (dist.contains(n)) continue;
    dist[n] = d;
    for (const auto& [from, len] : into[n]) {
      if (!dist.contains(from)) open.push({d + len, from});
    }
  }
  return dist;
}

}  // namespace detail

/// Builds a config from parsed JSON; errors name the offending field.
inline ExperimentConfig parse_config(const Json& root) {
  detail::Reader top(root, "");
  const int version = top.integer("schema_version", -1);
  if (version != kSchemaVersion) {
    throw ConfigError("schema_version: expected " + std::to_string(kSchemaVersion) +
                      (top.has("schema_version") ? "" : " (field missing)"));
  }
  ExperimentConfig cfg;
  cfg.name = top.string("name", "experiment");

  const auto net = top.object("network");
  NetworkSpec& spec = cfg.network;
  const Json& nodes = net.at("nodes");
  if (!nodes.is_array() || nodes.empty()) throw ConfigError("network.nodes: expected a nonempty array");
  for (const auto& n : nodes) spec.nodes.push_back(detail::name_of(n, "network.nodes"));

  const Json& links = net.at("links");
  if (!links.is_array() || links.empty()) throw ConfigError("network.links: expected a nonempty array");
  for (std::size_t i = 0; i < links.size(); ++i) {
    detail::Reader l(links[i], "network.links[" + std::to_string(i) + "]");
    LinkSpec ls;
    ls.from = l.string("from");
    ls.to = l.string("to");
    ls.id = l.string("id", ls.from + "-" + ls.to);
    ls.length = l.number("length", 1.0);
    ls.cost = {l.number("c1"), l.number("c2"), l.number("c3")};
    spec.links.push_back(ls);
  }
  spec.destination = net.string("destination");

  if (net.has("capacities")) {
    const auto caps = net.object("capacities");
    for (const auto& [node, v] : caps.json().items()) spec.capacities[node] = caps.number(node);
  }
  if (net.has("default_capacity")) {
    const double m = net.number("default_capacity");
    for (const auto& n : spec.nodes) {
      if (n != spec.destination && !spec.capacities.contains(n)) spec.capacities[n] = m;
    }
  }
  const auto demand = net.object("demand");
  for (const auto& [node, segs] : demand.json().items()) {
    const std::string field = "network.demand." + node;
    if (!segs.is_array()) throw ConfigError(field + ": expected an array of segments");
    std::vector<DemandSegment> out;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      detail::Reader s(segs[i], field + "[" + std::to_string(i) + "]");
      out.push_back({s.number("start"), s.number("end"), s.number("rate")});
      if (!(out.back().end > out.back().start)) throw ConfigError(s.field("end") + ": must exceed start");
    }
    spec.demand[node] = DemandProfile(std::move(out));
  }

  const auto costs = top.object("costs");
  cfg.costs.c4 = costs.number("c4");
  cfg.costs.u_min = costs.number("u_min", 0.0);
  cfg.costs.u_max = costs.number("u_max", 1.0);
  cfg.costs.rho_jam = costs.number("rho_jam", 1.0);

  const auto grid = top.object("grid");
  cfg.dx = grid.number("dx");
  cfg.dt = grid.number("dt", cfg.dx);
  cfg.horizon = grid.number("T");

  if (top.has("terminal")) {
    const auto term = top.object("terminal");
    if (term.boolean("from_distance", false)) {
      for (const auto& [n, d] : detail::distance_to_destination(spec)) cfg.terminal.nodal[n] = d;
    }
    if (term.has("nodal")) {
      const auto nodal = term.object("nodal");
      for (const auto& [node, v] : nodal.json().items()) cfg.terminal.nodal[node] = nodal.number(node);
    }
    if (term.has("links")) {
      const auto prof = term.object("links");
      for (const auto& [id, v] : prof.json().items()) {
        const auto p = prof.object(id);
        cfg.terminal.profiles[id] = {p.number("offset"), p.number("slope")};
      }
    }
  }
  for (const auto& n : spec.nodes) cfg.terminal.nodal.try_emplace(n, 0.0);

  if (top.has("solver")) {
    const auto s = top.object("solver");
    SolverConfig& sc = cfg.solver;
    cfg.modes = detail::parse_modes(s.string("mode", "mfg"), "solver.mode");
    sc.eps_outer = s.number("eps_outer", sc.eps_outer);
    sc.tol_inner = s.number("tol_inner", sc.tol_inner);
    sc.max_outer = s.integer("max_outer", sc.max_outer);
    sc.max_inner = s.integer("max_inner", sc.max_inner);
    sc.warm_sweeps = s.integer("warm_sweeps", sc.warm_sweeps);
    sc.warm_gap = s.number("warm_gap", sc.warm_gap);
  }
  cfg.solver.mode = cfg.modes.front();

  if (top.has("output")) {
    const auto o = top.object("output");
    OutputSpec& os = cfg.output;
    os.directory = o.string("directory", os.directory);
    os.fields = o.boolean("fields", os.fields);
    os.queues = o.boolean("queues", os.queues);
    os.beta = o.boolean("beta", os.beta);
    os.summary = o.boolean("summary", os.summary);
    os.plots = o.boolean("plots", os.plots);
  }

  // cross-validation against the network and mesh invariants
  try {
    cfg.costs.validate();
    cfg.solver.validate();
    const Network checked(spec);
    discretize(checked, Grid::make(cfg.dx, cfg.dt, cfg.horizon), cfg.costs.u_max);
    for (const auto& [id, p] : cfg.terminal.profiles) {
      if (!checked.find_link(id)) throw ConfigError("terminal.links." + id + ": unknown link");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

/// Reads and validates a JSON config. Parse errors carry line and column.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  Json root;
  try {
    root = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(root);
}

/// Model for the config's mesh, or for dx = dt = `dx_override` when given.
inline std::shared_ptr<const Model> build_model(const ExperimentConfig& cfg, std::optional<double> dx_override = {}) {
  const double dx = dx_override.value_or(cfg.dx);
  const double dt = dx_override ? dx * cfg.dt / cfg.dx : cfg.dt;
  const Network net(cfg.network);
  return std::make_shared<const Model>(net, cfg.costs, Grid::make(dx, dt, cfg.horizon), cfg.terminal);
}

// ---- result export ---------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One row per (variable, link, sublink position, k); sorted by that key.
inline void write_fields_csv(const Solution& sol, std::ostream& os) {
  const Model& m = *sol.model;
  const auto& dnet = m.dnet;
  const Network& net = dnet.network();
  struct Row {
    std::string variable;
    std::string link;
    int index;
    int k;
    double value;
  };
  std::vector<Row> rows;
  const std::vector<std::pair<std::string, const Field*>> vars{
      {"V", &sol.values.V}, {"rho", &sol.rho()}, {"u", &sol.values.u}};
  for (const auto& [name, f] : vars) {
    for (std::size_t l = 0; l < net.num_links(); ++l) {
      const auto& chain = dnet.chain(static_cast<int>(l));
      for (std::size_t pos = 0; pos < chain.size(); ++pos) {
        for (int k = 0; k < f->levels(); ++k) {
          rows.push_back({name, net.link(static_cast<int>(l)).id, static_cast<int>(pos), k,
                          (*f)(k, static_cast<std::size_t>(chain[pos]))});
        }
      }
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.variable, a.link, a.index, a.k) < std::tie(b.variable, b.link, b.index, b.k);
  });
  os << "variable,parent_link,sublink_index,k,value\n";
  for (const auto& r : rows) {
    os << r.variable << ',' << r.link << ',' << r.index << ',' << r.k << ',' << format_double(r.value) << '\n';
  }
}

/// Original nodes other than the destination, sorted by name.
inline std::vector<int> queued_nodes(const Network& net) {
  std::vector<int> out;
  for (std::size_t i = 0; i < net.num_nodes(); ++i) {
    if (static_cast<int>(i) != net.destination()) out.push_back(static_cast<int>(i));
  }
  std::sort(out.begin(), out.end(), [&](int a, int b) { return net.node_name(a) < net.node_name(b); });
  return out;
}

inline void write_queues_csv(const Solution& sol, std::ostream& os) {
  const Network& net = sol.model->dnet.network();
  os << "node,k,Q\n";
  for (int i : queued_nodes(net)) {
    for (int k = 0; k <= sol.model->steps(); ++k) {
      os << net.node_name(i) << ',' << k << ',' << format_double(sol.queue()(k, static_cast<std::size_t>(i))) << '\n';
    }
  }
}

inline void write_beta_csv(const Solution& sol, std::ostream& os) {
  const auto& dnet = sol.model->dnet;
  const Network& net = dnet.network();
  os << "node,out_link,k,beta\n";
  for (int i : queued_nodes(net)) {
    std::vector<int> outs = net.out_links(i);
    std::sort(outs.begin(), outs.end(), [&](int a, int b) { return net.link(a).id < net.link(b).id; });
    for (int l : outs) {
      const auto e = static_cast<std::size_t>(dnet.chain(l).front());
      for (int k = 0; k < sol.model->steps(); ++k) {
        os << net.node_name(i) << ',' << net.link(l).id << ',' << k << ',' << format_double(sol.values.beta(k, e)) << '\n';
      }
    }
  }
}

inline Json summary_json(const Solution& sol, const std::string& name) {
  const Model& m = *sol.model;
  const Network& net = m.dnet.network();
  const auto& r = sol.residuals;
  const Metrics mt = metrics(sol);
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["name"] = name;
  j["mode"] = to_string(sol.mode);
  j["status"] = to_string(sol.status);
  j["outer_iterations"] = sol.outer_iterations;
  j["inner_iterations"] = sol.inner_iterations;
  j["wall_seconds"] = sol.wall_seconds;
  j["grid"] = {{"dx", m.grid.dx}, {"dt", m.grid.dt}, {"T", m.grid.horizon}, {"steps", m.grid.steps}};
  j["residuals"] = {{"queue_lcp", r.queue_lcp_residual},
                    {"route_complementarity", r.route_comp_residual},
                    {"hjb", r.hjb_residual},
                    {"continuity", r.continuity_residual},
                    {"mass_balance", r.mass_balance_error},
                    {"outer_error_history", r.outer_error_history}};
  Json metrics_j;
  metrics_j["time"] = mt.time;
  metrics_j["average_velocity"] = mt.average_velocity;
  metrics_j["occupied_links"] = mt.occupied_links;
  metrics_j["network_mass"] = mt.network_mass;
  Json pi = Json::object(), q = Json::object();
  for (std::size_t i = 0; i < net.num_nodes(); ++i) {
    pi[net.node_name(static_cast<int>(i))] = mt.pi[i];
    q[net.node_name(static_cast<int>(i))] = mt.queue[i];
  }
  metrics_j["pi"] = std::move(pi);
  metrics_j["queue"] = std::move(q);
  const auto empty = network_empty_time(sol);
  metrics_j["network_empty_time"] = empty ? Json(*empty) : Json(nullptr);
  j["metrics"] = std::move(metrics_j);
  return j;
}

/// Serializes with 17 significant digits so a re-read reproduces every value.
inline std::string dump_json(const Json& j) {
  std::ostringstream os;
  const std::function<void(const Json&, int)> emit = [&](const Json& v, int indent) {
    const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
    if (v.is_object()) {
      if (v.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      bool first = true;
      for (const auto& [key, item] : v.items()) {
        if (!first) os << ",\n";
        first = false;
        os << pad << Json(key).dump() << ": ";
        emit(item, indent + 2);
      }
      os << '\n' << std::string(static_cast<std::size_t>(indent), ' ') << '}';
    } else if (v.is_array()) {
      os << '[';
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ", ";
        emit(v[i], indent + 2);
      }
      os << ']';
    } else if (v.is_number_float()) {
      const double d = v.get<double>();
      if (std::isfinite(d)) {
        os << format_double(d);
      } else {
        os << "null";
      }
    } else {
      os << v.dump();
    }
  };
  emit(j, 0);
  os << '\n';
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return Json::parse(in);
}

/// Two-column plot data, one file per series.
inline void write_series(const std::filesystem::path& path, const std::vector<double>& x, const std::vector<double>& y,
                         const char* ylabel) {
  std::ostringstream os;
  os << "t," << ylabel << '\n';
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
    os << format_double(x[i]) << ',' << format_double(y[i]) << '\n';
  }
  write_text(path, os.str());
}

/// Writes every artifact requested by `out` for one solution into `dir`.
inline void write_artifacts(const Solution& sol, const std::string& name, const OutputSpec& out,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto csv = [&](const char* file, void (*writer)(const Solution&, std::ostream&)) {
    std::ostringstream os;
    writer(sol, os);
    write_text(dir / file, os.str());
  };
  if (out.fields) csv("fields.csv", write_fields_csv);
  if (out.queues) csv("queues.csv", write_queues_csv);
  if (out.beta) csv("beta.csv", write_beta_csv);
  if (out.summary) write_text(dir / "summary.json", dump_json(summary_json(sol, name)));
  if (out.plots) {
    const auto plots = dir / "plots";
    std::filesystem::create_directories(plots);
    const Metrics mt = metrics(sol);
    const Network& net = sol.model->dnet.network();
    write_series(plots / "average_velocity.csv", mt.time, mt.average_velocity, "average_velocity");
    write_series(plots / "occupied_links.csv", mt.time, {mt.occupied_links.begin(), mt.occupied_links.end()},
                 "occupied_links");
    write_series(plots / "network_mass.csv", mt.time, mt.network_mass, "network_mass");
    for (std::size_t i = 0; i < net.num_nodes(); ++i) {
      const std::string n = net.node_name(static_cast<int>(i));
      write_series(plots / ("pi_" + n + ".csv"), mt.time, mt.pi[i], "pi");
      if (static_cast<int>(i) != net.destination()) write_series(plots / ("queue_" + n + ".csv"), mt.time, mt.queue[i], "Q");
    }
  }
}

/// Side-by-side numbers for an MFG and an LWR solution of the same problem.
inline Json comparison_json(const Solution& mfg, const Solution& lwr) {
  const Network& net = mfg.model->dnet.network();
  const Metrics a = metrics(mfg);
  const Metrics b = metrics(lwr);
  Json j;
  Json peak = Json::object();
  for (int i : queued_nodes(net)) {
    const auto& qa = a.queue[static_cast<std::size_t>(i)];
    const auto& qb = b.queue[static_cast<std::size_t>(i)];
    peak[net.node_name(i)] = {{"mfg", *std::max_element(qa.begin(), qa.end())},
                              {"lwr", *std::max_element(qb.begin(), qb.end())}};
  }
  j["max_queue"] = std::move(peak);
  const auto ea = network_empty_time(mfg);
  const auto eb = network_empty_time(lwr);
  j["network_empty_time"] = {{"mfg", ea ? Json(*ea) : Json(nullptr)}, {"lwr", eb ? Json(*eb) : Json(nullptr)}};
  int faster = 0, both = 0;
  for (std::size_t k = 0; k < std::min(a.average_velocity.size(), b.average_velocity.size()); ++k) {
    if (a.occupied_links[k] > 0 && b.occupied_links[k] > 0) {
      ++both;
      if (a.average_velocity[k] >= b.average_velocity[k]) ++faster;
    }
  }
  j["steps_both_occupied"] = both;
  j["steps_mfg_velocity_not_lower"] = faster;
  j["peak_occupied_links"] = {{"mfg", *std::max_element(a.occupied_links.begin(), a.occupied_links.end())},
                              {"lwr", *std::max_element(b.occupied_links.begin(), b.occupied_links.end())}};
  j["status"] = {{"mfg", to_string(mfg.status)}, {"lwr", to_string(lwr.status)}};
  return j;
}

struct RunOptions {
  std::optional<std::vector<Mode>> modes;
  std::optional<std::string> out_dir;
  std::optional<double> dx;
  bool quiet = false;
};

/// Exit codes of `run_experiment`.
inline constexpr int kExitConverged = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNotConverged = 2;

/// Solves every requested mode, writes artifacts (also when a solve does not
/// converge) and returns 0, or 2 if any solve did not converge. Failures to
/// write output propagate as exceptions.
inline int run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  const auto modes = opt.modes.value_or(cfg.modes);
  const std::filesystem::path root = opt.out_dir.value_or(cfg.output.directory);
  const auto model = build_model(cfg, opt.dx);
  std::vector<Solution> sols;
  bool all_converged = true;
  for (Mode mode : modes) {
    SolverConfig sc = cfg.solver;
    sc.mode = mode;
    Solution sol = solve_mfe(model, sc);
    if (!opt.quiet) {
      std::cout << cfg.name << " [" << to_string(mode) << "] " << to_string(sol.status) << " after "
                << sol.outer_iterations << " outer / " << sol.inner_iterations << " inner iterations, "
                << "E = " << sol.residuals.outer_error_history.back() << ", defect "
                << sol.residuals.max_equation_defect() << ", " << sol.wall_seconds << " s\n";
    }
    all_converged = all_converged && sol.status == Status::kConverged;
    write_artifacts(sol, cfg.name, cfg.output, modes.size() > 1 ? root / to_string(mode) : root);
    sols.push_back(std::move(sol));
  }
  if (sols.size() == 2) {
    std::filesystem::create_directories(root);
    write_text(root / "comparison.json", dump_json(comparison_json(sols[0], sols[1])));
  }
  return all_converged ? kExitConverged : kExitNotConverged;
}

}  // namespace mfgdta
