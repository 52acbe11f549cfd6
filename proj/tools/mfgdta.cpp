// Command-line front end: run, convergence, compare, simulate-car.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mfgdta/io.hpp"
#include "mfgdta/validate.hpp"

namespace {

using namespace mfgdta;

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("--dx: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--dx: empty list");
  return out;
}

int cmd_run(const std::string& path, const std::string& mode, const std::string& out, const std::string& dx) {
  const ExperimentConfig cfg = load_config(path);
  RunOptions opt;
  if (!mode.empty()) opt.modes = detail::parse_modes(mode, "--mode");
  if (!out.empty()) opt.out_dir = out;
  if (!dx.empty()) opt.dx = parse_list(dx).front();
  return run_experiment(cfg, opt);
}

int cmd_convergence(const std::string& path, const std::string& mode, const std::string& out, const std::string& dx) {
  const ExperimentConfig cfg = load_config(path);
  SolverConfig sc = cfg.solver;
  if (!mode.empty()) sc.mode = detail::parse_mode(mode, "--mode");
  const auto dxs = parse_list(dx.empty() ? "0.2,0.1,0.05,0.025" : dx);
  const auto study = convergence_study([&](double h) { return *build_model(cfg, h); }, dxs, sc);

  std::ostringstream csv;
  csv << "dx,rho,u,V,beta\n";
  std::printf("%-8s %-12s %-12s %-12s %-12s\n", "dx", "rho", "u", "V", "beta");
  for (const auto& lv : study.levels) {
    std::printf("%-8g %-12.4e %-12.4e %-12.4e %-12.4e%s\n", lv.dx, lv.error.rho, lv.error.u, lv.error.V, lv.error.beta,
                lv.converged ? "" : "  (not converged)");
    csv << format_double(lv.dx) << ',' << format_double(lv.error.rho) << ',' << format_double(lv.error.u) << ','
        << format_double(lv.error.V) << ',' << format_double(lv.error.beta) << '\n';
  }
  std::printf("%-8s %-12.3f %-12.3f %-12.3f %-12.3f\n", "slope", study.slope.rho, study.slope.u, study.slope.V,
              study.slope.beta);
  std::printf("car cost error per mesh:");
  for (double e : study.car_error) std::printf(" %.3e", e);
  std::printf("\n");

  const std::filesystem::path dir = out.empty() ? std::filesystem::path(cfg.output.directory) : std::filesystem::path(out);
  std::filesystem::create_directories(dir);
  write_text(dir / "convergence.csv", csv.str());
  bool ok = true;
  for (const auto& lv : study.levels) ok = ok && lv.converged;
  return ok ? kExitConverged : kExitNotConverged;
}

int cmd_simulate_car(const std::string& path, const std::string& mode, const std::string& origin, double t0,
                     std::optional<std::uint64_t> seed) {
  const ExperimentConfig cfg = load_config(path);
  SolverConfig sc = cfg.solver;
  sc.mode = mode.empty() ? cfg.modes.front() : detail::parse_mode(mode, "--mode");
  const auto model = build_model(cfg);
  const Network& net = model->dnet.network();
  const auto o = net.find_node(origin.empty() ? net.node_name(net.origins().front()) : origin);
  if (!o) throw ConfigError("--origin: unknown node " + origin);
  const Solution sol = solve_mfe(model, sc);
  const CarTrajectory tr = simulate_car(sol, *o, t0, seed ? Routing::sampled(*seed) : Routing::argmin());

  const auto& dnet = model->dnet;
  for (const auto& ev : tr.events) {
    std::printf("%10.5f  %-8s", ev.time, to_string(ev.kind));
    if (ev.sublink >= 0) {
      const Sublink& s = dnet.sublink(ev.sublink);
      std::printf("  link %s cell %d", net.link(s.parent).id.c_str(), s.position);
    } else {
      std::printf("  node %s", dnet.node(ev.node).name.c_str());
    }
    std::printf("\n");
  }
  const int k0 = detail::step_at(t0, model->grid);
  std::printf("running %.6f  queuing %.6f  terminal %.6f  total %.6f\n", tr.running_cost, tr.queuing_cost,
              tr.terminal_cost, tr.cost());
  std::printf("%s  lambda_%s(%g) = %.6f\n", tr.censored() ? "censored at T" : "arrived", net.node_name(*o).c_str(), t0,
              sol.values.lambda(k0, static_cast<std::size_t>(*o)));
  return sol.status == Status::kConverged ? kExitConverged : kExitNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean field driving and routing equilibria of autonomous vehicles"};
  app.require_subcommand(1);

  std::string config, mode, out, dx, origin;
  double t0 = 0.0;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "solve an experiment and write its artifacts");
  auto* conv = app.add_subcommand("convergence", "multigrid study: errors and slopes per variable");
  auto* compare = app.add_subcommand("compare", "solve in MFG and LWR mode and compare");
  auto* car = app.add_subcommand("simulate-car", "drive one car through the solved equilibrium");
  for (auto* sub : {run, conv, compare, car}) {
    sub->add_option("config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
  }
  run->add_option("--mode", mode, "mfg, lwr or both")->check(CLI::IsMember({"mfg", "lwr", "both"}));
  conv->add_option("--mode", mode, "mfg or lwr")->check(CLI::IsMember({"mfg", "lwr"}));
  car->add_option("--mode", mode, "mfg or lwr")->check(CLI::IsMember({"mfg", "lwr"}));
  for (auto* sub : {run, conv, compare}) sub->add_option("--out", out, "output directory");
  run->add_option("--dx", dx, "mesh size (dt scales with it)");
  conv->add_option("--dx", dx, "comma-separated mesh sizes, coarse to fine");
  car->add_option("--origin", origin, "origin node (default: first origin)");
  car->add_option("--t0", t0, "departure time");
  car->add_option("--seed", seed, "sample routes from beta with this seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return cmd_run(config, mode, out, dx);
    if (conv->parsed()) return cmd_convergence(config, mode, out, dx);
    if (compare->parsed()) return cmd_run(config, "both", out, "");
    if (car->parsed()) return cmd_simulate_car(config, mode, origin, t0, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
