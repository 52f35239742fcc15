// Command-line front end: gen | solve | recon | check | bench.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "elastrecon/error.hpp"
#include "elastrecon/harness.hpp"

namespace fs = std::filesystem;
using namespace elastrecon;

namespace {

struct Overrides {
  std::string config;
  std::string out = "out";
  std::string method;
  std::string tau;
  std::optional<std::uint64_t> seed;
  std::optional<double> eta;
  std::optional<std::size_t> grid;
  std::optional<std::size_t> threads;
  std::string input;
};

// Scenario stored alongside a dataset by gen/solve, if any.
std::optional<Scenario> dataset_scenario(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) return std::nullopt;
  const auto m = nlohmann::json::parse(is, nullptr, false);
  if (m.is_discarded() || !m.contains("scenario")) return std::nullopt;
  return parse_scenario(m.at("scenario"));
}

void apply(const Overrides& o, Scenario& s) {
  if (o.method == "nullspace") s.recon.method = NormalMethod::Nullspace;
  if (o.method == "crossprod") s.recon.method = NormalMethod::CrossprodSum;
  if (o.tau == "path") s.recon.tau_method = TauMethod::Path;
  if (o.tau == "poisson") s.recon.tau_method = TauMethod::Poisson;
  if (o.seed) s.seed = *o.seed;
  if (o.eta) {
    if (!(*o.eta >= 0.0)) throw ConfigError("--eta must be non-negative");
    s.eta = *o.eta;
  }
  if (o.grid) {
    if (*o.grid < 3) throw ConfigError("--grid must be at least 3");
    s.n = *o.grid;
  }
  if (o.threads) s.recon.threads = std::max<std::size_t>(1, *o.threads);
}

Scenario scenario_for(const Overrides& o, bool required) {
  Scenario s;
  if (!o.config.empty()) {
    s = load_scenario(o.config);
  } else if (required) {
    throw ConfigError("--config is required for this command");
  } else if (auto stored = o.input.empty() ? std::nullopt : dataset_scenario(o.input)) {
    s = *stored;
  } else {
    s.kind = ScenarioKind::FromFiles;
  }
  apply(o, s);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anisotropic elasticity reconstruction from internal displacement fields"};
  app.fallthrough();
  app.require_subcommand(1, 1);

  Overrides o;
  app.add_option("--config", o.config, "Scenario JSON file");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--method", o.method, "Hyperplane normal method")->check(CLI::IsMember({"nullspace", "crossprod"}));
  app.add_option("--tau", o.tau, "Scalar factor recovery")->check(CLI::IsMember({"path", "poisson"}));
  app.add_option("--seed", o.seed, "Seed for field families and noise");
  app.add_option("--eta", o.eta, "Relative noise amplitude");
  app.add_option("--grid", o.grid, "Nodes per axis");
  app.add_option("--threads", o.threads, "Worker threads");

  auto* gen = app.add_subcommand("gen", "Sample polynomial solutions of a scenario");
  auto* solve = app.add_subcommand("solve", "Forward-solve a scenario with finite differences");
  auto* recon = app.add_subcommand("recon", "Reconstruct from a dataset directory");
  recon->add_option("input", o.input, "Dataset directory")->required();
  auto* check = app.add_subcommand("check", "Validate a scenario or a dataset directory");
  check->add_option("input", o.input, "Dataset directory");
  auto* bench = app.add_subcommand("bench", "Run a parameter sweep and write a CSV table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitBadConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen(scenario_for(o, true), o.out, std::cout);
    if (solve->parsed()) return cmd_solve(scenario_for(o, true), o.out, std::cout);
    if (recon->parsed()) return cmd_recon(o.input, scenario_for(o, false), o.out, std::cout);
    if (bench->parsed()) return cmd_bench(scenario_for(o, true), o.out, std::cout);
    std::optional<Scenario> s;
    if (!o.config.empty()) s = scenario_for(o, true);
    std::optional<fs::path> in;
    if (!o.input.empty()) in = o.input;
    return cmd_check(s, in, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadConfig;
  } catch (const ConvergenceError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kExitSolverFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
