#pragma once

// Scenario configuration, dataset generation and the gen/solve/recon/check/
// bench commands behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "elastrecon/forward_fd.hpp"
#include "elastrecon/recon.hpp"
#include "elastrecon/synth_fields.hpp"

namespace elastrecon {

enum ExitCode : int {
  kExitOk = 0,
  kExitBadConfig = 2,
  kExitSolverFailure = 3,
  kExitHypothesesFailed = 4,
};

/// Invalid scenario, unstable stiffness, or unreadable dataset (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScenarioKind { Constant, TransverseIsotropic, ScaledAnisotropy, NearConstant, FromFiles };

struct Scenario {
  ScenarioKind kind = ScenarioKind::Constant;

  // Stiffness: exactly one of explicit components, TI parameters, or a seed
  // for a random stable tensor.
  std::optional<std::vector<double>> components;
  std::optional<TIParams> ti;
  std::optional<std::uint64_t> random_seed;

  /// scaled-anisotropy: tau(x) = 1 + amplitude * prod_a sin(pi x_a / L).
  double tau_amplitude = 0.2;
  /// near-constant: C(x) = C0 + delta * s(x) * C1 with the same bump s.
  double delta = 0.0;
  /// C1 for near-constant; C0 when absent.
  std::optional<std::vector<double>> perturbation;

  std::size_t n = 17;
  double length = 1.0;

  /// "mixed": extra_count random combinations of the general family;
  /// "full": the 15 general-family fields.
  std::string extra = "mixed";
  std::size_t extra_count = 7;
  std::uint64_t seed = 1;
  double eta = 0.0;
  bool displacement_noise = false;
  int strain_order = 2;

  double solver_tol = 1e-10;
  std::size_t solver_max_iter = 0;

  ReconConfig recon;
  /// Error norms skip nodes closer than this to the boundary. Negative
  /// selects the default: 0.25 for variable-coefficient kinds, 0 otherwise.
  double error_margin = -1.0;

  std::string input;  // from-files dataset directory

  /// bench: the swept parameter ("eta", "n", "h", "delta") and its values.
  std::string sweep_param;
  std::vector<double> sweep_values;

  bool variable_coefficients() const {
    return kind == ScenarioKind::ScaledAnisotropy || kind == ScenarioKind::NearConstant;
  }
  double resolved_error_margin() const;
};

/// Throws ConfigError on unknown keys' values, missing or duplicated stiffness
/// specs, or out-of-range numbers.
Scenario parse_scenario(const nlohmann::json& j);
Scenario load_scenario(const std::filesystem::path& path);
nlohmann::ordered_json scenario_to_json(const Scenario& s);

std::string kind_name(ScenarioKind k);

/// The constant tensor of constant/ti scenarios, or C0 of the variable kinds.
/// Throws ConfigError reporting lambda_min(c') when it is not stable.
Stiffness base_stiffness(const Scenario& s);
/// C(x) of the scenario.
Stiffness stiffness_at_point(const Scenario& s, const Vec3& x);
/// Exact (div C)(x), 18 components.
std::array<double, 18> divc_at_point(const Scenario& s, const Vec3& x);

struct Dataset {
  Grid grid;
  Symmetry symmetry = Symmetry::Full;
  std::vector<Field> displacements;
  MeasurementSet measurements;
  std::optional<Field> c_true;
  std::optional<Field> divc_true;
  /// Forward-solver iterations and residuals, one per solution, when solved.
  std::vector<std::pair<std::size_t, double>> solver_stats;
};

/// Polynomial fields for constant/ti kinds; forward solves with the traces of
/// the base tensor's polynomial fields as Dirichlet data for the others (or
/// for every kind when `force_solve`). Applies the configured noise.
/// Throws ConvergenceError when a forward solve fails.
Dataset generate_dataset(const Scenario& s, bool force_solve = false);

void write_dataset(const Dataset& d, const Scenario& s, const std::filesystem::path& dir);
/// Throws ConfigError when the manifest or a field file is missing or malformed.
Dataset read_dataset(const std::filesystem::path& dir);

struct Metrics {
  double f1_min = 0.0, f2_min = 0.0, masked_fraction = 1.0;
  std::optional<double> err_ctilde_p0, err_ctilde_p1, err_tau_p0, err_tau_p1, err_divc_p0, err_divc_p1;
};

/// Reference tau for the base point (from ground truth when available), then
/// the full reconstruction.
ReconReport run_reconstruction(const Dataset& d, const Scenario& s);
Metrics evaluate(const Dataset& d, const ReconReport& r, const Scenario& s);
nlohmann::ordered_json report_json(const Metrics& m, const ReconReport& r, const Scenario& s);

int cmd_gen(const Scenario& s, const std::filesystem::path& out, std::ostream& log);
int cmd_solve(const Scenario& s, const std::filesystem::path& out, std::ostream& log);
int cmd_recon(const std::filesystem::path& in, const Scenario& s, const std::filesystem::path& out, std::ostream& log);
/// Validates a scenario (stability of its tensor) or, given a directory, a dataset.
int cmd_check(const std::optional<Scenario>& s, const std::optional<std::filesystem::path>& in, std::ostream& log);
int cmd_bench(const Scenario& s, const std::filesystem::path& out, std::ostream& log);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace elastrecon
