#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "wagma/netsim.hpp"
#include "wagma/optim.hpp"
#include "wagma/problems.hpp"
#include "wagma/training.hpp"

namespace wagma::harness {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kToolVersion = "0.3.0";
inline constexpr std::string_view kOutputRootEnv = "WAGMA_OUTPUT_ROOT";
inline constexpr std::string_view kMetricsHeader =
    "iteration,sim_time_ms,loss_mu,grad_norm_sq_mu,gamma,max_staleness,msgs_total,"
    "bytes_total";

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitProtocol = 3,
  kExitDivergence = 4,
  kExitBudget = 5,
};

/// Maps the exception currently being handled to an exit code.
int exit_code_for_current_exception();

struct RunConfig {
  optim::OptimizerConfig optimizer;
  problems::ProblemSpec problem = problems::QuadraticSpec{};
  netsim::DelayModel delays;
  std::uint64_t seed = 0;
  /// Relative paths resolve against the output root.
  std::string output_dir = "runs/default";

  /// Full validation: optimizer, delay model and problem. Returns warnings.
  std::vector<std::string> validate() const;

  bool operator==(const RunConfig&) const = default;
};

/// Strict: unknown keys, wrong types and a missing or unsupported
/// schema_version raise ConfigError. Absent keys take their defaults.
RunConfig parse_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

/// Sets a dotted key ("problem.d", "delays.straggler.victims") in a config
/// document. `value` is read as JSON when it parses, otherwise as a string.
void set_dotted(nlohmann::json& doc, std::string_view key, std::string_view value);

// ---------------------------------------------------------------------------
// Artifacts.

void write_metrics_csv(std::ostream& out, const std::vector<training::MetricsRecord>& rows);
std::string metrics_csv(const std::vector<training::MetricsRecord>& rows);
std::string sha256_hex(std::string_view data);
/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::filesystem::path output_root();
std::filesystem::path resolve_output_dir(const RunConfig& config,
                                         const std::filesystem::path& root);

struct RunArtifacts {
  training::TrainingResult result;
  std::filesystem::path directory;
  std::filesystem::path metrics_path;
  std::filesystem::path manifest_path;
  std::string metrics_sha256;
  std::vector<std::string> warnings;
};

/// Validates, trains, and writes metrics.csv then manifest.json into the
/// resolved output directory. Nothing is written if validation fails.
RunArtifacts execute_run(const RunConfig& config, const std::filesystem::path& root,
                         std::ostream* trace = nullptr);

// ---------------------------------------------------------------------------
// Comparison and sweeps.

/// "local_sgd:tau=1,S=2" -> base with mode and the listed overrides applied.
/// Only mode-specific fields (S, tau, alpha, beta) may be overridden.
RunConfig apply_mode_token(const RunConfig& base, std::string_view token);

/// Throws ConfigError unless all configs share P, T, b, eta, update rule,
/// problem, delay model and seed.
void check_comparable(const std::vector<RunConfig>& configs);

struct CompareRow {
  std::string label;
  double final_loss = 0.0;
  double final_grad_norm_sq = 0.0;
  double sim_time_ms = 0.0;
  double iterations_per_sim_second = 0.0;
  std::uint64_t msgs_total = 0;
  std::optional<double> final_accuracy;
};

std::vector<CompareRow> run_compare(const std::vector<RunConfig>& configs,
                                    const std::vector<std::string>& labels);
void print_compare_table(std::ostream& out, const std::vector<CompareRow>& rows);

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

/// "key=v1,v2,..." -> axis.
SweepAxis parse_vary(std::string_view spec);

struct SweepPoint {
  std::string label;
  RunConfig config;
};

/// Cartesian product over the axes, in order. Each point writes into
/// <output_dir>/<key=value>[_<key=value>...].
std::vector<SweepPoint> expand_sweep(const RunConfig& base, const std::vector<SweepAxis>& axes);

// ---------------------------------------------------------------------------
// Invariant suite.

struct VerifyOptions {
  /// Use the literal shift-based mask update instead of the rotating rule.
  bool literal_masks = false;
  /// Inject a bit flip into one phase payload of every collective scenario.
  bool corrupt_phase = false;
  std::uint32_t scenarios = 240;
  std::uint64_t seed = 2024;
};

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<PropertyResult> run_verify(const VerifyOptions& options,
                                       std::ostream* progress = nullptr);

}  // namespace wagma::harness
