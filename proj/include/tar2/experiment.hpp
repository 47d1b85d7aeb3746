#pragma once

// Experiment orchestration behind the command-line subcommands. Every
// command returns a process exit code and writes human-readable messages to
// the supplied streams.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tar2/serialization.hpp"
#include "tar2/theory.hpp"
#include "tar2/training.hpp"

namespace tar2 {

inline constexpr const char* kVersion = "tar2 0.1.0";
inline constexpr int kConfigVersion = 1;

enum ExitCode : int { kExitOk = 0, kExitViolation = 1, kExitConfig = 2, kExitRuntime = 3 };

Json config_to_json(const TrainConfig& cfg);
/// Throws ConfigError whose message starts with the dotted field path.
TrainConfig config_from_json(const Json& j);
/// Parses and validates `text`. Errors are rethrown as ConfigError prefixed
/// with "<source>:<line>:" pointing at the offending token or key.
TrainConfig parse_config(const std::string& text, const std::string& source = "config");
TrainConfig load_config(const std::filesystem::path& path);

// --- run --------------------------------------------------------------------

struct RunOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
};

/// Trains and writes metrics.csv (streamed), model.bin, policy.bin and
/// manifest.json (last, via rename) under `out`.
int cmd_run(const RunOptions& options, std::ostream& log);

struct RunOutcome {
  TrainingResult result;
  double seconds = 0.0;
};
/// The body of cmd_run for an already validated config.
RunOutcome run_into(const TrainConfig& cfg, const std::filesystem::path& out);

// --- verify -----------------------------------------------------------------

enum class VerifySuite { Algebra, Shaping, Gradients, Variance, All };
VerifySuite verify_suite_from_string(const std::string& name);

struct VerifyOptions {
  VerifySuite suite = VerifySuite::All;
  std::uint64_t seed = 0;
  int draws = 1000;
  // Test hook: nudges one temporal weight off the simplex in the first draw.
  bool inject_fault = false;
};

std::vector<CheckReport> run_verify(const VerifyOptions& options);
Json to_json(const CheckReport& report);
/// Prints the JSON report array to `out`; exit 1 on any failed check.
int cmd_verify(const VerifyOptions& options, std::ostream& out);

// --- compare ----------------------------------------------------------------

struct CompareOptions {
  std::filesystem::path config;
  std::vector<std::string> arms;
  int seeds = 5;
  std::uint64_t first_seed = 0;
  std::filesystem::path out;
};

struct SummaryRow {
  std::string arm;
  std::uint64_t seed = 0;
  double final_success = 0.0;
  int episodes_to_090 = -1;
  bool aborted = false;
};

/// Runs every (arm, seed) into out/<arm>/seed_<s>/ and writes out/summary.csv.
int cmd_compare(const CompareOptions& options, std::ostream& log);
std::vector<SummaryRow> read_summary_csv(std::istream& in);

// --- plot -------------------------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<MetricsRow> rows;
};

/// Trailing-window mean of return_env at every episode.
std::vector<double> trailing_mean(const std::vector<MetricsRow>& rows, int window = 100);

/// Arm label of a metrics path: <arm>/seed_<s>/metrics.csv -> arm, otherwise
/// the parent directory name.
std::string series_label(const std::filesystem::path& metrics);

std::string render_svg(const std::vector<PlotSeries>& series, int window = 100);
int cmd_plot(const std::vector<std::filesystem::path>& metrics, const std::filesystem::path& out, std::ostream& log);

}  // namespace tar2
