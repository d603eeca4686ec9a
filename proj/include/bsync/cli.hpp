#pragma once

#include <cstdint>
#include <string>

#include "bsync/physio.hpp"

// Subcommand implementations behind the `breathsync` binary. They are plain
// functions over option structs so the test suites can run the same code
// paths in-process. Every run with identical options and seed produces
// byte-identical outputs; nothing is written outside the designated output
// paths.
namespace bsync::cli {

// "info" (default) prints per-session notes on stderr; "quiet" suppresses
// them. Errors are always reported.
void set_log_level(const std::string& level);

struct SimulateOptions {
  int participants = 19;
  double coupling = 0.3;
  std::uint64_t seed = 42;
  std::string out_dir;
  int trials = 40;
  double eeg_rate_hz = 125.0;
  double rate_lo_bpm = 10.0;
  double rate_hi_bpm = 18.0;
  double phase_noise_sigma = 0.08;
  std::string channels = "all";  // or "breathing"
  int jobs = 1;
};

// Writes <pid>.manifest.json and <pid>.jsonl per participant.
void cmd_simulate(const SimulateOptions& opt);

struct EnvelopeOptions {
  std::string mode;  // ft | pt | pe
  double baseline_bpm = 0.0;
  double control_rate_hz = 100.0;
  double duration_s = 60.0;
  std::string breath_in;  // PE: record-per-line breathing samples
  std::string out_csv;    // columns t,gain
  std::string wav_out;    // optional audible demo
};

void cmd_envelope(const EnvelopeOptions& opt);

struct AnalyzeOptions {
  std::string in_dir;
  std::string out_csv;
  std::string cz_channel = "eeg_ch01";
  double prominence_nu = 2.0;
  double kurtosis_threshold = 5.0;
  physio::KurtosisConvention kurtosis_convention = physio::KurtosisConvention::excess;
  double hrv_min_span_s = 120.0;
};

// One row per (participant, condition, metric); see README for the metric
// list. Metrics a block cannot support are omitted with a note on stderr,
// never fabricated.
void cmd_analyze(const AnalyzeOptions& opt);

struct StatsOptions {
  std::string in_csv;
  std::string out_json;
  bool z_outlier_filter = false;  // drop |z| > 3 per metric/condition first
};

// Per-metric box stats, one-way ANOVA across the four conditions, and the
// three pairwise tests of each intervention against Baseline.
void cmd_stats(const StatsOptions& opt);

// Maps an exception to the process exit code (1 usage, 2 data/validation).
int exit_code_for(const Error& e);

}  // namespace bsync::cli
