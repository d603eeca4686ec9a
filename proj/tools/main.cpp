#include <iostream>

#include <CLI11.hpp>

#include "bsync/cli.hpp"

// breathsync: breath-synchronized envelope generation, a closed-loop
// participant simulator, and the offline physiological analysis pipeline.
int main(int argc, char** argv) {
  CLI::App app{"breath-synchronized music envelopes and physiological analysis"};
  app.require_subcommand(1);

  std::string log_level = "info";
  app.add_option("--log-level", log_level, "info | quiet")->capture_default_str();

  bsync::cli::SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "run the closed-loop cohort simulator");
  simulate->add_option("--participants", sim.participants, "cohort size")->capture_default_str();
  simulate->add_option("--coupling", sim.coupling, "entrainment strength, rad/s")
      ->capture_default_str();
  simulate->add_option("--seed", sim.seed, "master seed")->capture_default_str();
  simulate->add_option("--out", sim.out_dir, "output directory")->required();
  simulate->add_option("--trials", sim.trials, "forewarned trials per block")
      ->capture_default_str();
  simulate->add_option("--eeg-rate", sim.eeg_rate_hz, "EEG sampling rate, Hz")
      ->capture_default_str();
  simulate->add_option("--rate-lo", sim.rate_lo_bpm, "slowest natural breathing rate, bpm")
      ->capture_default_str();
  simulate->add_option("--rate-hi", sim.rate_hi_bpm, "fastest natural breathing rate, bpm")
      ->capture_default_str();
  simulate->add_option("--phase-noise", sim.phase_noise_sigma, "breather phase noise, rad/sqrt(s)")
      ->capture_default_str();
  simulate->add_option("--channels", sim.channels, "all | breathing")->capture_default_str();
  simulate->add_option("--jobs", sim.jobs, "participants simulated in parallel")
      ->capture_default_str();

  bsync::cli::EnvelopeOptions env;
  auto* envelope = app.add_subcommand("envelope", "render a gain curve (and optional demo wav)");
  envelope->add_option("--mode", env.mode, "ft | pt | pe")->required();
  envelope->add_option("--baseline-bpm", env.baseline_bpm, "baseline breathing rate (pt)");
  envelope->add_option("--control-rate", env.control_rate_hz, "control rate, Hz")
      ->capture_default_str();
  envelope->add_option("--duration", env.duration_s, "duration, s (ft/pt)")
      ->capture_default_str();
  envelope->add_option("--breath-in", env.breath_in, "breathing sample stream (pe)");
  envelope->add_option("--out", env.out_csv, "gain curve csv (t,gain)")->required();
  envelope->add_option("--wav-out", env.wav_out, "optional 16-bit mono demo wav");

  bsync::cli::AnalyzeOptions ana;
  auto* analyze = app.add_subcommand("analyze", "extract per-block physiological metrics");
  analyze->add_option("--in", ana.in_dir, "directory of session manifests + jsonl")->required();
  analyze->add_option("--out", ana.out_csv, "metrics csv")->required();
  analyze->add_option("--cz", ana.cz_channel, "EEG channel treated as Cz")->capture_default_str();
  analyze->add_option("--prominence", ana.prominence_nu, "breath peak prominence, nu")
      ->capture_default_str();
  analyze->add_option("--kurtosis-threshold", ana.kurtosis_threshold, "EEG rejection threshold")
      ->capture_default_str();
  std::string kurt_convention = "excess";
  analyze->add_option("--kurtosis-convention", kurt_convention, "excess | raw")
      ->capture_default_str();
  analyze->add_option("--hrv-min-span", ana.hrv_min_span_s, "minimum valid-IBI span, s")
      ->capture_default_str();

  bsync::cli::StatsOptions st;
  auto* statscmd = app.add_subcommand("stats", "box stats, ANOVA, and pairwise tests per metric");
  statscmd->add_option("--in", st.in_csv, "metrics csv")->required();
  statscmd->add_option("--out", st.out_json, "report json")->required();
  statscmd->add_flag("--z-outlier-filter", st.z_outlier_filter,
                     "drop |z| > 3 values per metric/condition first");

  // Let the global --log-level appear after the subcommand name too.
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    bsync::cli::set_log_level(log_level);
    if (*simulate) {
      bsync::cli::cmd_simulate(sim);
    } else if (*envelope) {
      bsync::cli::cmd_envelope(env);
    } else if (*analyze) {
      if (kurt_convention == "raw")
        ana.kurtosis_convention = bsync::physio::KurtosisConvention::raw;
      else if (kurt_convention != "excess")
        bsync::fail(bsync::errc::usage, "--kurtosis-convention must be excess or raw");
      bsync::cli::cmd_analyze(ana);
    } else if (*statscmd) {
      bsync::cli::cmd_stats(st);
    }
  } catch (const bsync::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bsync::cli::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
