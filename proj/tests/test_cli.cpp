#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bsync/cli.hpp"
#include "bsync/simloop.hpp"
#include "bsync/streams.hpp"

using namespace bsync;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bsync_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("envelope subcommand writes a gain curve and a demo wav") {
  const auto dir = fresh_dir("envelope");
  cli::EnvelopeOptions opt;
  opt.mode = "ft";
  opt.duration_s = 30.0;
  opt.out_csv = (dir / "gains.csv").string();
  opt.wav_out = (dir / "demo.wav").string();
  cli::cmd_envelope(opt);

  const auto csv = slurp(dir / "gains.csv");
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "t,gain");
  int rows = 0;
  double min_gain = 2.0, max_gain = 0.0;
  while (std::getline(ss, line)) {
    ++rows;
    const auto comma = line.find(',');
    const double g = std::stod(line.substr(comma + 1));
    min_gain = std::min(min_gain, g);
    max_gain = std::max(max_gain, g);
  }
  CHECK(rows == 3000);
  CHECK(min_gain >= 0.5);
  CHECK(max_gain <= 1.0);

  const auto wav = slurp(dir / "demo.wav");
  CHECK(wav.size() > 44);
  CHECK(wav.substr(0, 4) == "RIFF");
  CHECK(wav.substr(8, 4) == "WAVE");

  // pt needs a baseline, pe needs a stream.
  cli::EnvelopeOptions bad = opt;
  bad.mode = "pt";
  CHECK_THROWS_AS(cli::cmd_envelope(bad), Error);
  bad.mode = "pe";
  CHECK_THROWS_AS(cli::cmd_envelope(bad), Error);
  bad.mode = "nope";
  CHECK_THROWS_AS(cli::cmd_envelope(bad), Error);
}

TEST_CASE("envelope pe mode follows a recorded breathing file") {
  const auto dir = fresh_dir("envelope_pe");
  // Write a breathing stream in the record-per-line format.
  const fs::path breath = dir / "breath.jsonl";
  {
    std::ofstream out(breath);
    for (int i = 0; i < 17 * 60; ++i) {
      const double t = i / 17.0;
      out << "{\"t\": " << t << ", \"ch\": \"breathing\", \"v\": "
          << 3.0 * std::sin(2.0 * 3.14159265358979 * 0.2 * t) << "}\n";
    }
  }
  cli::EnvelopeOptions opt;
  opt.mode = "pe";
  opt.breath_in = breath.string();
  opt.out_csv = (dir / "gains.csv").string();
  cli::cmd_envelope(opt);
  const auto csv = slurp(dir / "gains.csv");
  CHECK(csv.rfind("t,gain", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') > 5000);
}

TEST_CASE("simulate, analyze, stats chain produces the full report") {
  const auto dir = fresh_dir("chain");
  cli::SimulateOptions sim;
  sim.participants = 3;
  sim.trials = 6;
  sim.eeg_rate_hz = 125.0;
  sim.seed = 5;
  sim.out_dir = (dir / "sessions").string();
  cli::cmd_simulate(sim);

  CHECK(fs::exists(dir / "sessions" / "p01.manifest.json"));
  CHECK(fs::exists(dir / "sessions" / "p01.jsonl"));
  CHECK(fs::exists(dir / "sessions" / "p03.jsonl"));

  cli::AnalyzeOptions ana;
  ana.in_dir = sim.out_dir;
  ana.out_csv = (dir / "metrics.csv").string();
  ana.hrv_min_span_s = 30.0;  // blocks are short in this fixture
  cli::cmd_analyze(ana);

  const auto metrics = slurp(dir / "metrics.csv");
  CHECK(metrics.rfind("participant,condition,metric,value", 0) == 0);
  CHECK(metrics.find("mean_z_iri") != std::string::npos);
  CHECK(metrics.find("eda_slope_left") != std::string::npos);
  CHECK(metrics.find("mean_z_ibi") != std::string::npos);
  CHECK(metrics.find("cnv_late_uv") != std::string::npos);
  CHECK(metrics.find("sdnn_ms") != std::string::npos);

  cli::StatsOptions st;
  st.in_csv = ana.out_csv;
  st.out_json = (dir / "report.json").string();
  cli::cmd_stats(st);

  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  REQUIRE(report.contains("metrics"));
  REQUIRE(report["metrics"].contains("mean_z_iri"));
  const auto& mz = report["metrics"]["mean_z_iri"];
  CHECK(mz.contains("anova"));
  CHECK(mz["anova"].contains("f"));
  CHECK(mz["anova"]["df_between"] == 3);
  CHECK(mz.contains("pairwise"));
  CHECK(mz["pairwise"].contains("Baseline_vs_PT"));
  CHECK(mz["pairwise"]["Baseline_vs_PT"].contains("student_t"));
  CHECK(mz["pairwise"]["Baseline_vs_PT"].contains("welch_t"));
  CHECK(mz["pairwise"]["Baseline_vs_PT"].contains("mann_whitney_u"));
  for (const auto& cond : {"Baseline", "FT", "PT", "PE"})
    CHECK(mz["conditions"].contains(cond));
}

TEST_CASE("a session missing a block names the absent condition") {
  const auto dir = fresh_dir("missing_block");
  // Simulate one participant, then drop the PT block's markers.
  simloop::CohortSpec cohort;
  cohort.n_participants = 2;
  cohort.trials_per_block = 3;
  cohort.channels = {false, false, false};
  cohort.master_seed = 9;
  auto session = simloop::simulate_participant(cohort, 0);
  auto& markers = session.recording.markers;
  bool dropping = false;
  for (auto it = markers.begin(); it != markers.end();) {
    if (it->kind == streams::MarkerKind::BlockStart &&
        it->condition == streams::Condition::PT)
      dropping = true;
    const bool drop = dropping;
    const bool end = it->kind == streams::MarkerKind::BlockEnd;
    it = drop ? markers.erase(it) : ++it;
    if (drop && end) dropping = false;
  }
  {
    std::ofstream mf(dir / "p01.manifest.json");
    mf << session.manifest.to_json_string();
    std::ofstream sf(dir / "p01.jsonl");
    streams::serialize(session.recording, sf);
  }
  cli::AnalyzeOptions ana;
  ana.in_dir = dir.string();
  ana.out_csv = (dir / "metrics.csv").string();
  try {
    cli::cmd_analyze(ana);
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("PT") != std::string::npos);
    CHECK(cli::exit_code_for(e) == 2);
  }
}

TEST_CASE("usage errors map to exit code 1, data errors to 2") {
  CHECK(cli::exit_code_for(Error(errc::usage, "x")) == 1);
  CHECK(cli::exit_code_for(Error(errc::parse, "x")) == 2);
  CHECK(cli::exit_code_for(Error(errc::validation, "x")) == 2);
  CHECK(cli::exit_code_for(Error(errc::io, "x")) == 2);

  cli::SimulateOptions sim;
  sim.out_dir = "";
  CHECK_THROWS_AS(cli::cmd_simulate(sim), Error);
  cli::StatsOptions st;
  st.in_csv = "/nonexistent/metrics.csv";
  st.out_json = "/tmp/never.json";
  CHECK_THROWS_AS(cli::cmd_stats(st), Error);
}

TEST_CASE("the in-process pipeline is byte-deterministic") {
  const auto dir_a = fresh_dir("det_a");
  const auto dir_b = fresh_dir("det_b");
  for (const auto& dir : {dir_a, dir_b}) {
    cli::SimulateOptions sim;
    sim.participants = 2;
    sim.trials = 3;
    sim.eeg_rate_hz = 125.0;
    sim.seed = 31;
    sim.out_dir = (dir / "sessions").string();
    cli::cmd_simulate(sim);
    cli::AnalyzeOptions ana;
    ana.in_dir = sim.out_dir;
    ana.out_csv = (dir / "metrics.csv").string();
    ana.hrv_min_span_s = 20.0;
    cli::cmd_analyze(ana);
    cli::StatsOptions st;
    st.in_csv = ana.out_csv;
    st.out_json = (dir / "report.json").string();
    cli::cmd_stats(st);
  }
  CHECK(slurp(dir_a / "sessions" / "p01.jsonl") == slurp(dir_b / "sessions" / "p01.jsonl"));
  CHECK(slurp(dir_a / "sessions" / "p02.manifest.json") ==
        slurp(dir_b / "sessions" / "p02.manifest.json"));
  CHECK(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));
  CHECK(slurp(dir_a / "report.json") == slurp(dir_b / "report.json"));
}
