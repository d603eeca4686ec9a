#include "bsync/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "bsync/breath.hpp"
#include "bsync/dsp.hpp"
#include "bsync/engine.hpp"
#include "bsync/simloop.hpp"
#include "bsync/stats.hpp"
#include "bsync/streams.hpp"
#include "bsync/wav.hpp"

namespace bsync::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Fixed 9-significant-digit float formatting keeps the CSV schema stable and
// runs byte-identical.
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

const std::vector<std::string>& metric_order() {
  static const std::vector<std::string> order{
      "mean_z_iri",   "var_z_iri", "eda_slope_left", "eda_slope_right",
      "mean_z_ibi",   "sdnn_ms",   "rmssd_ms",       "pnn50_fraction",
      "lf_power",     "hf_power",  "lf_hf_ratio",    "sd1_ms",
      "sd2_ms",       "cnv_early_uv", "cnv_mid_uv",  "cnv_late_uv"};
  return order;
}

struct MetricRow {
  std::string participant;
  streams::Condition condition;
  std::string metric;
  double value;
};

bool g_quiet = false;

void note(const std::string& msg) {
  if (!g_quiet) std::cerr << "note: " << msg << "\n";
}

}  // namespace

void set_log_level(const std::string& level) {
  if (level == "quiet")
    g_quiet = true;
  else if (level == "info")
    g_quiet = false;
  else
    fail(errc::usage, "--log-level must be info or quiet");
}

int exit_code_for(const Error& e) { return e.code() == errc::usage ? 1 : 2; }

void cmd_simulate(const SimulateOptions& opt) {
  if (opt.out_dir.empty()) fail(errc::usage, "simulate: --out is required");
  if (opt.participants < 2) fail(errc::usage, "simulate: need at least 2 participants");
  if (opt.channels != "all" && opt.channels != "breathing")
    fail(errc::usage, "simulate: --channels must be all or breathing");

  simloop::CohortSpec cohort;
  cohort.n_participants = opt.participants;
  cohort.coupling_lo = cohort.coupling_hi = opt.coupling;
  cohort.master_seed = opt.seed;
  cohort.trials_per_block = opt.trials;
  cohort.eeg_rate_hz = opt.eeg_rate_hz;
  cohort.rate_lo_bpm = opt.rate_lo_bpm;
  cohort.rate_hi_bpm = opt.rate_hi_bpm;
  cohort.phase_noise_sigma = opt.phase_noise_sigma;
  cohort.jobs = opt.jobs;
  if (opt.channels == "breathing") cohort.channels = {false, false, false};

  fs::create_directories(opt.out_dir);
  const auto sessions = simloop::run_closed_loop(cohort);
  for (const auto& s : sessions) {
    const fs::path base = fs::path(opt.out_dir) / s.recording.participant_id;
    {
      std::ofstream mf(base.string() + ".manifest.json");
      if (!mf) fail(errc::io, "cannot write " + base.string() + ".manifest.json");
      mf << s.manifest.to_json_string();
    }
    {
      std::ofstream sf(base.string() + ".jsonl");
      if (!sf) fail(errc::io, "cannot write " + base.string() + ".jsonl");
      streams::serialize(s.recording, sf);
    }
  }
}

namespace {

streams::SignalTrack load_breathing_stream(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open " + path);
  std::vector<double> ts, vs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(errc::parse, path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("ch")) continue;  // markers are irrelevant here
    if (j["ch"].get<std::string>() != "breathing") continue;
    ts.push_back(j.at("t").get<double>());
    vs.push_back(j.at("v").get<double>());
  }
  if (ts.size() < 2) fail(errc::validation, path + ": no breathing samples found");

  std::vector<double> dt(ts.size() - 1);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) dt[i] = ts[i + 1] - ts[i];
  std::nth_element(dt.begin(), dt.begin() + static_cast<std::ptrdiff_t>(dt.size() / 2), dt.end());
  const double median_dt = dt[dt.size() / 2];
  const double rate = median_dt > 0.0 ? 1.0 / median_dt : 17.0;

  streams::SignalTrack track("breathing", streams::Unit::nu, rate);
  for (std::size_t i = 0; i < ts.size(); ++i) track.append(ts[i], vs[i]);
  return track;
}

}  // namespace

void cmd_envelope(const EnvelopeOptions& opt) {
  if (opt.out_csv.empty()) fail(errc::usage, "envelope: --out is required");

  engine::GainCurve curve;
  if (opt.mode == "ft") {
    curve = engine::render_gain_curve(engine::FixedTempo{}, opt.duration_s, opt.control_rate_hz);
  } else if (opt.mode == "pt") {
    if (!(opt.baseline_bpm > 0.0)) fail(errc::usage, "envelope: pt requires --baseline-bpm");
    curve = engine::render_gain_curve(engine::PersonalizedTempo{opt.baseline_bpm}, opt.duration_s,
                                      opt.control_rate_hz);
  } else if (opt.mode == "pe") {
    if (opt.breath_in.empty()) fail(errc::usage, "envelope: pe requires --breath-in");
    const auto track = load_breathing_stream(opt.breath_in);
    curve = engine::render_gain_curve(engine::PersonalizedEnvelope{}, track, opt.control_rate_hz);
  } else {
    fail(errc::usage, "envelope: --mode must be ft, pt or pe");
  }

  {
    std::ofstream out(opt.out_csv);
    if (!out) fail(errc::io, "cannot write " + opt.out_csv);
    out << "t,gain\n";
    for (Index k = 0; k < curve.gains.size(); ++k) {
      const double t = static_cast<double>(k) / curve.control_rate_hz;
      out << fmt(t) << ',' << fmt(curve.gains[k]) << '\n';
    }
  }

  if (!opt.wav_out.empty()) {
    const auto drone = engine::synth_drone(curve.duration_s());
    write_wav_pcm16(opt.wav_out, engine::apply_gain(drone, curve), 44100.0);
  }
}

namespace {

// Everything extracted from one session. Omitted metrics stay absent.
std::vector<MetricRow> analyze_session(const streams::SessionRecording& rec,
                                       const AnalyzeOptions& opt) {
  std::vector<MetricRow> rows;
  const auto& pid = rec.participant_id;
  auto push = [&](streams::Condition c, const std::string& metric, double value) {
    rows.push_back({pid, c, metric, value});
  };

  std::vector<streams::BlockView> blocks;
  for (const auto c : rec.condition_order) blocks.push_back(streams::slice_block(rec, c));

  // ---- breathing: peaks per block, z over the session's pooled intervals.
  {
    std::vector<breath::IriSeries> iris;
    bool any = false;
    for (const auto& block : blocks) {
      const auto& track = block.track("breathing");
      breath::IriSeries iri;
      if (track.size() >= 3) {
        const auto uniform = streams::resample_uniform(track, track.nominal_rate_hz());
        const auto lp = dsp::design_butterworth(
            dsp::FilterSpec::lowpass(4, 1.0, uniform.nominal_rate_hz()));
        const ArrayXd filtered = dsp::filter_zero_phase(uniform.values(), lp);
        const auto peaks = breath::detect_breath_peaks(uniform.times(), filtered, opt.prominence_nu);
        if (peaks.size() >= 2) {
          iri = breath::compute_iri(peaks);
          any = true;
        }
      }
      iris.push_back(std::move(iri));
    }
    if (any) {
      const auto session = breath::session_z_iri(iris);
      const auto metrics = breath::block_breath_metrics(session);
      for (std::size_t b = 0; b < metrics.size(); ++b) {
        if (metrics[b].mean_z_iri) {
          push(blocks[b].condition, "mean_z_iri", *metrics[b].mean_z_iri);
          push(blocks[b].condition, "var_z_iri", *metrics[b].var_z_iri);
        } else {
          note(pid + " " + to_string(blocks[b].condition) + ": no breath intervals");
        }
      }
    } else {
      note(pid + ": breathing analysis unavailable");
    }
  }

  // ---- EDA: session-level filter + z-score, slope per block per side.
  for (const auto* side : {"eda_left", "eda_right"}) {
    const auto it = rec.tracks.find(side);
    if (it == rec.tracks.end() || it->second.size() < 2) continue;
    try {
      const auto uniform = streams::resample_uniform(it->second, it->second.nominal_rate_hz());
      const ArrayXd z = physio::eda_preprocess(uniform);
      const auto times = uniform.times();
      const physio::Side which = side[4] == 'l' ? physio::Side::left : physio::Side::right;
      const std::string metric =
          std::string("eda_slope_") + (which == physio::Side::left ? "left" : "right");
      for (const auto& block : blocks) {
        Index lo = 0, hi = 0;
        for (Index i = 0; i < times.size(); ++i) {
          if (times[i] < block.start_t) lo = i + 1;
          if (times[i] <= block.end_t) hi = i + 1;
        }
        if (hi - lo >= 2) {
          const auto m =
              physio::eda_block_metric(z.segment(lo, hi - lo), uniform.nominal_rate_hz(), which);
          push(block.condition, metric, m.slope_metric);
        } else {
          note(pid + " " + to_string(block.condition) + ": " + side + " block too short");
        }
      }
    } catch (const Error& e) {
      note(pid + ": " + side + ": " + e.what());
    }
  }

  // ---- ECG: beats per block, z_IBI over the session's pooled intervals.
  if (rec.tracks.count("ecg") != 0) {
    std::vector<physio::BeatSeries> beats;
    Index total = 0;
    for (const auto& block : blocks) {
      physio::BeatSeries bs;
      const auto& track = block.track("ecg");
      if (track.size() >= 2 && track.t_back() - track.t_front() >= 10.0) {
        const auto uniform = streams::resample_uniform(track, track.nominal_rate_hz());
        std::vector<std::string> warnings;
        bs = physio::pan_tompkins(uniform, {}, &warnings);
        for (const auto& w : warnings) note(pid + ": " + w);
      }
      total += bs.ibi_ms.size();
      beats.push_back(std::move(bs));
    }
    if (total >= 2) {
      try {
        physio::session_z_ibi(beats);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
          if (beats[b].z_ibi.size() > 0)
            push(blocks[b].condition, "mean_z_ibi", beats[b].z_ibi.mean());
        }
      } catch (const Error& e) {
        note(pid + ": z_ibi: " + e.what());
      }
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto hrv = physio::hrv_features_for_block(beats[b], opt.hrv_min_span_s);
        if (!hrv) {
          note(pid + " " + to_string(blocks[b].condition) + ": block excluded from HRV (<" +
               std::to_string(static_cast<int>(opt.hrv_min_span_s)) + " s of valid IBIs)");
          continue;
        }
        push(blocks[b].condition, "sdnn_ms", hrv->sdnn_ms);
        push(blocks[b].condition, "rmssd_ms", hrv->rmssd_ms);
        push(blocks[b].condition, "pnn50_fraction", hrv->pnn50_fraction);
        push(blocks[b].condition, "lf_power", hrv->lf_power);
        push(blocks[b].condition, "hf_power", hrv->hf_power);
        push(blocks[b].condition, "lf_hf_ratio", hrv->lf_hf_ratio);
        push(blocks[b].condition, "sd1_ms", hrv->sd1_ms);
        push(blocks[b].condition, "sd2_ms", hrv->sd2_ms);
      }
    }
  }

  // ---- EEG: whole-recording cleanup, CNV per block from the Cz epochs.
  {
    std::vector<std::string> ids;
    for (const auto& [id, track] : rec.tracks) {
      if (id.rfind("eeg_", 0) == 0 && track.size() >= 2) ids.push_back(id);
    }
    if (ids.size() >= 2) {
      // Common uniform grid over the shared span.
      double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
      double fs = 0.0;
      for (const auto& id : ids) {
        const auto& track = rec.track(id);
        t0 = std::max(t0, track.t_front());
        t1 = std::min(t1, track.t_back());
        fs = track.nominal_rate_hz();
      }
      physio::EegChannels channels;
      channels.fs_hz = fs;
      bool ok = true;
      std::vector<streams::SignalTrack> uniform;
      for (const auto& id : ids) {
        auto sliced = rec.track(id).slice(t0, t1);
        if (sliced.size() < 2) {
          ok = false;
          break;
        }
        uniform.push_back(streams::resample_uniform(sliced, fs));
      }
      if (ok) {
        // The epoch indexing is anchored to the resampled grid's own start.
        channels.t0_s = uniform.front().t_front();
        const Index n_cols = uniform.front().size();
        channels.data.resize(static_cast<Index>(ids.size()), n_cols);
        for (std::size_t c = 0; c < ids.size(); ++c) {
          if (uniform[c].size() != n_cols || uniform[c].t_front() != channels.t0_s) {
            ok = false;
            break;
          }
          channels.ids.push_back(ids[c]);
          channels.data.row(static_cast<Index>(c)) = uniform[c].values().transpose();
        }
      }
      if (!ok) note(pid + ": EEG channels lack a shared uniform grid; CNV unavailable");
      if (ok) {
        try {
          const auto clean =
              physio::eeg_preprocess(channels, opt.kurtosis_threshold, opt.kurtosis_convention);
          for (const auto& id : clean.rejected_ids)
            note(pid + ": channel " + id + " rejected by kurtosis");
          const auto cz_it =
              std::find(clean.kept.ids.begin(), clean.kept.ids.end(), opt.cz_channel);
          if (cz_it == clean.kept.ids.end()) {
            note(pid + ": Cz channel " + opt.cz_channel + " rejected; CNV unavailable");
          } else {
            const Index cz = cz_it - clean.kept.ids.begin();
            const ArrayXd cz_data = clean.kept.data.row(cz).transpose().array();
            for (const auto& block : blocks) {
              std::vector<double> stims;
              for (const auto& m : block.markers)
                if (m.kind == streams::MarkerKind::WarningStimulus) stims.push_back(m.t);
              if (stims.empty()) continue;
              const auto epochs =
                  physio::epoch_and_reject(cz_data, clean.kept.fs_hz, clean.kept.t0_s, stims);
              if (epochs.data.rows() < 1) {
                note(pid + " " + to_string(block.condition) +
                     ": all epochs rejected; CNV unavailable");
                continue;
              }
              const auto cnv = physio::cnv_mean_amplitudes(epochs);
              push(block.condition, "cnv_early_uv", cnv.early_uv);
              push(block.condition, "cnv_mid_uv", cnv.mid_uv);
              push(block.condition, "cnv_late_uv", cnv.late_uv);
            }
          }
        } catch (const Error& e) {
          note(pid + ": EEG preprocessing: " + e.what());
        }
      }
    }
  }

  // Stable row order: condition by session order, metric by canonical order.
  std::vector<MetricRow> ordered;
  for (const auto c : rec.condition_order) {
    for (const auto& metric : metric_order()) {
      for (const auto& row : rows) {
        if (row.condition == c && row.metric == metric) ordered.push_back(row);
      }
    }
  }
  return ordered;
}

}  // namespace

void cmd_analyze(const AnalyzeOptions& opt) {
  if (opt.in_dir.empty()) fail(errc::usage, "analyze: --in is required");
  if (opt.out_csv.empty()) fail(errc::usage, "analyze: --out is required");
  if (!fs::is_directory(opt.in_dir)) fail(errc::io, opt.in_dir + ": not a directory");

  std::vector<fs::path> manifests;
  for (const auto& entry : fs::directory_iterator(opt.in_dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() > 14 && name.substr(name.size() - 14) == ".manifest.json")
      manifests.push_back(entry.path());
  }
  if (manifests.empty()) fail(errc::validation, opt.in_dir + ": no session manifests found");
  std::sort(manifests.begin(), manifests.end());

  std::ofstream out(opt.out_csv);
  if (!out) fail(errc::io, "cannot write " + opt.out_csv);
  out << "participant,condition,metric,value\n";

  for (const auto& mpath : manifests) {
    std::ifstream mf(mpath);
    std::stringstream buf;
    buf << mf.rdbuf();
    const auto manifest = streams::SessionManifest::from_json_string(buf.str());

    auto spath = mpath.string();
    spath.replace(spath.size() - 14, 14, ".jsonl");
    std::ifstream sf(spath);
    if (!sf) fail(errc::io, "cannot open " + spath);
    auto ingest = streams::ingest(sf, manifest);
    for (const auto& w : ingest.warnings) note(manifest.participant_id + ": " + w);

    for (const auto& row : analyze_session(ingest.session, opt)) {
      out << row.participant << ',' << to_string(row.condition) << ',' << row.metric << ','
          << fmt(row.value) << '\n';
    }
  }
}

void cmd_stats(const StatsOptions& opt) {
  if (opt.in_csv.empty()) fail(errc::usage, "stats: --in is required");
  if (opt.out_json.empty()) fail(errc::usage, "stats: --out is required");

  std::ifstream in(opt.in_csv);
  if (!in) fail(errc::io, "cannot open " + opt.in_csv);

  std::map<std::string, std::map<std::string, std::vector<double>>> data;
  std::string line;
  std::size_t line_no = 0;
  std::getline(in, line);  // header
  ++line_no;
  if (line != "participant,condition,metric,value")
    fail(errc::parse, opt.in_csv + ": unexpected header row");
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string participant, condition, metric, value;
    if (!std::getline(ss, participant, ',') || !std::getline(ss, condition, ',') ||
        !std::getline(ss, metric, ',') || !std::getline(ss, value))
      fail(errc::parse, opt.in_csv + " line " + std::to_string(line_no) + ": malformed row");
    try {
      data[metric][condition].push_back(std::stod(value));
    } catch (const std::exception&) {
      fail(errc::parse, opt.in_csv + " line " + std::to_string(line_no) + ": bad value");
    }
  }
  if (data.empty()) fail(errc::validation, opt.in_csv + ": no metric rows");

  const std::vector<std::string> cond_order{"Baseline", "FT", "PT", "PE"};

  // Canonical metric order first, unknown extras alphabetically after.
  std::vector<std::string> metrics;
  for (const auto& m : metric_order())
    if (data.count(m)) metrics.push_back(m);
  for (const auto& [m, groups] : data)
    if (std::find(metrics.begin(), metrics.end(), m) == metrics.end()) metrics.push_back(m);

  ordered_json report;
  report["outlier_filter"] = opt.z_outlier_filter;
  ordered_json metrics_json;

  for (const auto& metric : metrics) {
    ordered_json mj;
    ordered_json conditions_json;
    std::vector<ArrayXd> groups;
    std::vector<std::string> group_names;
    Index removed_total = 0;

    for (const auto& cond : cond_order) {
      const auto it = data[metric].find(cond);
      if (it == data[metric].end() || it->second.empty()) continue;
      std::vector<double> values = it->second;
      if (opt.z_outlier_filter && values.size() >= 2) {
        const auto split = stats::z_outlier_filter(
            Eigen::Map<const ArrayXd>(values.data(), static_cast<Index>(values.size())));
        removed_total += static_cast<Index>(split.removed.size());
        values = split.kept;
      }
      ArrayXd arr = Eigen::Map<const ArrayXd>(values.data(), static_cast<Index>(values.size()));
      const auto box = stats::box_stats(arr);
      ordered_json cj;
      cj["n"] = values.size();
      cj["median"] = box.median;
      cj["q1"] = box.q1;
      cj["q3"] = box.q3;
      cj["whisker_lo"] = box.whisker_lo;
      cj["whisker_hi"] = box.whisker_hi;
      cj["outliers"] = box.outliers;
      conditions_json[cond] = cj;
      groups.push_back(std::move(arr));
      group_names.push_back(cond);
    }
    mj["conditions"] = conditions_json;
    if (opt.z_outlier_filter) mj["outliers_removed"] = removed_total;

    const bool anova_ok =
        groups.size() >= 2 && std::all_of(groups.begin(), groups.end(),
                                          [](const ArrayXd& g) { return g.size() >= 2; });
    if (anova_ok) {
      try {
        const auto anova = stats::one_way_anova(groups);
        ordered_json aj;
        aj["f"] = anova.f_stat;
        aj["p"] = anova.p_value;
        aj["df_between"] = anova.df_between;
        aj["df_within"] = anova.df_within;
        aj["label"] = stats::significance_label(anova.p_value);
        mj["anova"] = aj;
      } catch (const Error& e) {
        mj["anova"] = ordered_json{{"error", e.what()}};
      }
    }

    const auto base_it = std::find(group_names.begin(), group_names.end(), "Baseline");
    if (base_it != group_names.end()) {
      const auto& baseline = groups[static_cast<std::size_t>(base_it - group_names.begin())];
      ordered_json pw;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        if (group_names[g] == "Baseline") continue;
        ordered_json entry;
        auto add = [&](const char* key, const stats::PairwiseResult& r) {
          ordered_json t;
          t["stat"] = r.statistic;
          t["p"] = r.p_value;
          if (r.method != stats::PairwiseMethod::mann_whitney_u) t["df"] = r.df;
          t["label"] = stats::significance_label(r.p_value);
          entry[key] = t;
        };
        try {
          add("student_t", stats::independent_t(baseline, groups[g], stats::TVariant::student));
          add("welch_t", stats::independent_t(baseline, groups[g], stats::TVariant::welch));
          add("mann_whitney_u", stats::mann_whitney_u(baseline, groups[g]));
        } catch (const Error& e) {
          entry["error"] = e.what();
        }
        pw["Baseline_vs_" + group_names[g]] = entry;
      }
      mj["pairwise"] = pw;
    }
    metrics_json[metric] = mj;
  }
  report["metrics"] = metrics_json;

  std::ofstream out(opt.out_json);
  if (!out) fail(errc::io, "cannot write " + opt.out_json);
  out << report.dump(2) << '\n';
}

}  // namespace bsync::cli
