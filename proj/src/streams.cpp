#include "bsync/streams.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace bsync::streams {

using nlohmann::json;

std::string to_string(Unit u) {
  switch (u) {
    case Unit::nu: return "nu";
    case Unit::microsiemens: return "microsiemens";
    case Unit::microvolt: return "microvolt";
    case Unit::millivolt: return "millivolt";
    case Unit::unitless: return "unitless";
  }
  fail(errc::domain, "bad unit enum");
}

Unit unit_from_string(const std::string& s) {
  if (s == "nu") return Unit::nu;
  if (s == "microsiemens") return Unit::microsiemens;
  if (s == "microvolt") return Unit::microvolt;
  if (s == "millivolt") return Unit::millivolt;
  if (s == "unitless") return Unit::unitless;
  fail(errc::parse, "unknown unit: " + s);
}

std::string to_string(Condition c) {
  switch (c) {
    case Condition::Baseline: return "Baseline";
    case Condition::FT: return "FT";
    case Condition::PT: return "PT";
    case Condition::PE: return "PE";
  }
  fail(errc::domain, "bad condition enum");
}

Condition condition_from_string(const std::string& s) {
  if (s == "Baseline") return Condition::Baseline;
  if (s == "FT") return Condition::FT;
  if (s == "PT") return Condition::PT;
  if (s == "PE") return Condition::PE;
  fail(errc::parse, "unknown condition: " + s);
}

const std::vector<Condition>& all_conditions() {
  static const std::vector<Condition> all{Condition::Baseline, Condition::FT, Condition::PT,
                                          Condition::PE};
  return all;
}

std::string to_string(MarkerKind k) {
  switch (k) {
    case MarkerKind::BlockStart: return "BlockStart";
    case MarkerKind::WarningStimulus: return "WarningStimulus";
    case MarkerKind::ImperativeStimulus: return "ImperativeStimulus";
    case MarkerKind::KeyPress: return "KeyPress";
    case MarkerKind::BlockEnd: return "BlockEnd";
  }
  fail(errc::domain, "bad marker enum");
}

MarkerKind marker_kind_from_string(const std::string& s) {
  if (s == "BlockStart") return MarkerKind::BlockStart;
  if (s == "WarningStimulus") return MarkerKind::WarningStimulus;
  if (s == "ImperativeStimulus") return MarkerKind::ImperativeStimulus;
  if (s == "KeyPress") return MarkerKind::KeyPress;
  if (s == "BlockEnd") return MarkerKind::BlockEnd;
  fail(errc::parse, "unknown marker kind: " + s);
}

SignalTrack::SignalTrack(std::string channel_id, Unit unit, double nominal_rate_hz)
    : channel_id_(std::move(channel_id)), unit_(unit), nominal_rate_hz_(nominal_rate_hz) {
  if (!(nominal_rate_hz_ > 0.0)) fail(errc::validation, "nominal rate must be positive");
}

bool SignalTrack::append(double t, double v) {
  if (!std::isfinite(t) || t < 0.0)
    fail(errc::validation, channel_id_ + ": timestamp must be finite and non-negative");
  if (!std::isfinite(v)) fail(errc::validation, channel_id_ + ": non-finite sample value");
  if (!t_.empty()) {
    if (t < t_.back()) fail(errc::validation, channel_id_ + ": decreasing timestamp");
    if (t == t_.back()) {
      v_.back() = v;  // duplicate timestamp: last value wins
      return false;
    }
  }
  t_.push_back(t);
  v_.push_back(v);
  return true;
}

void SignalTrack::shift_times(double dt) {
  for (auto& t : t_) t += dt;
}

SignalTrack SignalTrack::slice(double t0, double t1) const {
  SignalTrack out;
  out.channel_id_ = channel_id_;
  out.unit_ = unit_;
  out.nominal_rate_hz_ = nominal_rate_hz_;
  const auto lo = std::lower_bound(t_.begin(), t_.end(), t0);
  const auto hi = std::upper_bound(t_.begin(), t_.end(), t1);
  out.t_.assign(lo, hi);
  out.v_.assign(v_.begin() + (lo - t_.begin()), v_.begin() + (hi - t_.begin()));
  return out;
}

double SignalTrack::empirical_rate_hz() const {
  if (t_.size() < 2) return 0.0;
  std::vector<double> dt(t_.size() - 1);
  for (std::size_t i = 0; i + 1 < t_.size(); ++i) dt[i] = t_[i + 1] - t_[i];
  const auto mid = dt.begin() + static_cast<std::ptrdiff_t>(dt.size() / 2);
  std::nth_element(dt.begin(), mid, dt.end());
  const double median_dt = *mid;
  return median_dt > 0.0 ? 1.0 / median_dt : 0.0;
}

double SessionManifest::offset_for(const std::string& channel_id) const {
  const auto it = channels.find(channel_id);
  if (it != channels.end() && it->second.clock_offset_s != 0.0) return it->second.clock_offset_s;
  if (channel_id.rfind("eda", 0) == 0) return eda_clock_offset_s;
  return 0.0;
}

std::string SessionManifest::to_json_string() const {
  json j;
  j["participant_id"] = participant_id;
  json order = json::array();
  for (const auto c : condition_order) order.push_back(to_string(c));
  j["condition_order"] = order;
  json chans;
  for (const auto& [id, spec] : channels) {
    json c;
    c["unit"] = to_string(spec.unit);
    c["nominal_rate_hz"] = spec.nominal_rate_hz;
    if (spec.clock_offset_s != 0.0) c["clock_offset_s"] = spec.clock_offset_s;
    chans[id] = c;
  }
  j["channels"] = chans;
  j["eda_clock_offset_s"] = eda_clock_offset_s;
  return j.dump(2) + "\n";
}

SessionManifest SessionManifest::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(errc::parse, std::string("manifest: ") + e.what());
  }
  SessionManifest m;
  try {
    m.participant_id = j.at("participant_id").get<std::string>();
    for (const auto& c : j.at("condition_order"))
      m.condition_order.push_back(condition_from_string(c.get<std::string>()));
    for (const auto& [id, spec] : j.at("channels").items()) {
      ChannelSpec cs;
      cs.unit = unit_from_string(spec.at("unit").get<std::string>());
      if (spec.contains("nominal_rate_hz")) {
        cs.nominal_rate_hz = spec["nominal_rate_hz"].get<double>();
      } else if (id.rfind("eeg_", 0) == 0) {
        cs.nominal_rate_hz = 500.0;  // amplifier rate defaults to 500 Hz
      } else {
        fail(errc::parse, "manifest: channel " + id + " missing nominal_rate_hz");
      }
      if (spec.contains("clock_offset_s")) cs.clock_offset_s = spec["clock_offset_s"].get<double>();
      m.channels[id] = cs;
    }
    if (j.contains("eda_clock_offset_s")) m.eda_clock_offset_s = j["eda_clock_offset_s"].get<double>();
  } catch (const json::exception& e) {
    fail(errc::parse, std::string("manifest: ") + e.what());
  }
  return m;
}

const SignalTrack& SessionRecording::track(const std::string& channel_id) const {
  const auto it = tracks.find(channel_id);
  if (it == tracks.end()) fail(errc::not_found, "no such channel: " + channel_id);
  return it->second;
}

bool SessionRecording::has_condition(Condition c) const {
  return std::find(condition_order.begin(), condition_order.end(), c) != condition_order.end();
}

std::pair<double, double> SessionRecording::time_span() const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& [id, tr] : tracks) {
    if (tr.empty()) continue;
    lo = std::min(lo, tr.t_front());
    hi = std::max(hi, tr.t_back());
  }
  if (!(lo <= hi)) fail(errc::validation, "session has no samples");
  return {lo, hi};
}

void SessionRecording::validate(std::vector<std::string>* warnings) const {
  if (condition_order.size() != 4)
    fail(errc::validation, "condition order must list exactly 4 conditions");
  if (condition_order.front() != Condition::Baseline)
    fail(errc::validation, "first condition must be Baseline");
  for (const auto c : all_conditions()) {
    if (std::count(condition_order.begin(), condition_order.end(), c) != 1)
      fail(errc::validation, "condition " + to_string(c) + " must appear exactly once");
  }

  const auto span = time_span();

  // Block nesting and marker containment.
  bool open = false;
  std::size_t block_idx = 0;
  double last_warning = -1.0;
  bool warning_pending = false;
  for (const auto& m : markers) {
    if (m.t < span.first || m.t > span.second)
      fail(errc::validation, "marker at t=" + std::to_string(m.t) + " outside any track span");
    switch (m.kind) {
      case MarkerKind::BlockStart:
        if (open) fail(errc::validation, "BlockStart inside an open block");
        if (!m.condition) fail(errc::validation, "BlockStart without condition");
        if (block_idx >= condition_order.size())
          fail(errc::validation, "more blocks than conditions");
        if (*m.condition != condition_order[block_idx])
          fail(errc::validation, "expected a block for condition " +
                                     to_string(condition_order[block_idx]) + ", found " +
                                     to_string(*m.condition));
        open = true;
        warning_pending = false;
        break;
      case MarkerKind::BlockEnd:
        if (!open) fail(errc::validation, "BlockEnd without open block");
        open = false;
        ++block_idx;
        break;
      case MarkerKind::WarningStimulus:
        if (!open) fail(errc::validation, "stimulus marker outside any block");
        last_warning = m.t;
        warning_pending = true;
        break;
      case MarkerKind::ImperativeStimulus: {
        if (!open) fail(errc::validation, "stimulus marker outside any block");
        if (warning_pending && warnings) {
          const double gap = m.t - last_warning;
          if (std::abs(gap - 4.5) > 1e-6)
            warnings->push_back("warning-to-imperative interval " + std::to_string(gap) +
                                " s differs from the fixed 4.5 s");
        }
        warning_pending = false;
        break;
      }
      case MarkerKind::KeyPress:
        break;
    }
  }
  if (open) fail(errc::validation, "unterminated block");
  if (block_idx != 0 && block_idx != condition_order.size())
    fail(errc::validation, "missing block for condition " +
                               to_string(condition_order[block_idx]) + " (found " +
                               std::to_string(block_idx) + " of " +
                               std::to_string(condition_order.size()) + " blocks)");

  if (warnings) {
    for (const auto& [id, tr] : tracks) {
      const double emp = tr.empirical_rate_hz();
      if (emp > 0.0 && std::abs(emp - tr.nominal_rate_hz()) > 0.2 * tr.nominal_rate_hz())
        warnings->push_back(id + ": empirical rate " + std::to_string(emp) +
                            " Hz deviates >20% from nominal " +
                            std::to_string(tr.nominal_rate_hz()) + " Hz");
    }
  }
}

IngestResult ingest(std::istream& in, const SessionManifest& manifest) {
  IngestResult result;
  SessionRecording& rec = result.session;
  rec.participant_id = manifest.participant_id;
  rec.condition_order = manifest.condition_order;
  for (const auto& [id, spec] : manifest.channels)
    rec.tracks.emplace(id, SignalTrack(id, spec.unit, spec.nominal_rate_hz));

  std::string line;
  std::size_t line_no = 0;
  std::size_t n_samples = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(errc::parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (j.contains("ch")) {
        const std::string ch = j.at("ch").get<std::string>();
        const double t = j.at("t").get<double>();
        const double v = j.at("v").get<double>();
        auto it = rec.tracks.find(ch);
        if (it == rec.tracks.end())
          fail(errc::validation,
               "line " + std::to_string(line_no) + ": channel not in manifest: " + ch);
        if (!std::isfinite(v) || !std::isfinite(t))
          fail(errc::validation, "line " + std::to_string(line_no) + ": non-finite value");
        if (!it->second.append(t + manifest.offset_for(ch), v))
          result.warnings.push_back("line " + std::to_string(line_no) +
                                    ": duplicate timestamp on " + ch + ", last value wins");
        ++n_samples;
      } else if (j.contains("marker")) {
        EventMarker m;
        m.t = j.at("t").get<double>();
        m.kind = marker_kind_from_string(j.at("marker").get<std::string>());
        if (j.contains("cond") && !j["cond"].is_null())
          m.condition = condition_from_string(j["cond"].get<std::string>());
        rec.markers.push_back(m);
      } else {
        fail(errc::parse, "line " + std::to_string(line_no) + ": neither sample nor marker");
      }
    } catch (const json::exception& e) {
      fail(errc::parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (n_samples == 0) fail(errc::validation, "empty session: no samples ingested");

  // Declared channels that never appeared in the stream are dropped, so a
  // serialize/ingest round trip reproduces the session exactly.
  for (auto it = rec.tracks.begin(); it != rec.tracks.end();) {
    if (it->second.empty())
      it = rec.tracks.erase(it);
    else
      ++it;
  }

  std::stable_sort(rec.markers.begin(), rec.markers.end(),
                   [](const EventMarker& a, const EventMarker& b) { return a.t < b.t; });
  rec.validate(&result.warnings);
  return result;
}

void serialize(const SessionRecording& rec, std::ostream& out) {
  // Merge all tracks and markers into one time-sorted stream. Ties break
  // markers first, then by channel id, so the order is fully deterministic.
  struct Line {
    double t;
    int is_sample;  // markers (0) before samples (1)
    std::string ch_or_kind;
    std::string text;
  };
  std::vector<Line> lines;
  for (const auto& [id, tr] : rec.tracks) {
    const auto ts = tr.times();
    const auto vs = tr.values();
    for (Index i = 0; i < tr.size(); ++i) {
      nlohmann::ordered_json j;
      j["t"] = ts[i];
      j["ch"] = id;
      j["v"] = vs[i];
      lines.push_back({ts[i], 1, id, j.dump()});
    }
  }
  for (const auto& m : rec.markers) {
    nlohmann::ordered_json j;
    j["t"] = m.t;
    j["marker"] = to_string(m.kind);
    j["cond"] = m.condition ? json(to_string(*m.condition)) : json(nullptr);
    lines.push_back({m.t, 0, to_string(m.kind), j.dump()});
  }
  std::stable_sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.is_sample != b.is_sample) return a.is_sample < b.is_sample;
    return a.ch_or_kind < b.ch_or_kind;
  });
  for (const auto& l : lines) out << l.text << '\n';
}

const SignalTrack& BlockView::track(const std::string& channel_id) const {
  const auto it = tracks.find(channel_id);
  if (it == tracks.end()) fail(errc::not_found, "no such channel: " + channel_id);
  return it->second;
}

BlockView slice_block(const SessionRecording& rec, Condition cond) {
  if (!rec.has_condition(cond))
    fail(errc::not_found, "condition " + to_string(cond) + " not present in session");

  double start_t = 0.0, end_t = 0.0;
  bool found = false;
  for (std::size_t i = 0; i < rec.markers.size(); ++i) {
    const auto& m = rec.markers[i];
    if (m.kind == MarkerKind::BlockStart && m.condition && *m.condition == cond) {
      start_t = m.t;
      for (std::size_t k = i + 1; k < rec.markers.size(); ++k) {
        if (rec.markers[k].kind == MarkerKind::BlockEnd) {
          end_t = rec.markers[k].t;
          found = true;
          break;
        }
      }
      break;
    }
  }
  if (!found) fail(errc::not_found, "no complete block for condition " + to_string(cond));

  BlockView view;
  view.condition = cond;
  view.start_t = start_t;
  view.end_t = end_t;
  for (const auto& [id, tr] : rec.tracks) view.tracks.emplace(id, tr.slice(start_t, end_t));
  for (const auto& m : rec.markers) {
    if (m.t >= start_t && m.t <= end_t) view.markers.push_back(m);
  }
  return view;
}

SignalTrack resample_uniform(const SignalTrack& track, double fs_hz) {
  if (track.size() < 2) fail(errc::validation, "resample needs at least 2 samples");
  if (!(fs_hz > 0.0)) fail(errc::validation, "resample rate must be positive");

  const auto ts = track.times();
  const auto vs = track.values();
  const double t0 = ts[0];
  const double span = ts[ts.size() - 1] - t0;
  const Index n_out = static_cast<Index>(std::floor(span * fs_hz + 1e-9)) + 1;

  SignalTrack out(track.channel_id(), track.unit(), fs_hz);
  Index j = 0;
  for (Index k = 0; k < n_out; ++k) {
    const double t = t0 + static_cast<double>(k) / fs_hz;
    while (j + 2 < ts.size() && ts[j + 1] <= t) ++j;
    const double dt = ts[j + 1] - ts[j];
    const double alpha = std::clamp((t - ts[j]) / dt, 0.0, 1.0);
    out.append(t, vs[j] + alpha * (vs[j + 1] - vs[j]));
  }
  return out;
}

}  // namespace bsync::streams
