#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bsync/common.hpp"

// Time-series data model, multi-rate ingest/serialization, block slicing and
// resampling for all physiological channels and event markers. All types are
// immutable once a session is built; sharing across threads for read needs
// no locking.
namespace bsync::streams {

enum class Unit { nu, microsiemens, microvolt, millivolt, unitless };

std::string to_string(Unit u);
Unit unit_from_string(const std::string& s);

enum class Condition { Baseline, FT, PT, PE };

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);
const std::vector<Condition>& all_conditions();

enum class MarkerKind { BlockStart, WarningStimulus, ImperativeStimulus, KeyPress, BlockEnd };

std::string to_string(MarkerKind k);
MarkerKind marker_kind_from_string(const std::string& s);

struct EventMarker {
  double t = 0.0;
  MarkerKind kind = MarkerKind::BlockStart;
  std::optional<Condition> condition;  // BlockStart carries the block condition

  bool operator==(const EventMarker&) const = default;
};

struct Sample {
  double t = 0.0;
  double v = 0.0;
};

// One channel: strictly increasing timestamps, finite values, fixed unit.
class SignalTrack {
 public:
  SignalTrack() = default;
  SignalTrack(std::string channel_id, Unit unit, double nominal_rate_hz);

  const std::string& channel_id() const { return channel_id_; }
  Unit unit() const { return unit_; }
  double nominal_rate_hz() const { return nominal_rate_hz_; }

  Index size() const { return static_cast<Index>(t_.size()); }
  bool empty() const { return t_.empty(); }

  Eigen::Map<const ArrayXd> times() const {
    return {t_.data(), static_cast<Index>(t_.size())};
  }
  Eigen::Map<const ArrayXd> values() const {
    return {v_.data(), static_cast<Index>(v_.size())};
  }
  Sample at(Index i) const { return {t_[static_cast<std::size_t>(i)], v_[static_cast<std::size_t>(i)]}; }
  double t_front() const { return t_.front(); }
  double t_back() const { return t_.back(); }

  // Appends a sample; throws on non-finite input or decreasing time. A
  // timestamp equal to the last sample replaces its value (last wins) and
  // returns false.
  bool append(double t, double v);

  // Constant clock offset (post-hoc EDA alignment).
  void shift_times(double dt);

  // Samples with t0 <= t <= t1 (closed interval).
  SignalTrack slice(double t0, double t1) const;

  // Median of 1/dt; 0 when fewer than 2 samples.
  double empirical_rate_hz() const;

  bool operator==(const SignalTrack&) const = default;

 private:
  std::string channel_id_;
  Unit unit_ = Unit::unitless;
  double nominal_rate_hz_ = 0.0;
  std::vector<double> t_, v_;
};

struct ChannelSpec {
  Unit unit = Unit::unitless;
  double nominal_rate_hz = 0.0;
  double clock_offset_s = 0.0;  // added to ingested timestamps for this channel
};

// Session manifest: who, which conditions, and how each channel is declared.
struct SessionManifest {
  std::string participant_id;
  std::vector<Condition> condition_order;
  std::map<std::string, ChannelSpec> channels;
  double eda_clock_offset_s = 0.0;  // fallback offset for channels named eda_*

  std::string to_json_string() const;
  static SessionManifest from_json_string(const std::string& text);

  double offset_for(const std::string& channel_id) const;
};

struct SessionRecording {
  std::string participant_id;
  std::map<std::string, SignalTrack> tracks;
  std::vector<EventMarker> markers;
  std::vector<Condition> condition_order;

  const SignalTrack& track(const std::string& channel_id) const;
  bool has_condition(Condition c) const;
  std::pair<double, double> time_span() const;  // across all non-empty tracks

  // Checks the session invariants (condition order, block nesting, marker
  // containment); structural violations throw, soft issues are appended to
  // `warnings` when given.
  void validate(std::vector<std::string>* warnings = nullptr) const;

  bool operator==(const SessionRecording&) const = default;
};

struct IngestResult {
  SessionRecording session;
  std::vector<std::string> warnings;
};

// Reads the record-per-line stream (one JSON object per line; see README for
// the sample/marker schemas) against a manifest. Channel units, rates and
// clock offsets come from the manifest; undeclared channels are rejected.
IngestResult ingest(std::istream& in, const SessionManifest& manifest);

// Writes the session back as a record-per-line stream, globally time-sorted
// (markers before samples at equal timestamps). Round-trips bit-exactly
// through ingest for a zero-offset manifest.
void serialize(const SessionRecording& rec, std::ostream& out);

// All tracks and markers restricted to one block's [BlockStart, BlockEnd].
struct BlockView {
  Condition condition = Condition::Baseline;
  double start_t = 0.0;
  double end_t = 0.0;
  std::map<std::string, SignalTrack> tracks;
  std::vector<EventMarker> markers;

  const SignalTrack& track(const std::string& channel_id) const;
};

BlockView slice_block(const SessionRecording& rec, Condition cond);

// Linear interpolation onto a uniform grid with step exactly 1/fs starting
// at the first sample; the grid never leaves the original span.
SignalTrack resample_uniform(const SignalTrack& track, double fs_hz);

}  // namespace bsync::streams
