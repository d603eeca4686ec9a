#pragma once

#include <atomic>
#include <variant>

#include "bsync/breath.hpp"
#include "bsync/common.hpp"
#include "bsync/streams.hpp"

// The amplitude-envelope engine: three intervention designs producing
// control-rate gain curves in [0.5, 1.0] (a 6.02 dB swing), optionally
// applied to a synthesized drone for audible demos.
namespace bsync::engine {

struct FixedTempo {
  double rate_bpm = 6.0;
};

struct PersonalizedTempo {
  double baseline_bpm = 0.0;  // measured over the participant's baseline block
};

struct PersonalizedEnvelope {};

using EnvelopeMode = std::variant<FixedTempo, PersonalizedTempo, PersonalizedEnvelope>;

// FT: the fixed rate. PT: min(0.75 * baseline, 15). PE has no cycle rate and
// throws errc::domain.
double effective_rate_bpm(const EnvelopeMode& mode);

// Panning-style square-root envelope over one cycle: rises from 0.5 to 1.0
// at `peak_phase`, falls back to 0.5 at wrap. Phase domain [0, 1).
double gain_from_phase(double phase, double peak_phase = 0.5);

// Breath-follower mapping: gain = 0.5 + 0.5 * sqrt(depth), depth in [0, 1].
double gain_from_depth(double depth);

struct GainCurve {
  double control_rate_hz = 100.0;
  ArrayXd gains;

  double duration_s() const { return static_cast<double>(gains.size()) / control_rate_hz; }
  double gain_at(double t_s) const;  // linear interpolation between ticks
};

// Single-owner stateful engine. Breath samples arrive on the owner's thread;
// `latest_gain()` may be polled from one other thread and never blocks (it
// holds the last computed gain).
class EnvelopeEngine {
 public:
  explicit EnvelopeEngine(EnvelopeMode mode, double control_rate_hz = 100.0);

  // Advances one control tick and returns the gain for the new tick.
  double tick();

  // PE only: feed one breathing sample (ignored by FT/PT).
  void push_breath(double t, double v);

  double phase() const { return phase_; }       // cycle fraction, FT/PT
  double time_s() const { return t_; }
  double control_rate_hz() const { return control_rate_; }
  double latest_gain() const { return latest_gain_.load(std::memory_order_relaxed); }

 private:
  EnvelopeMode mode_;
  double control_rate_;
  double rate_bpm_ = 0.0;  // FT/PT cycle rate
  double phase_ = 0.0;
  double t_ = 0.0;
  breath::RealtimeDepth depth_;
  double last_depth_ = 0.5;
  std::atomic<double> latest_gain_{0.5};
};

// FT/PT: deterministic periodic curve for `duration_s`.
GainCurve render_gain_curve(const EnvelopeMode& mode, double duration_s,
                            double control_rate_hz = 100.0);

// PE: follows a recorded/streamed breathing track; the curve spans the
// track's time range. Gain updates lag a breath sample by at most one
// control tick.
GainCurve render_gain_curve(const EnvelopeMode& mode, const streams::SignalTrack& breath_in,
                            double control_rate_hz = 100.0);

// Multiplies audio by the interpolated gain curve. The curve must span the
// audio duration.
ArrayXd apply_gain(const Eigen::Ref<const ArrayXd>& audio, const GainCurve& curve,
                   double audio_rate_hz = 44100.0);

// Unobtrusive ambient drone (sum of detuned partials), amplitude < 1.
ArrayXd synth_drone(double duration_s, double sample_rate_hz = 44100.0);

}  // namespace bsync::engine
