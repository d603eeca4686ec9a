#include "bsync/engine.hpp"

#include <cmath>

namespace bsync::engine {

namespace {

constexpr double kMinGain = 0.5;
constexpr double kRateCapBpm = 15.0;
constexpr double kRateFraction = 0.75;

}  // namespace

double effective_rate_bpm(const EnvelopeMode& mode) {
  if (const auto* ft = std::get_if<FixedTempo>(&mode)) {
    if (!(ft->rate_bpm > 0.0)) fail(errc::validation, "fixed tempo rate must be positive");
    return ft->rate_bpm;
  }
  if (const auto* pt = std::get_if<PersonalizedTempo>(&mode)) {
    if (!(pt->baseline_bpm > 0.0)) fail(errc::validation, "baseline rate must be positive");
    return std::min(kRateFraction * pt->baseline_bpm, kRateCapBpm);
  }
  fail(errc::domain, "personalized envelope has no cycle rate");
}

double gain_from_phase(double phase, double peak_phase) {
  if (!(phase >= 0.0 && phase < 1.0)) fail(errc::domain, "phase must lie in [0, 1)");
  if (!(peak_phase > 0.0 && peak_phase < 1.0)) fail(errc::domain, "peak phase must lie in (0, 1)");
  const double s = phase < peak_phase ? std::sqrt(phase / peak_phase)
                                      : std::sqrt((1.0 - phase) / (1.0 - peak_phase));
  return kMinGain + 0.5 * s;
}

double gain_from_depth(double depth) {
  if (!(depth >= 0.0 && depth <= 1.0)) fail(errc::domain, "depth must lie in [0, 1]");
  return kMinGain + 0.5 * std::sqrt(depth);
}

double GainCurve::gain_at(double t_s) const {
  if (gains.size() == 0) fail(errc::validation, "empty gain curve");
  const double pos = t_s * control_rate_hz;
  const Index j = std::min<Index>(static_cast<Index>(std::floor(pos)), gains.size() - 1);
  if (j < 0) return gains[0];
  const Index j1 = std::min<Index>(j + 1, gains.size() - 1);
  const double alpha = std::clamp(pos - static_cast<double>(j), 0.0, 1.0);
  return gains[j] + alpha * (gains[j1] - gains[j]);
}

EnvelopeEngine::EnvelopeEngine(EnvelopeMode mode, double control_rate_hz)
    : mode_(mode), control_rate_(control_rate_hz) {
  if (!(control_rate_ >= 20.0)) fail(errc::validation, "control rate must be >= 20 Hz");
  if (!std::holds_alternative<PersonalizedEnvelope>(mode_))
    rate_bpm_ = effective_rate_bpm(mode_);
}

void EnvelopeEngine::push_breath(double t, double v) {
  if (std::holds_alternative<PersonalizedEnvelope>(mode_)) last_depth_ = depth_.push(t, v);
}

double EnvelopeEngine::tick() {
  double g;
  if (std::holds_alternative<PersonalizedEnvelope>(mode_)) {
    g = gain_from_depth(last_depth_);
  } else {
    g = gain_from_phase(phase_);
    phase_ += rate_bpm_ / 60.0 / control_rate_;
    if (phase_ >= 1.0) phase_ -= 1.0;
  }
  t_ += 1.0 / control_rate_;
  latest_gain_.store(g, std::memory_order_relaxed);
  return g;
}

GainCurve render_gain_curve(const EnvelopeMode& mode, double duration_s,
                            double control_rate_hz) {
  if (std::holds_alternative<PersonalizedEnvelope>(mode))
    fail(errc::validation, "personalized envelope needs a breathing stream");
  if (!(control_rate_hz >= 20.0)) fail(errc::validation, "control rate must be >= 20 Hz");
  if (!(duration_s > 0.0)) fail(errc::validation, "duration must be positive");

  const double rate = effective_rate_bpm(mode);
  const double cycles_per_tick = rate / 60.0 / control_rate_hz;
  const Index n = static_cast<Index>(std::llround(duration_s * control_rate_hz));

  GainCurve curve;
  curve.control_rate_hz = control_rate_hz;
  curve.gains.resize(n);
  for (Index k = 0; k < n; ++k) {
    // Closed-form phase avoids accumulation drift over long renders.
    const double phase = std::fmod(static_cast<double>(k) * cycles_per_tick, 1.0);
    curve.gains[k] = gain_from_phase(phase);
  }
  return curve;
}

GainCurve render_gain_curve(const EnvelopeMode& mode, const streams::SignalTrack& breath_in,
                            double control_rate_hz) {
  if (!std::holds_alternative<PersonalizedEnvelope>(mode))
    fail(errc::validation, "breathing-stream rendering applies to the personalized envelope");
  if (breath_in.empty()) fail(errc::validation, "personalized envelope needs a breathing stream");
  if (!(control_rate_hz >= 20.0)) fail(errc::validation, "control rate must be >= 20 Hz");

  EnvelopeEngine eng(mode, control_rate_hz);
  const auto ts = breath_in.times();
  const auto vs = breath_in.values();
  const double t0 = ts[0];
  const double t1 = ts[ts.size() - 1];
  const Index n = static_cast<Index>(std::floor((t1 - t0) * control_rate_hz)) + 1;

  GainCurve curve;
  curve.control_rate_hz = control_rate_hz;
  curve.gains.resize(n);
  Index next_sample = 0;
  for (Index k = 0; k < n; ++k) {
    const double t = t0 + static_cast<double>(k) / control_rate_hz;
    while (next_sample < ts.size() && ts[next_sample] <= t) {
      eng.push_breath(ts[next_sample], vs[next_sample]);
      ++next_sample;
    }
    curve.gains[k] = eng.tick();
  }
  return curve;
}

ArrayXd apply_gain(const Eigen::Ref<const ArrayXd>& audio, const GainCurve& curve,
                   double audio_rate_hz) {
  const Index n = audio.size();
  if (n == 0) return {};
  const double audio_span = static_cast<double>(n - 1) / audio_rate_hz;
  const double curve_span = static_cast<double>(curve.gains.size() - 1) / curve.control_rate_hz;
  if (curve.gains.size() == 0 || curve_span + 1.0 / curve.control_rate_hz < audio_span)
    fail(errc::validation, "gain curve does not span the audio duration");

  ArrayXd out(n);
  for (Index i = 0; i < n; ++i)
    out[i] = audio[i] * curve.gain_at(static_cast<double>(i) / audio_rate_hz);
  return out;
}

ArrayXd synth_drone(double duration_s, double sample_rate_hz) {
  if (!(duration_s > 0.0)) fail(errc::validation, "duration must be positive");
  const Index n = static_cast<Index>(std::llround(duration_s * sample_rate_hz));
  ArrayXd out(n);
  constexpr double two_pi = 6.28318530717958647692;
  // A2 root with a fifth and octave, slightly detuned against each other.
  const double f[4] = {110.0, 164.81, 220.0, 110.5};
  const double a[4] = {0.42, 0.25, 0.18, 0.10};
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate_hz;
    double v = 0.0;
    for (int k = 0; k < 4; ++k) v += a[k] * std::sin(two_pi * f[k] * t);
    out[i] = 0.9 * v;
  }
  return out;
}

}  // namespace bsync::engine
