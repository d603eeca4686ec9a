#include "bsync/simloop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <future>
#include <memory>

#include "bsync/breath.hpp"
#include "bsync/dsp.hpp"
#include "bsync/engine.hpp"

namespace bsync::simloop {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

// Protocol timing (stimulus durations are short enough to never overlap the
// fixed interval).
constexpr double kFixedIntervalS = 4.5;
constexpr double kImperativeDurS = 0.3;
constexpr double kLeadInS = 2.0;
constexpr double kBlockGapS = 5.0;
constexpr double kSessionTailS = 2.0;

// Channel rates.
constexpr double kBreathRateHz = 17.0;
constexpr double kEcgRateHz = 250.0;
constexpr double kEdaRateHz = 4.0;
constexpr int kEegChannels = 16;

// Personalized-envelope self-coupling: the stimulus mirrors the breather's
// own phase, lagged and biased so that following music still nudges the rate
// down.
constexpr double kPeLagS = 0.4;
constexpr double kPeBiasRad = 0.25;

// Relaxation coupling gains (directions from the study design; magnitudes
// are simulator knobs, not claims).
constexpr double kEdaDecayUsPerS = 0.004;   // per unit relax
constexpr double kIbiGain = 0.12;           // fractional IBI lengthening
constexpr double kRsaGain = 0.03;           // respiratory modulation of IBI
constexpr double kCnvBaseUv = 6.0;
constexpr double kCnvRelaxGainUv = 18.0;
constexpr double kCnvRampS = 3.7;
constexpr double kCnvResolveS = 0.3;

// Rng stream tags.
enum : std::uint64_t {
  kStreamParams = 1,
  kStreamConditions,
  kStreamSchedule,
  kStreamBreathNoise,
  kStreamBreathSensor,
  kStreamEcg,
  kStreamEda,
  kStreamEeg,
  kStreamBehavior,
};

}  // namespace

std::pair<BreatherState, double> breather_step(const BreatherState& state,
                                               const BreatherParams& params,
                                               std::optional<double> stimulus_phase_rad,
                                               double dt_s, Rng& noise) {
  if (!(dt_s > 0.0) || dt_s > 0.1) fail(errc::validation, "breather step needs 0 < dt <= 0.1 s");
  const double omega_n = kTwoPi * params.natural_rate_bpm / 60.0;
  double dphi = omega_n;
  if (stimulus_phase_rad)
    dphi += params.coupling_k * std::sin(*stimulus_phase_rad - state.phase_rad);
  double phase = state.phase_rad + dphi * dt_s;
  if (params.phase_noise_sigma > 0.0)
    phase += params.phase_noise_sigma * std::sqrt(dt_s) * noise.normal();
  BreatherState next;
  next.phase_rad = phase;
  return {next, params.amplitude_nu * std::sin(phase)};
}

double Breather::deterministic_rate_bpm(std::optional<double> stimulus_phase_rad) const {
  const double omega_n = kTwoPi * params_.natural_rate_bpm / 60.0;
  double omega = omega_n;
  if (stimulus_phase_rad)
    omega += params_.coupling_k * std::sin(*stimulus_phase_rad - state_.phase_rad);
  return omega * 60.0 / kTwoPi;
}

TrialSchedule schedule_block(std::uint64_t seed, int n_trials) {
  if (n_trials < 1) fail(errc::validation, "schedule needs at least one trial");
  Rng rng(seed);
  TrialSchedule sched;
  // Trial onsets live on a dyadic 1/1024 s grid so that sums and the fixed
  // 4.5 s offset stay exact in double arithmetic.
  auto quantize = [](double t) { return std::round(t * 1024.0) / 1024.0; };
  double cursor = kLeadInS;
  for (int i = 0; i < n_trials; ++i) {
    Trial tr;
    tr.warning_t = cursor;
    tr.imperative_t = cursor + kFixedIntervalS;
    tr.iti_s = rng.uniform(2.0, 5.0);
    cursor = quantize(tr.imperative_t + kImperativeDurS + tr.iti_s);
    sched.trials.push_back(tr);
  }
  sched.end_t = cursor;
  return sched;
}

std::vector<streams::Condition> assign_conditions(std::uint64_t seed) {
  using streams::Condition;
  Rng rng(seed);
  std::vector<Condition> music{Condition::FT, Condition::PT, Condition::PE};
  for (std::size_t i = music.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.bounded(i + 1));
    std::swap(music[i], music[j]);
  }
  std::vector<Condition> order{Condition::Baseline};
  order.insert(order.end(), music.begin(), music.end());
  return order;
}

streams::SignalTrack synth_ecg(const std::vector<double>& r_times_s, double duration_s,
                               double fs_hz, const EcgWaveParams& wave) {
  streams::SignalTrack track("ecg", streams::Unit::millivolt, fs_hz);
  Rng noise(wave.noise_seed);
  const Index n = static_cast<Index>(std::llround(duration_s * fs_hz));
  std::size_t lo = 0;
  auto bump = [](double dt, double amp, double sigma) {
    return amp * std::exp(-0.5 * dt * dt / (sigma * sigma));
  };
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs_hz;
    while (lo < r_times_s.size() && r_times_s[lo] < t - 0.7) ++lo;
    double v = wave.wander_amplitude_mv * std::sin(kTwoPi * wave.wander_freq_hz * t);
    for (std::size_t b = lo; b < r_times_s.size() && r_times_s[b] < t + 0.7; ++b) {
      const double dt = t - r_times_s[b];
      v += bump(dt, wave.r_amplitude_mv, wave.r_sigma_s);
      v += bump(dt + wave.p_lead_s, wave.p_amplitude_mv, wave.p_sigma_s);
      v += bump(dt - wave.t_lag_s, wave.t_amplitude_mv, wave.t_sigma_s);
    }
    if (wave.noise_sigma_mv > 0.0) v += wave.noise_sigma_mv * noise.normal();
    track.append(t, v);
  }
  return track;
}

namespace {

using streams::Condition;
using streams::EventMarker;
using streams::MarkerKind;
using streams::SessionManifest;
using streams::SignalTrack;
using streams::Unit;

struct BlockPlan {
  Condition condition;
  double start_t = 0.0;
  double end_t = 0.0;
  std::vector<double> warning_times;  // absolute
};

// One participant's full closed-loop run.
class ParticipantSim {
 public:
  ParticipantSim(const CohortSpec& cohort, int index) : cohort_(cohort), index_(index) {
    const std::uint64_t base = Rng::derive(cohort.master_seed, static_cast<std::uint64_t>(index));
    Rng params_rng(Rng::derive(base, kStreamParams));
    breather_params_.natural_rate_bpm = params_rng.uniform(cohort.rate_lo_bpm, cohort.rate_hi_bpm);
    breather_params_.coupling_k = params_rng.uniform(cohort.coupling_lo, cohort.coupling_hi);
    breather_params_.phase_noise_sigma = cohort.phase_noise_sigma;
    breather_params_.amplitude_nu = 3.0;
    breather_params_.seed = Rng::derive(base, kStreamBreathNoise);
    initial_phase_ = params_rng.uniform(0.0, kTwoPi);
    hr_base_ibi_s_ = 60.0 / params_rng.uniform(62.0, 78.0);
    eda_tonic_us_ = params_rng.uniform(3.0, 7.0);
    eda_wander_phase_ = params_rng.uniform(0.0, kTwoPi);

    conditions_ = assign_conditions(Rng::derive(base, kStreamConditions));
    sensor_rng_ = std::make_unique<Rng>(Rng::derive(base, kStreamBreathSensor));
    ecg_rng_ = std::make_unique<Rng>(Rng::derive(base, kStreamEcg));
    eda_rng_ = std::make_unique<Rng>(Rng::derive(base, kStreamEda));
    eeg_rng_ = std::make_unique<Rng>(Rng::derive(base, kStreamEeg));
    behavior_rng_ = std::make_unique<Rng>(Rng::derive(base, kStreamBehavior));

    char buf[16];
    std::snprintf(buf, sizeof buf, "p%02d", index + 1);
    participant_id_ = buf;
  }

  SimulatedSession run();

 private:
  void plan_protocol();
  void build_markers();
  double stimulus_phase(double t, bool* active) ;
  double relax() const {
    return (breather_params_.natural_rate_bpm - rate_ema_bpm_) / breather_params_.natural_rate_bpm;
  }
  void extend_beats(double horizon_t);
  double ecg_value(double t);
  double cnv_value(double t, int channel);
  double measure_baseline_bpm();

  const CohortSpec& cohort_;
  int index_;
  std::string participant_id_;

  BreatherParams breather_params_;
  double initial_phase_ = 0.0;
  double hr_base_ibi_s_ = 1.0;
  double eda_tonic_us_ = 5.0;
  double eda_wander_phase_ = 0.0;

  std::vector<Condition> conditions_;
  std::vector<BlockPlan> blocks_;
  double session_end_ = 0.0;

  std::unique_ptr<Rng> sensor_rng_, ecg_rng_, eda_rng_, eeg_rng_, behavior_rng_;

  std::unique_ptr<Breather> breather_;
  std::unique_ptr<engine::EnvelopeEngine> engine_;
  int engine_block_ = -1;
  double measured_baseline_bpm_ = 0.0;

  std::deque<std::pair<double, double>> phase_history_;  // (t, unwrapped phase)
  double rate_ema_bpm_ = 0.0;

  std::vector<double> beat_times_;
  std::size_t beat_lo_ = 0;
  double breath_phase_rad_ = 0.0;

  SignalTrack breathing_{"breathing", Unit::nu, kBreathRateHz};
  SignalTrack ecg_{"ecg", Unit::millivolt, kEcgRateHz};
  SignalTrack eda_left_{"eda_left", Unit::microsiemens, kEdaRateHz};
  SignalTrack eda_right_{"eda_right", Unit::microsiemens, kEdaRateHz};
  std::vector<SignalTrack> eeg_;
  std::vector<double> eeg_dc_offset_uv_;
  std::vector<EventMarker> markers_;
  std::vector<double> cnv_warning_times_;  // all warnings, for the EEG template
  std::vector<double> cnv_amplitudes_uv_;  // amplitude per warning
  std::size_t cnv_warning_index_ = 0;      // first warning still contributing
};

void ParticipantSim::plan_protocol() {
  const std::uint64_t base = Rng::derive(cohort_.master_seed, static_cast<std::uint64_t>(index_));
  double cursor = kBlockGapS;
  for (std::size_t b = 0; b < conditions_.size(); ++b) {
    const auto sched =
        schedule_block(Rng::derive(base, kStreamSchedule, b), cohort_.trials_per_block);
    BlockPlan plan;
    plan.condition = conditions_[b];
    plan.start_t = cursor;
    plan.end_t = cursor + sched.end_t;
    for (const auto& tr : sched.trials) plan.warning_times.push_back(cursor + tr.warning_t);
    blocks_.push_back(plan);
    cursor = plan.end_t + kBlockGapS;
  }
  session_end_ = blocks_.back().end_t + kSessionTailS;
}

void ParticipantSim::build_markers() {
  for (const auto& block : blocks_) {
    markers_.push_back({block.start_t, MarkerKind::BlockStart, block.condition});
    for (const double w : block.warning_times) {
      markers_.push_back({w, MarkerKind::WarningStimulus, std::nullopt});
      const double imp = w + kFixedIntervalS;
      markers_.push_back({imp, MarkerKind::ImperativeStimulus, std::nullopt});
      markers_.push_back(
          {imp + behavior_rng_->uniform(0.18, 0.38), MarkerKind::KeyPress, std::nullopt});
    }
    markers_.push_back({block.end_t, MarkerKind::BlockEnd, std::nullopt});
  }
  std::stable_sort(markers_.begin(), markers_.end(),
                   [](const EventMarker& a, const EventMarker& b) { return a.t < b.t; });
}

double ParticipantSim::measure_baseline_bpm() {
  const auto& baseline = blocks_.front();
  const SignalTrack segment = breathing_.slice(baseline.start_t, baseline.end_t);
  if (segment.size() < 3) return breather_params_.natural_rate_bpm;
  const auto lp = dsp::design_butterworth(dsp::FilterSpec::lowpass(4, 1.0, kBreathRateHz));
  const ArrayXd filtered = dsp::filter_zero_phase(segment.values(), lp);
  const auto peaks = breath::detect_breath_peaks(segment.times(), filtered, 2.0);
  if (peaks.size() < 2) return breather_params_.natural_rate_bpm;
  return breath::baseline_rate_bpm(breath::compute_iri(peaks));
}

double ParticipantSim::stimulus_phase(double t, bool* active) {
  *active = false;
  // Locate the block containing t, if any.
  int block = -1;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    if (t >= blocks_[b].start_t && t <= blocks_[b].end_t) {
      block = static_cast<int>(b);
      break;
    }
  }
  if (block < 0) {
    engine_block_ = -1;
    engine_.reset();
    return 0.0;
  }
  const Condition cond = blocks_[static_cast<std::size_t>(block)].condition;
  if (cond == Condition::Baseline) return 0.0;

  if (engine_block_ != block) {
    engine_block_ = block;
    switch (cond) {
      case Condition::FT:
        engine_ = std::make_unique<engine::EnvelopeEngine>(engine::FixedTempo{},
                                                           cohort_.control_rate_hz);
        break;
      case Condition::PT:
        measured_baseline_bpm_ = measure_baseline_bpm();
        engine_ = std::make_unique<engine::EnvelopeEngine>(
            engine::PersonalizedTempo{measured_baseline_bpm_}, cohort_.control_rate_hz);
        break;
      default:
        engine_ = std::make_unique<engine::EnvelopeEngine>(engine::PersonalizedEnvelope{},
                                                           cohort_.control_rate_hz);
        break;
    }
  }

  *active = true;
  if (cond == Condition::PE) {
    // Lagged copy of the breather's own phase, biased downward.
    const double target = t - kPeLagS;
    double lagged = breather_ ? breather_->phase_rad() : 0.0;
    for (auto it = phase_history_.rbegin(); it != phase_history_.rend(); ++it) {
      if (it->first <= target) {
        lagged = it->second;
        break;
      }
    }
    return lagged - kPeBiasRad;
  }
  return engine_ ? kTwoPi * engine_->phase() : 0.0;
}

void ParticipantSim::extend_beats(double horizon_t) {
  if (!cohort_.channels.ecg) return;
  while (beat_times_.empty() || beat_times_.back() < horizon_t) {
    const double prev = beat_times_.empty() ? ecg_rng_->uniform(0.0, hr_base_ibi_s_)
                                            : beat_times_.back();
    double ibi = hr_base_ibi_s_ * (1.0 + kIbiGain * relax() +
                                   kRsaGain * std::sin(breath_phase_rad_)) +
                 ecg_rng_->normal(0.0, 0.006);
    ibi = std::max(ibi, 0.35);
    beat_times_.push_back(beat_times_.empty() ? prev : prev + ibi);
  }
}

double ParticipantSim::ecg_value(double t) {
  while (beat_lo_ < beat_times_.size() && beat_times_[beat_lo_] < t - 0.7) ++beat_lo_;
  double v = 0.05 * std::sin(kTwoPi * 0.33 * t);
  auto bump = [](double dt, double amp, double sigma) {
    return amp * std::exp(-0.5 * dt * dt / (sigma * sigma));
  };
  for (std::size_t b = beat_lo_; b < beat_times_.size() && beat_times_[b] < t + 0.7; ++b) {
    const double dt = t - beat_times_[b];
    v += bump(dt, 1.0, 0.010);
    v += bump(dt + 0.16, 0.12, 0.025);
    v += bump(dt - 0.25, 0.30, 0.050);
  }
  return v + ecg_rng_->normal(0.0, 0.03);
}

double ParticipantSim::cnv_value(double t, int channel) {
  // Channel 0 carries the full template (the Cz convention), the rest a
  // smaller share.
  const double weight = channel == 0 ? 1.0 : 0.3;
  double v = 0.0;
  for (std::size_t i = cnv_warning_index_; i < cnv_warning_times_.size(); ++i) {
    const double dt = t - cnv_warning_times_[i];
    if (dt < 0.0) break;
    if (dt > kCnvRampS + kCnvResolveS) {
      if (i == cnv_warning_index_) ++cnv_warning_index_;
      continue;
    }
    const double amp = cnv_amplitudes_uv_[i];
    if (dt <= kCnvRampS)
      v -= amp * dt / kCnvRampS * weight;
    else
      v -= amp * (1.0 - (dt - kCnvRampS) / kCnvResolveS) * weight;
  }
  return v;
}

SimulatedSession ParticipantSim::run() {
  plan_protocol();
  build_markers();

  // CNV template amplitudes are fixed per warning once the warning fires;
  // fill lazily during the run (depends on relax at that moment).
  for (const auto& block : blocks_)
    for (const double w : block.warning_times) cnv_warning_times_.push_back(w);
  std::sort(cnv_warning_times_.begin(), cnv_warning_times_.end());
  cnv_amplitudes_uv_.assign(cnv_warning_times_.size(), kCnvBaseUv);

  breather_ = std::make_unique<Breather>(breather_params_, initial_phase_);
  rate_ema_bpm_ = breather_params_.natural_rate_bpm;

  if (cohort_.channels.eeg) {
    eeg_.reserve(kEegChannels);
    for (int c = 0; c < kEegChannels; ++c) {
      char id[16];
      std::snprintf(id, sizeof id, "eeg_ch%02d", c + 1);
      eeg_.emplace_back(id, Unit::microvolt, cohort_.eeg_rate_hz);
      eeg_dc_offset_uv_.push_back(eeg_rng_->uniform(-20.0, 20.0));
    }
  }

  const double tick_dt = 1.0 / cohort_.control_rate_hz;
  std::int64_t k_tick = 0, k_breath = 0, k_ecg = 0, k_eda = 0, k_eeg = 0;
  std::size_t next_warning = 0;

  double t = 0.0;
  double breath_value = breather_params_.amplitude_nu * std::sin(initial_phase_);
  breath_phase_rad_ = initial_phase_;
  phase_history_.emplace_back(0.0, initial_phase_);
  extend_beats(1.5);

  while (t < session_end_) {
    // Next event over all active grids.
    double t_next = static_cast<double>(k_tick + 1) * tick_dt;
    const double t_breath = static_cast<double>(k_breath + 1) / kBreathRateHz;
    t_next = std::min(t_next, t_breath);
    double t_ecg = 0.0, t_eda = 0.0, t_eeg = 0.0;
    if (cohort_.channels.ecg) {
      t_ecg = static_cast<double>(k_ecg + 1) / kEcgRateHz;
      t_next = std::min(t_next, t_ecg);
    }
    if (cohort_.channels.eda) {
      t_eda = static_cast<double>(k_eda + 1) / kEdaRateHz;
      t_next = std::min(t_next, t_eda);
    }
    if (cohort_.channels.eeg) {
      t_eeg = static_cast<double>(k_eeg + 1) / cohort_.eeg_rate_hz;
      t_next = std::min(t_next, t_eeg);
    }

    const double dt = t_next - t;
    bool music_active = false;
    const double stim = stimulus_phase(t, &music_active);
    const std::optional<double> stim_opt =
        music_active ? std::optional<double>(stim) : std::nullopt;

    breath_value = breather_->step(stim_opt, dt);
    breath_phase_rad_ = breather_->phase_rad();
    phase_history_.emplace_back(t_next, breath_phase_rad_);
    while (phase_history_.front().first < t_next - 2.0) phase_history_.pop_front();

    const double inst_rate = breather_->deterministic_rate_bpm(stim_opt);
    rate_ema_bpm_ += (inst_rate - rate_ema_bpm_) * dt / 10.0;

    if (cohort_.channels.eda) eda_tonic_us_ -= kEdaDecayUsPerS * relax() * dt;

    // Freeze CNV amplitude the moment each warning fires.
    while (next_warning < cnv_warning_times_.size() &&
           cnv_warning_times_[next_warning] <= t_next) {
      cnv_amplitudes_uv_[next_warning] =
          std::max(0.0, kCnvBaseUv + kCnvRelaxGainUv * relax());
      ++next_warning;
    }

    t = t_next;
    extend_beats(t + 1.5);

    if (t == t_breath) {
      ++k_breath;
      const double v = breath_value + sensor_rng_->normal(0.0, 0.03);
      breathing_.append(t, v);
      if (engine_) engine_->push_breath(t, v);
    }
    if (t == static_cast<double>(k_tick + 1) * tick_dt) {
      ++k_tick;
      if (engine_) engine_->tick();
    }
    if (cohort_.channels.ecg && t == t_ecg) {
      ++k_ecg;
      ecg_.append(t, ecg_value(t));
    }
    if (cohort_.channels.eda && t == t_eda) {
      ++k_eda;
      const double wander = 0.03 * std::sin(kTwoPi * t / 90.0 + eda_wander_phase_);
      const double left = eda_tonic_us_ + wander + eda_rng_->normal(0.0, 0.01);
      double right = 0.9 * eda_tonic_us_ + wander + eda_rng_->normal(0.0, 0.015);
      // Dominant-hand motion artifacts: occasional positive bumps.
      if (eda_rng_->uniform() < 0.01) right += eda_rng_->uniform(0.05, 0.3);
      eda_left_.append(t, left);
      eda_right_.append(t, right);
    }
    if (cohort_.channels.eeg && t == t_eeg) {
      ++k_eeg;
      for (int c = 0; c < kEegChannels; ++c) {
        const double v = eeg_dc_offset_uv_[static_cast<std::size_t>(c)] +
                         eeg_rng_->normal(0.0, 8.0) + cnv_value(t, c);
        eeg_[static_cast<std::size_t>(c)].append(t, v);
      }
    }
  }

  SimulatedSession out;
  out.natural_rate_bpm = breather_params_.natural_rate_bpm;
  out.measured_baseline_bpm = measured_baseline_bpm_;

  auto& rec = out.recording;
  rec.participant_id = participant_id_;
  rec.condition_order = conditions_;
  rec.markers = markers_;
  rec.tracks.emplace("breathing", std::move(breathing_));
  if (cohort_.channels.ecg) rec.tracks.emplace("ecg", std::move(ecg_));
  if (cohort_.channels.eda) {
    rec.tracks.emplace("eda_left", std::move(eda_left_));
    rec.tracks.emplace("eda_right", std::move(eda_right_));
  }
  for (auto& track : eeg_) {
    std::string id = track.channel_id();
    rec.tracks.emplace(std::move(id), std::move(track));
  }
  rec.validate(nullptr);

  auto& manifest = out.manifest;
  manifest.participant_id = rec.participant_id;
  manifest.condition_order = rec.condition_order;
  for (const auto& [id, track] : rec.tracks)
    manifest.channels[id] = {track.unit(), track.nominal_rate_hz(), 0.0};
  return out;
}

}  // namespace

SimulatedSession simulate_participant(const CohortSpec& cohort, int participant_index) {
  if (participant_index < 0 || participant_index >= cohort.n_participants)
    fail(errc::validation, "participant index out of range");
  ParticipantSim sim(cohort, participant_index);
  return sim.run();
}

std::vector<SimulatedSession> run_closed_loop(const CohortSpec& cohort) {
  if (cohort.n_participants < 2) fail(errc::validation, "cohort needs at least 2 participants");
  std::vector<SimulatedSession> sessions(static_cast<std::size_t>(cohort.n_participants));
  if (cohort.jobs <= 1) {
    for (int i = 0; i < cohort.n_participants; ++i)
      sessions[static_cast<std::size_t>(i)] = simulate_participant(cohort, i);
    return sessions;
  }
  std::vector<std::future<SimulatedSession>> futures;
  futures.reserve(static_cast<std::size_t>(cohort.n_participants));
  for (int i = 0; i < cohort.n_participants; ++i)
    futures.push_back(
        std::async(std::launch::async, [&cohort, i] { return simulate_participant(cohort, i); }));
  for (int i = 0; i < cohort.n_participants; ++i)
    sessions[static_cast<std::size_t>(i)] = futures[static_cast<std::size_t>(i)].get();
  return sessions;
}

}  // namespace bsync::simloop
