#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "bsync/common.hpp"
#include "bsync/streams.hpp"

// Synthetic participants, protocol scheduling, and the closed-loop runner
// that couples a simulated breather to the envelope engine. This is the
// desk-scale stand-in for a human study: effect magnitudes are free
// parameters, only their directions are meaningful.
namespace bsync::simloop {

struct BreatherParams {
  double natural_rate_bpm = 12.0;   // spontaneous rate, plausible range [6, 30]
  double coupling_k = 0.0;          // rad/s; 0 means no entrainment
  double phase_noise_sigma = 0.0;   // rad/sqrt(s)
  double amplitude_nu = 3.0;
  std::uint64_t seed = 0;
};

struct BreatherState {
  double phase_rad = 0.0;  // unwrapped
};

// One Euler-Maruyama step of the phase oscillator
//   dphi = (omega_n + K sin(phi_stim - phi)) dt + sigma sqrt(dt) N(0,1)
// returning the new state and the breath value amplitude*sin(phi).
std::pair<BreatherState, double> breather_step(const BreatherState& state,
                                               const BreatherParams& params,
                                               std::optional<double> stimulus_phase_rad,
                                               double dt_s, Rng& noise);

// Owns state and noise stream; one instance per simulated participant.
class Breather {
 public:
  explicit Breather(const BreatherParams& params, double initial_phase_rad = 0.0)
      : params_(params), rng_(params.seed) {
    state_.phase_rad = initial_phase_rad;
  }

  double step(std::optional<double> stimulus_phase_rad, double dt_s) {
    auto [next, value] = breather_step(state_, params_, stimulus_phase_rad, dt_s, rng_);
    state_ = next;
    return value;
  }

  double phase_rad() const { return state_.phase_rad; }
  const BreatherParams& params() const { return params_; }

  // Phase velocity without the noise term, in breaths per minute.
  double deterministic_rate_bpm(std::optional<double> stimulus_phase_rad) const;

 private:
  BreatherParams params_;
  BreatherState state_;
  Rng rng_;
};

struct Trial {
  double warning_t = 0.0;     // relative to block start
  double imperative_t = 0.0;  // warning_t + 4.5 exactly
  double iti_s = 0.0;         // gap after this trial, uniform [2, 5]
};

struct TrialSchedule {
  std::vector<Trial> trials;
  double end_t = 0.0;  // relative block end (after the last trial's gap)
};

// Deterministic given the seed. First warning 2 s after block start; each
// trial is warning -> 4.5 s -> imperative (0.3 s) -> ITI.
TrialSchedule schedule_block(std::uint64_t seed, int n_trials = 40);

// Baseline first, then a seeded permutation of FT/PT/PE.
std::vector<streams::Condition> assign_conditions(std::uint64_t seed);

struct ChannelToggles {
  bool ecg = true;
  bool eda = true;
  bool eeg = true;  // breathing is always generated
};

struct CohortSpec {
  int n_participants = 19;
  double rate_lo_bpm = 10.0;
  double rate_hi_bpm = 18.0;
  double coupling_lo = 0.3;   // rad/s, drawn uniformly per participant
  double coupling_hi = 0.3;
  double phase_noise_sigma = 0.08;
  std::uint64_t master_seed = 42;
  int trials_per_block = 40;
  double eeg_rate_hz = 125.0;
  double control_rate_hz = 100.0;
  ChannelToggles channels;
  int jobs = 1;  // participants simulated in parallel when > 1
};

struct SimulatedSession {
  streams::SessionRecording recording;
  streams::SessionManifest manifest;
  double natural_rate_bpm = 0.0;      // ground truth, for tests
  double measured_baseline_bpm = 0.0; // what the PT design actually used
};

// Runs the full four-block protocol for one participant: the baseline block
// sets the PT rate, FT/PT couple the breather to the engine phase, PE couples
// it to a lagged copy of its own phase, and the relaxation state shapes the
// synthetic EDA/ECG/EEG channels.
SimulatedSession simulate_participant(const CohortSpec& cohort, int participant_index);

std::vector<SimulatedSession> run_closed_loop(const CohortSpec& cohort);

// Synthetic ECG: Gaussian R wave plus P/T bumps around each beat time, slow
// baseline wander, optional white noise. Shared by the simulator and the
// detector tests (the beat times are the ground truth).
struct EcgWaveParams {
  double r_amplitude_mv = 1.0;
  double r_sigma_s = 0.010;
  double p_amplitude_mv = 0.12;
  double p_sigma_s = 0.025;
  double p_lead_s = 0.16;
  double t_amplitude_mv = 0.30;
  double t_sigma_s = 0.050;
  double t_lag_s = 0.25;
  double wander_amplitude_mv = 0.05;
  double wander_freq_hz = 0.33;
  double noise_sigma_mv = 0.0;
  std::uint64_t noise_seed = 1;
};

streams::SignalTrack synth_ecg(const std::vector<double>& r_times_s, double duration_s,
                               double fs_hz, const EcgWaveParams& wave = {});

}  // namespace bsync::simloop
