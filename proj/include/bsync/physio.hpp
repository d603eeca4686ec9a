#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bsync/common.hpp"
#include "bsync/streams.hpp"

// EDA, ECG, and EEG feature extraction. Everything here is pure; blocks and
// participants can be processed in parallel.
namespace bsync::physio {

enum class Side { left, right };

struct EdaBlockMetric {
  double slope_metric = 0.0;  // z-units per second
  Side side = Side::left;
};

// Zero-phase 6th-order 1 Hz lowpass followed by session-level z-scoring.
// Input must be uniformly sampled (resample first) and span at least 30 s.
ArrayXd eda_preprocess(const streams::SignalTrack& raw);

// Mean of the fs-scaled first differences over one block; telescopes to
// fs * (z_n - z_1) / (n - 1).
double eda_block_slope(const Eigen::Ref<const ArrayXd>& z_block, double fs_hz);

EdaBlockMetric eda_block_metric(const Eigen::Ref<const ArrayXd>& z_block, double fs_hz,
                                Side side);

struct BeatSeries {
  ArrayXd r_times_s;  // refined R-peak times, >= 200 ms apart
  ArrayXd ibi_ms;     // consecutive differences, length = beats - 1
  ArrayXd z_ibi;      // session-level z-scores, filled by session_z_ibi

  Index n_beats() const { return r_times_s.size(); }
};

// Z-scores the pooled intervals of all blocks (one session) and writes each
// block's share back into its z_ibi. Throws on constant or too-few pooled
// intervals.
void session_z_ibi(std::vector<BeatSeries>& blocks);

struct PanTompkinsConfig {
  double band_lo_hz = 5.0;
  double band_hi_hz = 15.0;
  int band_order = 2;            // prototype order of the bandpass
  double integration_window_s = 0.150;
  double refractory_s = 0.200;
  double searchback_factor = 1.66;  // of the running mean RR
  double refine_window_s = 0.040;   // raw-signal search around the fiducial
};

// QRS detection: bandpass -> 5-point derivative -> squaring -> moving-window
// integration -> dual adaptive thresholds with refractory and mean-RR
// search-back; each fiducial is refined to the raw-signal maximum nearby.
// Needs >= 10 s of uniformly sampled data. A signal without detectable beats
// yields an empty series (optionally noted in `warnings`).
BeatSeries pan_tompkins(const streams::SignalTrack& ecg, const PanTompkinsConfig& cfg = {},
                        std::vector<std::string>* warnings = nullptr);

struct HrvFeatures {
  double sdnn_ms = 0.0;
  double rmssd_ms = 0.0;
  double pnn50_fraction = 0.0;
  double lf_power = 0.0;   // 0.04-0.15 Hz band of the 4 Hz tachogram PSD
  double hf_power = 0.0;   // 0.15-0.40 Hz
  double lf_hf_ratio = 0.0;
  double sd1_ms = 0.0;
  double sd2_ms = 0.0;
};

HrvFeatures hrv_features(const BeatSeries& beats);

// Returns nothing when the block holds fewer than `min_span_s` seconds of
// valid IBIs (exclusion, not an error).
std::optional<HrvFeatures> hrv_features_for_block(const BeatSeries& beats,
                                                  double min_span_s = 120.0);

enum class KurtosisConvention { excess, raw };

struct EegChannels {
  std::vector<std::string> ids;
  Eigen::MatrixXd data;  // rows = channels, cols = samples
  double fs_hz = 0.0;
  double t0_s = 0.0;     // session time of the first column
};

struct EegClean {
  EegChannels kept;
  std::vector<std::string> rejected_ids;
};

// x minus its 0.05 Hz zero-phase lowpass (drift removal).
ArrayXd eeg_highpass(const Eigen::Ref<const ArrayXd>& x, double fs_hz);

// Highpass every channel, drop channels whose kurtosis exceeds the
// threshold, and re-reference the survivors to their instantaneous average.
// Throws when fewer than 2 channels survive.
EegClean eeg_preprocess(const EegChannels& in, double kurtosis_threshold = 5.0,
                        KurtosisConvention convention = KurtosisConvention::excess);

struct EpochParams {
  double pre_s = 1.0;        // epoch starts this long before the stimulus
  double post_s = 4.0;       // and ends this long after
  double baseline_pre_s = 0.5;  // baseline window is [-baseline_pre_s, 0)
  double reject_uv = 50.0;
};

struct Epochs {
  Eigen::MatrixXd data;  // rows = accepted epochs, cols = samples
  double fs_hz = 0.0;
  double pre_s = 1.0;
  Index n_rejected = 0;
  Index n_skipped = 0;  // stimuli too close to the recording edge
};

// Cuts [-pre, +post] epochs around stimulus times, subtracts the pre-stimulus
// baseline mean, and drops epochs with any |amplitude| above the threshold.
Epochs epoch_and_reject(const Eigen::Ref<const ArrayXd>& channel, double fs_hz, double t0_s,
                        const std::vector<double>& stimulus_times, const EpochParams& p = {});

struct CnvAmplitudes {
  double early_uv = 0.0;  // 400-1400 ms after the stimulus
  double mid_uv = 0.0;    // 1500-2600 ms
  double late_uv = 0.0;   // 2600-3700 ms
};

// Grand average over accepted epochs, then the mean inside each window
// (inclusive sample bounds). Needs at least one epoch.
CnvAmplitudes cnv_mean_amplitudes(const Epochs& epochs);

}  // namespace bsync::physio
