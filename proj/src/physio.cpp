#include "bsync/physio.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "bsync/dsp.hpp"

namespace bsync::physio {

ArrayXd eda_preprocess(const streams::SignalTrack& raw) {
  if (raw.size() < 2) fail(errc::validation, "EDA preprocessing needs at least 2 samples");
  const double span = raw.t_back() - raw.t_front();
  if (span < 30.0) fail(errc::validation, "EDA preprocessing needs at least 30 s of data");

  const double fs = raw.nominal_rate_hz();
  const auto filt = dsp::design_butterworth(dsp::FilterSpec::lowpass(6, 1.0, fs));
  const ArrayXd smoothed = dsp::filter_zero_phase(raw.values(), filt);
  return dsp::zscore(smoothed);
}

double eda_block_slope(const Eigen::Ref<const ArrayXd>& z_block, double fs_hz) {
  return dsp::diff_slope(z_block, fs_hz).mean();
}

EdaBlockMetric eda_block_metric(const Eigen::Ref<const ArrayXd>& z_block, double fs_hz,
                                Side side) {
  return {eda_block_slope(z_block, fs_hz), side};
}

void session_z_ibi(std::vector<BeatSeries>& blocks) {
  Index total = 0;
  for (const auto& b : blocks) total += b.ibi_ms.size();
  ArrayXd all(total);
  Index at = 0;
  for (const auto& b : blocks) {
    all.segment(at, b.ibi_ms.size()) = b.ibi_ms;
    at += b.ibi_ms.size();
  }
  const ArrayXd z = dsp::zscore(all);
  at = 0;
  for (auto& b : blocks) {
    b.z_ibi = z.segment(at, b.ibi_ms.size());
    at += b.ibi_ms.size();
  }
}

namespace {

// Plateau-aware local maxima indices of a series (first sample of a plateau).
std::vector<Index> local_maxima(const Eigen::Ref<const ArrayXd>& x) {
  std::vector<Index> out;
  const Index n = x.size();
  Index i = 1;
  while (i < n - 1) {
    if (x[i] <= x[i - 1]) {
      ++i;
      continue;
    }
    Index j = i;
    while (j + 1 < n && x[j + 1] == x[i]) ++j;
    if (j + 1 < n && x[j + 1] < x[i]) out.push_back(i);
    i = j + 1;
  }
  return out;
}

}  // namespace

BeatSeries pan_tompkins(const streams::SignalTrack& ecg, const PanTompkinsConfig& cfg,
                        std::vector<std::string>* warnings) {
  BeatSeries beats;
  beats.r_times_s.resize(0);
  beats.ibi_ms.resize(0);
  if (ecg.size() < 2) fail(errc::validation, "ECG too short");

  const double fs = ecg.nominal_rate_hz();
  const auto raw = ecg.values();
  const auto times = ecg.times();
  const Index n = raw.size();
  if ((times[n - 1] - times[0]) < 10.0) fail(errc::validation, "ECG needs at least 10 s of data");

  // 1) Bandpass (zero phase keeps the QRS aligned with the raw trace).
  const auto bp = dsp::design_butterworth(
      dsp::FilterSpec::bandpass(cfg.band_order, cfg.band_lo_hz, cfg.band_hi_hz, fs));
  const ArrayXd filtered = dsp::filter_zero_phase(raw, bp);

  // 2) Five-point derivative, group delay 2 samples.
  ArrayXd deriv = ArrayXd::Zero(n);
  for (Index i = 4; i < n; ++i)
    deriv[i] = (2.0 * filtered[i] + filtered[i - 1] - filtered[i - 3] - 2.0 * filtered[i - 4]) / 8.0;

  // 3) Squaring, 4) moving-window integration (odd window, delay (w-1)/2).
  const ArrayXd squared = deriv.square();
  const Index w = 2 * static_cast<Index>(std::floor(cfg.integration_window_s * fs / 2.0)) + 1;
  ArrayXd mwi = ArrayXd::Zero(n);
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    acc += squared[i];
    if (i >= w) acc -= squared[i - w];
    mwi[i] = acc / static_cast<double>(std::min(i + 1, w));
  }
  const Index fiducial_delay = 2 + (w - 1) / 2;

  // 5) Adaptive thresholds over MWI candidate peaks.
  const auto candidates = local_maxima(mwi);
  if (candidates.empty()) {
    if (warnings) warnings->push_back(ecg.channel_id() + ": no QRS candidates found");
    return beats;
  }

  const Index init_len = std::min<Index>(static_cast<Index>(2.0 * fs), n);
  double spk = 0.5 * mwi.head(init_len).maxCoeff();
  double npk = 0.5 * mwi.head(init_len).mean();
  if (!(spk > 0.0)) {
    if (warnings) warnings->push_back(ecg.channel_id() + ": flat signal, no beats");
    return beats;
  }

  const Index refractory = static_cast<Index>(std::llround(cfg.refractory_s * fs));
  std::deque<double> rr_history;
  double rr_mean = 0.0;
  std::vector<Index> qrs_fiducials;
  std::vector<std::pair<Index, double>> noise_peaks;  // since the last QRS

  auto accept = [&](Index idx, double value, bool searchback) {
    if (searchback)
      spk = 0.25 * value + 0.75 * spk;
    else
      spk = 0.125 * value + 0.875 * spk;
    if (!qrs_fiducials.empty()) {
      const double rr = static_cast<double>(idx - qrs_fiducials.back());
      rr_history.push_back(rr);
      if (rr_history.size() > 8) rr_history.pop_front();
      rr_mean = 0.0;
      for (const double r : rr_history) rr_mean += r;
      rr_mean /= static_cast<double>(rr_history.size());
    }
    qrs_fiducials.push_back(idx);
    noise_peaks.clear();
  };

  for (const Index idx : candidates) {
    const double value = mwi[idx];
    const double thr1 = npk + 0.25 * (spk - npk);

    // Search-back: when no beat arrived for 1.66 mean RRs, revisit the
    // noise-classified peaks with the halved threshold.
    if (!qrs_fiducials.empty() && rr_mean > 0.0 &&
        static_cast<double>(idx - qrs_fiducials.back()) > cfg.searchback_factor * rr_mean) {
      const double thr2 = 0.5 * thr1;
      Index best = -1;
      double best_v = thr2;
      for (const auto& [nidx, nval] : noise_peaks) {
        if (nidx - qrs_fiducials.back() >= refractory && nval > best_v) {
          best = nidx;
          best_v = nval;
        }
      }
      if (best >= 0) accept(best, best_v, true);
    }

    const bool refractory_ok =
        qrs_fiducials.empty() || idx - qrs_fiducials.back() >= refractory;
    if (value > thr1 && refractory_ok) {
      accept(idx, value, false);
    } else {
      npk = 0.125 * value + 0.875 * npk;
      noise_peaks.emplace_back(idx, value);
    }
  }

  if (qrs_fiducials.empty()) {
    if (warnings) warnings->push_back(ecg.channel_id() + ": no beats above threshold");
    return beats;
  }

  // 6) Refine each fiducial to the raw-signal maximum near the
  // delay-compensated location. A threshold crossing can sit on a ripple of
  // the rising MWI edge, so first snap to the integration peak ahead of it.
  const Index half_win = static_cast<Index>(std::llround(cfg.refine_window_s * fs));
  std::vector<double> r_times;
  for (Index fid : qrs_fiducials) {
    for (Index i = fid; i <= std::min<Index>(fid + w, n - 1); ++i)
      if (mwi[i] > mwi[fid]) fid = i;
    const Index center = std::clamp<Index>(fid - fiducial_delay, 0, n - 1);
    const Index lo = std::max<Index>(0, center - half_win);
    const Index hi = std::min<Index>(n - 1, center + half_win);
    Index best = lo;
    for (Index i = lo + 1; i <= hi; ++i)
      if (raw[i] > raw[best]) best = i;
    r_times.push_back(times[best]);
  }
  std::sort(r_times.begin(), r_times.end());

  // Refinement may pull neighbours together; enforce the refractory on the
  // final times (keep the earlier beat).
  std::vector<double> kept;
  for (const double t : r_times) {
    if (kept.empty() || t - kept.back() >= cfg.refractory_s) kept.push_back(t);
  }

  beats.r_times_s = Eigen::Map<const ArrayXd>(kept.data(), static_cast<Index>(kept.size()));
  if (kept.size() >= 2) {
    beats.ibi_ms.resize(static_cast<Index>(kept.size()) - 1);
    for (std::size_t i = 0; i + 1 < kept.size(); ++i)
      beats.ibi_ms[static_cast<Index>(i)] = (kept[i + 1] - kept[i]) * 1000.0;
  }
  return beats;
}

HrvFeatures hrv_features(const BeatSeries& beats) {
  const ArrayXd& ibi = beats.ibi_ms;
  if (ibi.size() < 2) fail(errc::degenerate_input, "HRV needs at least 2 intervals");

  HrvFeatures f;
  f.sdnn_ms = dsp::stddev_pop(ibi);
  const ArrayXd diffs = ibi.tail(ibi.size() - 1) - ibi.head(ibi.size() - 1);
  f.rmssd_ms = std::sqrt(diffs.square().mean());
  f.pnn50_fraction = (diffs.abs() > 50.0).cast<double>().mean();
  f.sd1_ms = f.rmssd_ms / std::sqrt(2.0);
  f.sd2_ms = std::sqrt(std::max(0.0, 2.0 * f.sdnn_ms * f.sdnn_ms - f.sd1_ms * f.sd1_ms));

  // Spectral features from the 4 Hz-resampled tachogram.
  if (beats.n_beats() >= 3) {
    streams::SignalTrack tacho("ibi_tachogram", streams::Unit::unitless, 4.0);
    for (Index i = 0; i + 1 < beats.n_beats(); ++i)
      tacho.append(beats.r_times_s[i + 1], ibi[i]);
    if (tacho.t_back() - tacho.t_front() > 2.0) {
      const auto uniform = streams::resample_uniform(tacho, 4.0);
      const Index n = uniform.size();
      const Index seg = std::min<Index>(256, n);
      if (seg >= 8) {
        const auto psd = dsp::welch_psd(uniform.values(), 4.0, seg, seg / 2);
        f.lf_power = dsp::band_power(psd, 0.04, 0.15);
        f.hf_power = dsp::band_power(psd, 0.15, 0.40);
        f.lf_hf_ratio = f.hf_power > 0.0 ? f.lf_power / f.hf_power : 0.0;
      }
    }
  }
  return f;
}

std::optional<HrvFeatures> hrv_features_for_block(const BeatSeries& beats, double min_span_s) {
  if (beats.n_beats() < 2) return std::nullopt;
  const double span = beats.r_times_s[beats.n_beats() - 1] - beats.r_times_s[0];
  if (span < min_span_s) return std::nullopt;
  return hrv_features(beats);
}

ArrayXd eeg_highpass(const Eigen::Ref<const ArrayXd>& x, double fs_hz) {
  const auto lp = dsp::design_butterworth(dsp::FilterSpec::lowpass(2, 0.05, fs_hz));
  return x - dsp::filter_zero_phase(x, lp);
}

EegClean eeg_preprocess(const EegChannels& in, double kurtosis_threshold,
                        KurtosisConvention convention) {
  const Index n_ch = in.data.rows();
  if (n_ch != static_cast<Index>(in.ids.size()))
    fail(errc::validation, "channel id/data mismatch");
  if (n_ch < 2) fail(errc::validation, "EEG preprocessing needs at least 2 channels");

  Eigen::MatrixXd highpassed(n_ch, in.data.cols());
  std::vector<bool> keep(static_cast<std::size_t>(n_ch), true);
  for (Index c = 0; c < n_ch; ++c) {
    highpassed.row(c) = eeg_highpass(in.data.row(c).transpose(), in.fs_hz).transpose();
    double k = 0.0;
    const ArrayXd row = highpassed.row(c).transpose().array();
    if (dsp::variance_pop(row) > 0.0) {
      k = dsp::kurtosis_excess(row);
      if (convention == KurtosisConvention::raw) k += 3.0;
    }
    // A flat channel has undefined kurtosis; it is degenerate but not spiky.
    if (k > kurtosis_threshold) keep[static_cast<std::size_t>(c)] = false;
  }

  EegClean out;
  Index n_keep = 0;
  for (const bool k : keep) n_keep += k ? 1 : 0;
  if (n_keep < 2) fail(errc::validation, "fewer than 2 EEG channels survived rejection");

  out.kept.fs_hz = in.fs_hz;
  out.kept.t0_s = in.t0_s;
  out.kept.data.resize(n_keep, in.data.cols());
  Index r = 0;
  for (Index c = 0; c < n_ch; ++c) {
    if (keep[static_cast<std::size_t>(c)]) {
      out.kept.ids.push_back(in.ids[static_cast<std::size_t>(c)]);
      out.kept.data.row(r++) = highpassed.row(c);
    } else {
      out.rejected_ids.push_back(in.ids[static_cast<std::size_t>(c)]);
    }
  }

  // Average reference: subtract the instantaneous mean across kept channels.
  const Eigen::RowVectorXd avg = out.kept.data.colwise().mean();
  out.kept.data.rowwise() -= avg;
  return out;
}

Epochs epoch_and_reject(const Eigen::Ref<const ArrayXd>& channel, double fs_hz, double t0_s,
                        const std::vector<double>& stimulus_times, const EpochParams& p) {
  const Index n = channel.size();
  const Index n_ep = static_cast<Index>(std::llround((p.pre_s + p.post_s) * fs_hz));
  const Index base_lo = static_cast<Index>(std::llround((p.pre_s - p.baseline_pre_s) * fs_hz));
  const Index base_hi = static_cast<Index>(std::llround(p.pre_s * fs_hz));  // exclusive

  std::vector<ArrayXd> accepted;
  Epochs out;
  out.fs_hz = fs_hz;
  out.pre_s = p.pre_s;
  for (const double stim_t : stimulus_times) {
    const Index start = static_cast<Index>(std::llround((stim_t - p.pre_s - t0_s) * fs_hz));
    if (start < 0 || start + n_ep > n) {
      ++out.n_skipped;
      continue;
    }
    ArrayXd epoch = channel.segment(start, n_ep);
    epoch -= epoch.segment(base_lo, base_hi - base_lo).mean();
    if (epoch.abs().maxCoeff() > p.reject_uv) {
      ++out.n_rejected;
      continue;
    }
    accepted.push_back(std::move(epoch));
  }

  out.data.resize(static_cast<Index>(accepted.size()), n_ep);
  for (std::size_t i = 0; i < accepted.size(); ++i)
    out.data.row(static_cast<Index>(i)) = accepted[i].transpose();
  return out;
}

CnvAmplitudes cnv_mean_amplitudes(const Epochs& epochs) {
  if (epochs.data.rows() < 1) fail(errc::degenerate_input, "no accepted epochs");
  const ArrayXd grand = epochs.data.colwise().mean().transpose().array();

  auto window_mean = [&](double lo_ms, double hi_ms) {
    // Inclusive sample bounds make the mean of a linear ramp exact.
    const Index lo = static_cast<Index>(std::llround((epochs.pre_s + lo_ms / 1000.0) * epochs.fs_hz));
    const Index hi = static_cast<Index>(std::llround((epochs.pre_s + hi_ms / 1000.0) * epochs.fs_hz));
    const Index hi_clamped = std::min<Index>(hi, grand.size() - 1);
    return grand.segment(lo, hi_clamped - lo + 1).mean();
  };

  CnvAmplitudes cnv;
  cnv.early_uv = window_mean(400.0, 1400.0);
  cnv.mid_uv = window_mean(1500.0, 2600.0);
  cnv.late_uv = window_mean(2600.0, 3700.0);
  return cnv;
}

}  // namespace bsync::physio
