#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>

#include "bsync/dsp.hpp"
#include "bsync/physio.hpp"
#include "bsync/simloop.hpp"

using namespace bsync;
using Eigen::ArrayXd;
using Eigen::MatrixXd;

namespace {

streams::SignalTrack eda_track(const std::function<double(double)>& f, double duration_s,
                               double fs = 4.0) {
  streams::SignalTrack track("eda_left", streams::Unit::microsiemens, fs);
  const Index n = static_cast<Index>(duration_s * fs);
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    track.append(t, f(t));
  }
  return track;
}

struct MatchStats {
  double recall = 0.0, precision = 0.0, max_dt_ms = 0.0;
};

MatchStats match_beats(const std::vector<double>& truth, const ArrayXd& detected,
                       double window_s = 0.1) {
  Index matched = 0;
  double max_dt = 0.0;
  for (const double t : truth) {
    double best = 1e9;
    for (Index i = 0; i < detected.size(); ++i) best = std::min(best, std::abs(detected[i] - t));
    if (best <= window_s) {
      ++matched;
      max_dt = std::max(max_dt, best);
    }
  }
  MatchStats m;
  m.recall = truth.empty() ? 0.0 : static_cast<double>(matched) / truth.size();
  m.precision = detected.size() == 0 ? 0.0 : static_cast<double>(matched) / detected.size();
  m.max_dt_ms = max_dt * 1000.0;
  return m;
}

}  // namespace

TEST_CASE("eda preprocessing keeps slow components and kills fast ones") {
  // 0.05 Hz sinusoid on a 5 uS pedestal: after filtering and z-scoring the
  // shape is the same sinusoid with unit power (amplitude sqrt(2)).
  const auto slow = eda_track(
      [](double t) { return 5.0 + 0.8 * std::sin(2.0 * std::numbers::pi * 0.05 * t); }, 400.0);
  const ArrayXd z = physio::eda_preprocess(slow);
  CHECK(std::abs(z.mean()) < 1e-9);
  double amp = 0.0;
  for (Index i = z.size() / 4; i < 3 * z.size() / 4; ++i) amp = std::max(amp, std::abs(z[i]));
  CHECK(amp == doctest::Approx(std::sqrt(2.0)).epsilon(0.01));

  // Linear drift passes through (z-scored drift stays monotone).
  const auto drift = eda_track([](double t) { return 2.0 + 0.01 * t; }, 400.0);
  const ArrayXd zd = physio::eda_preprocess(drift);
  Index increasing = 0;
  for (Index i = 1; i < zd.size(); ++i) increasing += zd[i] > zd[i - 1] ? 1 : 0;
  CHECK(increasing > zd.size() * 9 / 10);

  // White noise: power near 2 Hz attenuated by >= 30 dB by the filter stage.
  Rng rng(31);
  streams::SignalTrack noisy("eda_left", streams::Unit::microsiemens, 4.0);
  for (Index i = 0; i < 4096; ++i) noisy.append(i / 4.0, 5.0 + rng.normal());
  const auto f = dsp::design_butterworth(dsp::FilterSpec::lowpass(6, 1.0, 4.0));
  const ArrayXd filtered = dsp::filter_zero_phase(noisy.values(), f);
  const auto psd_raw = dsp::welch_psd(noisy.values(), 4.0, 512, 256);
  const auto psd_filt = dsp::welch_psd(filtered, 4.0, 512, 256);
  const double hi_raw = dsp::band_power(psd_raw, 1.9, 2.01);
  const double hi_filt = dsp::band_power(psd_filt, 1.9, 2.01);
  CHECK(hi_filt / hi_raw < 1e-3);

  // Constant input has no z-scores; short input is rejected.
  const auto flat = eda_track([](double) { return 3.0; }, 400.0);
  CHECK_THROWS_AS((void)physio::eda_preprocess(flat), Error);
  const auto brief = eda_track([](double t) { return 3.0 + t; }, 10.0);
  CHECK_THROWS_AS((void)physio::eda_preprocess(brief), Error);
}

TEST_CASE("eda block slope matches the closed form") {
  // z descending linearly 1 -> -1 over 420 s at 4 Hz.
  const Index n = 420 * 4 + 1;
  ArrayXd z(n);
  for (Index i = 0; i < n; ++i)
    z[i] = 1.0 - 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  CHECK(std::abs(physio::eda_block_slope(z, 4.0) - (-2.0 / 420.0)) < 1e-9);

  CHECK(physio::eda_block_slope(ArrayXd::Constant(100, 0.7), 4.0) == 0.0);

  ArrayXd up(100);
  for (Index i = 0; i < 100; ++i) up[i] = 0.01 * static_cast<double>(i);
  CHECK(physio::eda_block_slope(up, 4.0) > 0.0);

  CHECK_THROWS_AS((void)physio::eda_block_slope(ArrayXd::Constant(1, 0.0), 4.0), Error);
}

TEST_CASE("pan-tompkins on clean 60 bpm synthetic ecg is exact") {
  std::vector<double> truth;
  for (double t = 0.5; t < 600.0; t += 1.0) truth.push_back(t);
  const auto ecg = simloop::synth_ecg(truth, 600.0, 250.0);

  const auto t0 = std::chrono::steady_clock::now();
  const auto beats = physio::pan_tompkins(ecg);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(elapsed < 5.0);

  const auto m = match_beats(truth, beats.r_times_s);
  CHECK(m.recall == 1.0);
  CHECK(m.precision == 1.0);
  for (Index i = 0; i < beats.ibi_ms.size(); ++i)
    CHECK(std::abs(beats.ibi_ms[i] - 1000.0) <= 4.0 + 1e-9);
}

TEST_CASE("pan-tompkins at 10 dB snr keeps recall, precision and timing") {
  Rng jitter(71);
  std::vector<double> truth;
  double t = 0.6;
  while (t < 600.0) {
    truth.push_back(t);
    t += 1.0 + 0.05 * jitter.normal();  // mild rate variability
  }
  simloop::EcgWaveParams wave;
  const auto clean = simloop::synth_ecg(truth, 600.0, 250.0, wave);
  const double rms = std::sqrt(clean.values().square().mean());
  wave.noise_sigma_mv = rms / std::sqrt(10.0);  // 10 dB SNR
  wave.noise_seed = 4242;
  const auto noisy = simloop::synth_ecg(truth, 600.0, 250.0, wave);

  const auto beats = physio::pan_tompkins(noisy);
  const auto m = match_beats(truth, beats.r_times_s);
  CHECK(m.recall >= 0.99);
  CHECK(m.precision >= 0.99);
  CHECK(m.max_dt_ms <= 20.0);
}

TEST_CASE("pan-tompkins handles flatline and refuses short input") {
  streams::SignalTrack flat("ecg", streams::Unit::millivolt, 250.0);
  for (Index i = 0; i < 250 * 30; ++i) flat.append(i / 250.0, 0.0);
  std::vector<std::string> warnings;
  const auto beats = physio::pan_tompkins(flat, {}, &warnings);
  CHECK(beats.n_beats() == 0);
  CHECK(!warnings.empty());

  streams::SignalTrack brief("ecg", streams::Unit::millivolt, 250.0);
  for (Index i = 0; i < 250 * 5; ++i) brief.append(i / 250.0, 0.0);
  CHECK_THROWS_AS((void)physio::pan_tompkins(brief), Error);
}

TEST_CASE("pan-tompkins never reports beats closer than the refractory") {
  Rng rng(1234);
  for (int round = 0; round < 5; ++round) {
    streams::SignalTrack track("ecg", streams::Unit::millivolt, 250.0);
    for (Index i = 0; i < 250 * 40; ++i) {
      double v = rng.normal(0.0, 0.3);
      if (rng.uniform() < 0.01) v += rng.uniform(1.0, 8.0);  // random spikes
      track.append(i / 250.0, v);
    }
    const auto beats = physio::pan_tompkins(track);
    for (Index i = 1; i < beats.n_beats(); ++i)
      CHECK(beats.r_times_s[i] - beats.r_times_s[i - 1] >= 0.2 - 1e-12);
  }
}

TEST_CASE("hrv features on constructed interval series") {
  physio::BeatSeries constant;
  constant.r_times_s = ArrayXd::LinSpaced(151, 0.0, 150.0);
  constant.ibi_ms = ArrayXd::Constant(150, 1000.0);
  const auto f0 = physio::hrv_features(constant);
  CHECK(f0.sdnn_ms == 0.0);
  CHECK(f0.rmssd_ms == 0.0);
  CHECK(f0.pnn50_fraction == 0.0);

  physio::BeatSeries alternating;
  const Index n = 200;
  alternating.ibi_ms.resize(n);
  alternating.r_times_s.resize(n + 1);
  alternating.r_times_s[0] = 0.0;
  for (Index i = 0; i < n; ++i) {
    alternating.ibi_ms[i] = (i % 2 == 0) ? 990.0 : 1010.0;
    alternating.r_times_s[i + 1] = alternating.r_times_s[i] + alternating.ibi_ms[i] / 1000.0;
  }
  const auto f1 = physio::hrv_features(alternating);
  CHECK(f1.sdnn_ms == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(f1.rmssd_ms == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(f1.pnn50_fraction == 0.0);

  // 0.1 Hz sinusoidal IBI modulation concentrates power in the LF band.
  physio::BeatSeries lf;
  std::vector<double> times{0.0};
  while (times.back() < 600.0) {
    const double ibi = 1.0 + 0.05 * std::sin(2.0 * std::numbers::pi * 0.1 * times.back());
    times.push_back(times.back() + ibi);
  }
  lf.r_times_s.resize(static_cast<Index>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) lf.r_times_s[static_cast<Index>(i)] = times[i];
  lf.ibi_ms.resize(lf.r_times_s.size() - 1);
  for (Index i = 0; i + 1 < lf.r_times_s.size(); ++i)
    lf.ibi_ms[i] = (lf.r_times_s[i + 1] - lf.r_times_s[i]) * 1000.0;
  const auto f2 = physio::hrv_features(lf);
  CHECK(f2.lf_power > 10.0 * f2.hf_power);
}

TEST_CASE("poincare identities against the direct scatter computation") {
  Rng rng(55);
  physio::BeatSeries beats;
  const Index n = 500;
  beats.ibi_ms.resize(n);
  beats.r_times_s.resize(n + 1);
  beats.r_times_s[0] = 0.0;
  for (Index i = 0; i < n; ++i) {
    beats.ibi_ms[i] = 950.0 + 60.0 * rng.uniform();
    beats.r_times_s[i + 1] = beats.r_times_s[i] + beats.ibi_ms[i] / 1000.0;
  }
  const auto f = physio::hrv_features(beats);

  // SD1: rms perpendicular distance of (x_i, x_{i+1}) from the identity line.
  const ArrayXd d = beats.ibi_ms.tail(n - 1) - beats.ibi_ms.head(n - 1);
  const double sd1_direct = std::sqrt((d / std::sqrt(2.0)).square().mean());
  CHECK(f.sd1_ms == doctest::Approx(sd1_direct).epsilon(1e-9));

  const double sdnn = dsp::stddev_pop(beats.ibi_ms);
  const double sd2_direct = std::sqrt(2.0 * sdnn * sdnn - sd1_direct * sd1_direct);
  CHECK(f.sd2_ms == doctest::Approx(sd2_direct).epsilon(1e-9));

  // Positive lag-1 autocorrelation keeps sd1 <= sd2.
  physio::BeatSeries smooth;
  smooth.ibi_ms.resize(n);
  smooth.r_times_s.resize(n + 1);
  smooth.r_times_s[0] = 0.0;
  double level = 1000.0;
  for (Index i = 0; i < n; ++i) {
    level += rng.normal(0.0, 5.0);
    smooth.ibi_ms[i] = level;
    smooth.r_times_s[i + 1] = smooth.r_times_s[i] + level / 1000.0;
  }
  const auto fs = physio::hrv_features(smooth);
  CHECK(fs.sd1_ms <= fs.sd2_ms);
}

TEST_CASE("session z_ibi pools blocks with zero mean and unit variance") {
  Rng rng(66);
  std::vector<physio::BeatSeries> blocks(4);
  for (auto& b : blocks) {
    const Index n = 40;
    b.ibi_ms.resize(n);
    b.r_times_s.resize(n + 1);
    b.r_times_s[0] = 0.0;
    for (Index i = 0; i < n; ++i) {
      b.ibi_ms[i] = 900.0 + 120.0 * rng.uniform();
      b.r_times_s[i + 1] = b.r_times_s[i] + b.ibi_ms[i] / 1000.0;
    }
  }
  physio::session_z_ibi(blocks);
  ArrayXd all(4 * 40);
  for (int b = 0; b < 4; ++b) all.segment(b * 40, 40) = blocks[static_cast<std::size_t>(b)].z_ibi;
  CHECK(std::abs(all.mean()) < 1e-9);
  CHECK(dsp::variance_pop(all) == doctest::Approx(1.0).epsilon(1e-9));

  // The metric struct carries the side label with the slope.
  ArrayXd ramp(100);
  for (Index i = 0; i < 100; ++i) ramp[i] = 0.01 * static_cast<double>(i);
  const auto metric = physio::eda_block_metric(ramp, 4.0, physio::Side::right);
  CHECK(metric.side == physio::Side::right);
  CHECK(metric.slope_metric == doctest::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("hrv block gate excludes spans under two minutes") {
  physio::BeatSeries shortspan;
  shortspan.r_times_s = ArrayXd::LinSpaced(100, 0.0, 99.0);  // 99 s
  shortspan.ibi_ms = ArrayXd::Constant(99, 1000.0);
  CHECK(!physio::hrv_features_for_block(shortspan).has_value());

  physio::BeatSeries longspan;
  longspan.r_times_s = ArrayXd::LinSpaced(130, 0.0, 129.0);  // 129 s
  longspan.ibi_ms = ArrayXd::Constant(129, 1000.0);
  CHECK(physio::hrv_features_for_block(longspan).has_value());
}

TEST_CASE("eeg highpass removes dc exactly") {
  const ArrayXd dc = ArrayXd::Constant(5000, 42.0);
  CHECK(physio::eeg_highpass(dc, 500.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("eeg preprocessing rejects the spiky channel and re-references the rest") {
  Rng rng(77);
  const Index n_samp = 4000;
  physio::EegChannels in;
  in.fs_hz = 500.0;
  in.t0_s = 0.0;
  in.data.resize(6, n_samp);
  for (int c = 0; c < 6; ++c) {
    in.ids.push_back("eeg_ch0" + std::to_string(c + 1));
    for (Index i = 0; i < n_samp; ++i) in.data(c, i) = 10.0 * c + 8.0 * rng.normal();
  }
  // Channel 4 gets rare huge spikes: kurtosis far above 5.
  for (Index i = 250; i < n_samp; i += 500) in.data(3, i) += 300.0;

  const auto clean = physio::eeg_preprocess(in);
  REQUIRE(clean.rejected_ids.size() == 1);
  CHECK(clean.rejected_ids[0] == "eeg_ch04");
  CHECK(clean.kept.ids.size() == 5);

  // Average reference: per-sample mean across kept channels is zero.
  const Eigen::RowVectorXd col_mean = clean.kept.data.colwise().mean();
  CHECK(col_mean.array().abs().maxCoeff() < 1e-9);

  // Re-referencing again changes nothing.
  MatrixXd again = clean.kept.data;
  again.rowwise() -= again.colwise().mean();
  CHECK((again - clean.kept.data).array().abs().maxCoeff() < 1e-12);

  // If rejection leaves fewer than two channels, that is an error.
  physio::EegChannels two;
  two.fs_hz = 500.0;
  two.data.resize(3, n_samp);
  two.ids = {"a", "b", "c"};
  for (Index i = 0; i < n_samp; ++i) {
    two.data(0, i) = 8.0 * rng.normal();
    two.data(1, i) = (i % 400 == 200) ? 500.0 : 0.1 * rng.normal();
    two.data(2, i) = (i % 400 == 200) ? -500.0 : 0.1 * rng.normal();
  }
  CHECK_THROWS_AS((void)physio::eeg_preprocess(two), Error);
}

TEST_CASE("raw kurtosis convention shifts the threshold by 3") {
  Rng rng(78);
  const Index n_samp = 4000;
  physio::EegChannels in;
  in.fs_hz = 250.0;
  in.data.resize(3, n_samp);
  in.ids = {"a", "b", "c"};
  for (int c = 0; c < 3; ++c)
    for (Index i = 0; i < n_samp; ++i) in.data(c, i) = 8.0 * rng.normal();
  // Mild spikes: excess kurtosis between 2 and 5, raw kurtosis above 5.
  for (Index i = 50; i < n_samp; i += 100) in.data(2, i) += 40.0;

  const auto excess = physio::eeg_preprocess(in, 5.0, physio::KurtosisConvention::excess);
  CHECK(excess.rejected_ids.empty());
  const auto raw = physio::eeg_preprocess(in, 5.0, physio::KurtosisConvention::raw);
  REQUIRE(raw.rejected_ids.size() == 1);
  CHECK(raw.rejected_ids[0] == "c");
}

TEST_CASE("epoching cuts, baseline-corrects, and rejects artifacts") {
  const double fs = 500.0;
  const Index n = static_cast<Index>(60.0 * fs);
  ArrayXd cz = ArrayXd::Zero(n);
  // Stimuli at 10, 20, 30, 40 s; give each epoch a distinct DC level so the
  // baseline correction is observable.
  const std::vector<double> stims{10.0, 20.0, 30.0, 40.0};
  for (std::size_t k = 0; k < stims.size(); ++k) {
    const Index lo = static_cast<Index>((stims[k] - 2.0) * fs);
    const Index hi = static_cast<Index>((stims[k] + 5.0) * fs);
    for (Index i = lo; i < hi; ++i) cz[i] += 3.0 * static_cast<double>(k + 1);
  }
  // A 60 uV artifact inside the second epoch.
  cz[static_cast<Index>(21.0 * fs)] += 60.0;

  const auto epochs = physio::epoch_and_reject(cz, fs, 0.0, stims);
  CHECK(epochs.data.rows() == 3);  // one rejected
  CHECK(epochs.n_rejected == 1);
  CHECK(epochs.data.cols() == 2500);

  // Baseline window mean is zero after correction.
  const Index base_lo = static_cast<Index>(0.5 * fs);
  const Index base_hi = static_cast<Index>(1.0 * fs);
  for (Index e = 0; e < epochs.data.rows(); ++e) {
    const double m = epochs.data.row(e).segment(base_lo, base_hi - base_lo).mean();
    CHECK(std::abs(m) < 1e-9);
  }

  // Stimuli too close to the edges are skipped, not rejected.
  const auto edge = physio::epoch_and_reject(cz, fs, 0.0, {0.5, 59.9});
  CHECK(edge.n_skipped == 2);

  // Idempotence: epochs whose baseline is already zero stay unchanged.
  ArrayXd flat = ArrayXd::Zero(n);
  const auto once = physio::epoch_and_reject(flat, fs, 0.0, stims);
  CHECK(once.data.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("cnv window means recover the injected ramp") {
  const double fs = 500.0;
  const Index n = static_cast<Index>(120.0 * fs);
  ArrayXd cz = ArrayXd::Zero(n);
  const std::vector<double> stims{20.0, 45.0, 70.0, 95.0};
  for (const double s : stims) {
    for (Index i = 0; i < n; ++i) {
      const double dt = static_cast<double>(i) / fs - s;
      if (dt >= 0.0 && dt <= 3.7) cz[i] += -10.0 * dt / 3.7;
    }
  }
  const auto epochs = physio::epoch_and_reject(cz, fs, 0.0, stims);
  REQUIRE(epochs.data.rows() == 4);
  const auto cnv = physio::cnv_mean_amplitudes(epochs);
  CHECK(cnv.early_uv == doctest::Approx(-10.0 * 0.9 / 3.7).epsilon(0.02));
  CHECK(cnv.mid_uv == doctest::Approx(-10.0 * 2.05 / 3.7).epsilon(0.02));
  CHECK(cnv.late_uv == doctest::Approx(-10.0 * 3.15 / 3.7).epsilon(0.02));

  // All-zero epochs give zero everywhere.
  ArrayXd zero = ArrayXd::Zero(n);
  const auto zero_epochs = physio::epoch_and_reject(zero, fs, 0.0, stims);
  const auto zero_cnv = physio::cnv_mean_amplitudes(zero_epochs);
  CHECK(zero_cnv.early_uv == 0.0);
  CHECK(zero_cnv.mid_uv == 0.0);
  CHECK(zero_cnv.late_uv == 0.0);

  physio::Epochs none;
  none.fs_hz = fs;
  none.data.resize(0, 2500);
  CHECK_THROWS_AS((void)physio::cnv_mean_amplitudes(none), Error);
}
