#pragma once

#include <complex>
#include <vector>

#include "bsync/common.hpp"

// Shared numerical kernels: Butterworth design and application, z-scoring,
// first differences, excess kurtosis, and Welch spectral estimation. All
// series are Eigen arrays; functions are pure and safe to call in parallel.
namespace bsync::dsp {

enum class FilterKind { lowpass, highpass, bandpass };

// `order` is the analog prototype order; a bandpass design therefore has
// 2*order poles after the band transform.
struct FilterSpec {
  FilterKind kind = FilterKind::lowpass;
  int order = 2;
  double cutoff_lo_hz = 1.0;  // the single cutoff for lowpass/highpass
  double cutoff_hi_hz = 0.0;  // upper edge, bandpass only
  double fs_hz = 1.0;

  static FilterSpec lowpass(int order, double cutoff_hz, double fs_hz);
  static FilterSpec highpass(int order, double cutoff_hz, double fs_hz);
  static FilterSpec bandpass(int order, double lo_hz, double hi_hz, double fs_hz);

  void validate() const;  // throws errc::design on bad cutoffs
};

// One second-order section, a0 normalized to 1:
//   y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
  bool stable() const;       // both poles strictly inside the unit circle
  double dc_gain() const;    // response at z = 1
};

struct BiquadCascade {
  std::vector<Biquad> sections;
  double overall_gain = 1.0;
  double fs_hz = 0.0;

  bool stable() const;
  std::complex<double> response(double freq_hz) const;
  double magnitude_db(double freq_hz) const;
};

BiquadCascade design_butterworth(const FilterSpec& spec);

// Single forward pass (real-time path). Empty input gives empty output.
ArrayXd filter_causal(const Eigen::Ref<const ArrayXd>& x, const BiquadCascade& f);

// Forward-backward pass with odd-reflection padding and steady-state initial
// conditions (offline path; effective magnitude response is |H|^2, phase 0).
ArrayXd filter_zero_phase(const Eigen::Ref<const ArrayXd>& x, const BiquadCascade& f);

double mean(const Eigen::Ref<const ArrayXd>& x);
double variance_pop(const Eigen::Ref<const ArrayXd>& x);
double stddev_pop(const Eigen::Ref<const ArrayXd>& x);

// (x - mean) / population stddev. Throws degenerate_input on constant input,
// validation if fewer than 2 samples.
ArrayXd zscore(const Eigen::Ref<const ArrayXd>& x);

// Element i = fs * (z[i+1] - z[i]); length n-1.
ArrayXd diff_slope(const Eigen::Ref<const ArrayXd>& z, double fs_hz);

// Population excess kurtosis m4/m2^2 - 3. Needs >= 4 samples and nonzero
// variance.
double kurtosis_excess(const Eigen::Ref<const ArrayXd>& x);

// One-sided power spectral density (Hann window, per-segment mean removal,
// density scaling: sum(density)*df ~ variance).
struct Psd {
  ArrayXd freqs_hz;
  ArrayXd density;
  double df_hz = 0.0;
};

// overlap < 0 selects the default 50%.
Psd welch_psd(const Eigen::Ref<const ArrayXd>& x, double fs_hz, Index segment_len,
              Index overlap = -1);

// Integrated PSD over [lo_hz, hi_hz).
double band_power(const Psd& psd, double lo_hz, double hi_hz);

}  // namespace bsync::dsp
