#include "bsync/dsp.hpp"

#include <algorithm>
#include <numbers>

#include <unsupported/Eigen/FFT>

namespace bsync::dsp {

namespace {

using cd = std::complex<double>;

constexpr double kPi = std::numbers::pi;

// Analog Butterworth prototype: `order` left-half-plane poles on the unit
// circle, no zeros, unit gain.
std::vector<cd> prototype_poles(int order) {
  std::vector<cd> p;
  p.reserve(order);
  for (int k = 1; k <= order; ++k) {
    const double theta = kPi * (2.0 * k - 1.0) / (2.0 * order);
    p.emplace_back(-std::sin(theta), std::cos(theta));
  }
  return p;
}

struct Zpk {
  std::vector<cd> z, p;
};

Zpk lp_to_lp(const Zpk& in, double wc) {
  Zpk out;
  for (const auto& z : in.z) out.z.push_back(z * wc);
  for (const auto& p : in.p) out.p.push_back(p * wc);
  return out;
}

Zpk lp_to_hp(const Zpk& in, double wc) {
  Zpk out;
  for (const auto& z : in.z) out.z.push_back(wc / z);
  for (const auto& p : in.p) out.p.push_back(wc / p);
  const std::size_t degree = in.p.size() - in.z.size();
  for (std::size_t i = 0; i < degree; ++i) out.z.emplace_back(0.0);
  return out;
}

Zpk lp_to_bp(const Zpk& in, double w0, double bw) {
  Zpk out;
  auto split = [&](const cd& s) {
    const cd half = s * (bw / 2.0);
    const cd d = std::sqrt(half * half - w0 * w0);
    return std::pair<cd, cd>{half + d, half - d};
  };
  for (const auto& z : in.z) {
    auto [a, b] = split(z);
    out.z.push_back(a);
    out.z.push_back(b);
  }
  for (const auto& p : in.p) {
    auto [a, b] = split(p);
    out.p.push_back(a);
    out.p.push_back(b);
  }
  const std::size_t degree = in.p.size() - in.z.size();
  for (std::size_t i = 0; i < degree; ++i) out.z.emplace_back(0.0);
  return out;
}

Zpk bilinear(const Zpk& in, double fs) {
  const double fs2 = 2.0 * fs;
  Zpk out;
  for (const auto& z : in.z) out.z.push_back((fs2 + z) / (fs2 - z));
  for (const auto& p : in.p) out.p.push_back((fs2 + p) / (fs2 - p));
  // Analog zeros at infinity land at z = -1.
  const std::size_t degree = in.p.size() - in.z.size();
  for (std::size_t i = 0; i < degree; ++i) out.z.emplace_back(-1.0);
  return out;
}

// Groups digital poles into conjugate-pair / real-pair sections and assigns
// zeros. The designs produced here only ever have zeros at z = +1 and
// z = -1, which makes the assignment trivial.
std::vector<Biquad> group_sections(const Zpk& zpk) {
  constexpr double tol = 1e-9;

  std::vector<cd> upper;
  std::vector<double> reals;
  for (const auto& p : zpk.p) {
    if (p.imag() > tol) {
      upper.push_back(p);
    } else if (p.imag() >= -tol) {
      reals.push_back(p.real());
    }  // lower conjugates are implied by their upper partners
  }
  std::sort(upper.begin(), upper.end(),
            [](const cd& a, const cd& b) { return std::abs(a) > std::abs(b); });
  std::sort(reals.begin(), reals.end());

  int zeros_pos = 0, zeros_neg = 0;
  for (const auto& z : zpk.z) {
    if (std::abs(z - cd(1.0)) < 1e-6) {
      ++zeros_pos;
    } else if (std::abs(z + cd(1.0)) < 1e-6) {
      ++zeros_neg;
    } else {
      fail(errc::design, "unexpected zero location in Butterworth design");
    }
  }
  auto take_zeros = [&](int want) {
    // Prefer one of each sign per section so bandpass sections each keep a
    // DC null and a Nyquist null.
    std::pair<double, double> zz{0.0, 0.0};
    double* slot[2] = {&zz.first, &zz.second};
    for (int i = 0; i < want; ++i) {
      if (zeros_pos > 0 && (i == 0 || zeros_neg == 0)) {
        *slot[i] = 1.0;
        --zeros_pos;
      } else if (zeros_neg > 0) {
        *slot[i] = -1.0;
        --zeros_neg;
      } else {
        fail(errc::design, "zero bookkeeping mismatch");
      }
    }
    return zz;
  };

  std::vector<Biquad> sections;
  for (const auto& p : upper) {
    auto [z1, z2] = take_zeros(2);
    Biquad s;
    s.b0 = 1.0;
    s.b1 = -(z1 + z2);
    s.b2 = z1 * z2;
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    sections.push_back(s);
  }
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    auto [z1, z2] = take_zeros(2);
    Biquad s;
    s.b0 = 1.0;
    s.b1 = -(z1 + z2);
    s.b2 = z1 * z2;
    s.a1 = -(reals[i] + reals[i + 1]);
    s.a2 = reals[i] * reals[i + 1];
    sections.push_back(s);
  }
  if (reals.size() % 2 == 1) {
    auto [z1, z2] = take_zeros(1);
    (void)z2;
    Biquad s;
    s.b0 = 1.0;
    s.b1 = -z1;
    s.b2 = 0.0;
    s.a1 = -reals.back();
    s.a2 = 0.0;
    sections.push_back(s);
  }
  if (zeros_pos != 0 || zeros_neg != 0) fail(errc::design, "unassigned zeros in design");
  return sections;
}

double warp(double f_hz, double fs_hz) { return 2.0 * fs_hz * std::tan(kPi * f_hz / fs_hz); }

// Steady-state DF2T internal state for a constant input level. Starting each
// pass in DC equilibrium keeps constants exactly constant through the
// zero-phase path.
struct SectionState {
  double s1 = 0, s2 = 0;
};

std::vector<SectionState> steady_state(const BiquadCascade& f, double level) {
  std::vector<SectionState> st(f.sections.size());
  double in = level;
  for (std::size_t k = 0; k < f.sections.size(); ++k) {
    const Biquad& s = f.sections[k];
    const double g = s.dc_gain();
    st[k].s1 = in * (g - s.b0);
    st[k].s2 = in * (s.b2 - s.a2 * g);
    in *= g;
  }
  return st;
}

void run_cascade(const BiquadCascade& f, std::vector<SectionState>& st, ArrayXd& x) {
  for (std::size_t k = 0; k < f.sections.size(); ++k) {
    const Biquad& s = f.sections[k];
    double s1 = st[k].s1, s2 = st[k].s2;
    for (Index i = 0; i < x.size(); ++i) {
      const double in = x[i];
      const double y = s.b0 * in + s1;
      s1 = s.b1 * in - s.a1 * y + s2;
      s2 = s.b2 * in - s.a2 * y;
      x[i] = y;
    }
    st[k].s1 = s1;
    st[k].s2 = s2;
  }
  x *= f.overall_gain;
}

}  // namespace

FilterSpec FilterSpec::lowpass(int order, double cutoff_hz, double fs_hz) {
  return {FilterKind::lowpass, order, cutoff_hz, 0.0, fs_hz};
}

FilterSpec FilterSpec::highpass(int order, double cutoff_hz, double fs_hz) {
  return {FilterKind::highpass, order, cutoff_hz, 0.0, fs_hz};
}

FilterSpec FilterSpec::bandpass(int order, double lo_hz, double hi_hz, double fs_hz) {
  return {FilterKind::bandpass, order, lo_hz, hi_hz, fs_hz};
}

void FilterSpec::validate() const {
  if (order < 1) fail(errc::design, "filter order must be >= 1");
  if (!(fs_hz > 0.0)) fail(errc::design, "sampling rate must be positive");
  const double nyquist = fs_hz / 2.0;
  if (!(cutoff_lo_hz > 0.0) || cutoff_lo_hz >= nyquist)
    fail(errc::design, "cutoff must lie strictly inside (0, fs/2)");
  if (kind == FilterKind::bandpass) {
    if (!(cutoff_hi_hz > 0.0) || cutoff_hi_hz >= nyquist)
      fail(errc::design, "upper cutoff must lie strictly inside (0, fs/2)");
    if (!(cutoff_lo_hz < cutoff_hi_hz))
      fail(errc::design, "bandpass requires low cutoff < high cutoff");
  }
}

bool Biquad::stable() const {
  // Stability triangle for z^2 + a1 z + a2.
  return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2;
}

double Biquad::dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }

bool BiquadCascade::stable() const {
  return std::all_of(sections.begin(), sections.end(),
                     [](const Biquad& s) { return s.stable(); });
}

std::complex<double> BiquadCascade::response(double freq_hz) const {
  const double w = 2.0 * kPi * freq_hz / fs_hz;
  const cd e1 = std::polar(1.0, -w);
  const cd e2 = e1 * e1;
  cd h = overall_gain;
  for (const Biquad& s : sections)
    h *= (s.b0 + s.b1 * e1 + s.b2 * e2) / (1.0 + s.a1 * e1 + s.a2 * e2);
  return h;
}

double BiquadCascade::magnitude_db(double freq_hz) const {
  return 20.0 * std::log10(std::abs(response(freq_hz)));
}

BiquadCascade design_butterworth(const FilterSpec& spec) {
  spec.validate();

  Zpk proto;
  proto.p = prototype_poles(spec.order);

  Zpk analog;
  double ref_hz = 0.0;  // passband frequency used to pin unity gain
  switch (spec.kind) {
    case FilterKind::lowpass:
      analog = lp_to_lp(proto, warp(spec.cutoff_lo_hz, spec.fs_hz));
      ref_hz = 0.0;
      break;
    case FilterKind::highpass:
      analog = lp_to_hp(proto, warp(spec.cutoff_lo_hz, spec.fs_hz));
      ref_hz = spec.fs_hz / 2.0;
      break;
    case FilterKind::bandpass: {
      const double w1 = warp(spec.cutoff_lo_hz, spec.fs_hz);
      const double w2 = warp(spec.cutoff_hi_hz, spec.fs_hz);
      const double w0 = std::sqrt(w1 * w2);
      analog = lp_to_bp(proto, w0, w2 - w1);
      ref_hz = spec.fs_hz / kPi * std::atan(w0 / (2.0 * spec.fs_hz));
      break;
    }
  }

  BiquadCascade f;
  f.fs_hz = spec.fs_hz;
  f.sections = group_sections(bilinear(analog, spec.fs_hz));
  f.overall_gain = 1.0;
  const double mag = std::abs(f.response(ref_hz));
  if (!(mag > 0.0)) fail(errc::design, "degenerate passband gain");
  f.overall_gain = 1.0 / mag;

  if (!f.stable()) fail(errc::design, "designed filter is not stable");
  return f;
}

ArrayXd filter_causal(const Eigen::Ref<const ArrayXd>& x, const BiquadCascade& f) {
  ArrayXd y = x;
  if (y.size() == 0) return y;
  std::vector<SectionState> st(f.sections.size());
  run_cascade(f, st, y);
  return y;
}

ArrayXd filter_zero_phase(const Eigen::Ref<const ArrayXd>& x, const BiquadCascade& f) {
  const Index n = x.size();
  if (n == 0) return {};
  if (n == 1) {
    ArrayXd y = x;
    double g2 = f.overall_gain * f.overall_gain;
    for (const Biquad& s : f.sections) g2 *= s.dc_gain() * s.dc_gain();
    return y * g2;
  }

  const Index pad = std::min<Index>(3 * (2 * Index(f.sections.size()) + 1), n - 1);
  ArrayXd ext(n + 2 * pad);
  for (Index i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  ext.segment(pad, n) = x;
  for (Index i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  auto zi = steady_state(f, ext[0]);
  run_cascade(f, zi, ext);

  ext.reverseInPlace();
  zi = steady_state(f, ext[0]);
  run_cascade(f, zi, ext);
  ext.reverseInPlace();

  return ext.segment(pad, n);
}

double mean(const Eigen::Ref<const ArrayXd>& x) {
  if (x.size() == 0) fail(errc::validation, "mean of empty series");
  return x.mean();
}

double variance_pop(const Eigen::Ref<const ArrayXd>& x) {
  if (x.size() == 0) fail(errc::validation, "variance of empty series");
  const double m = x.mean();
  return (x - m).square().mean();
}

double stddev_pop(const Eigen::Ref<const ArrayXd>& x) { return std::sqrt(variance_pop(x)); }

ArrayXd zscore(const Eigen::Ref<const ArrayXd>& x) {
  if (x.size() < 2) fail(errc::validation, "zscore needs at least 2 samples");
  const double m = x.mean();
  const double sd = stddev_pop(x);
  // Relative threshold: a constant series that went through filtering may
  // carry rounding-level variance.
  if (!(sd > 1e-12 * (1.0 + std::abs(m)))) fail(errc::degenerate_input, "zscore of constant series");
  return (x - m) / sd;
}

ArrayXd diff_slope(const Eigen::Ref<const ArrayXd>& z, double fs_hz) {
  const Index n = z.size();
  if (n < 2) fail(errc::validation, "diff_slope needs at least 2 samples");
  return fs_hz * (z.tail(n - 1) - z.head(n - 1));
}

double kurtosis_excess(const Eigen::Ref<const ArrayXd>& x) {
  if (x.size() < 4) fail(errc::validation, "kurtosis needs at least 4 samples");
  const double m = x.mean();
  const ArrayXd d = x - m;
  const double m2 = d.square().mean();
  if (!(m2 > 0.0)) fail(errc::degenerate_input, "kurtosis of constant series");
  const double m4 = d.square().square().mean();
  return m4 / (m2 * m2) - 3.0;
}

Psd welch_psd(const Eigen::Ref<const ArrayXd>& x, double fs_hz, Index segment_len,
              Index overlap) {
  const Index n = x.size();
  if (segment_len < 2) fail(errc::validation, "welch segment length must be >= 2");
  if (segment_len > n) fail(errc::validation, "welch segment longer than series");
  if (overlap < 0) overlap = segment_len / 2;
  if (overlap >= segment_len)
    fail(errc::validation, "welch overlap must lie in [0, segment_len)");
  if (!(fs_hz > 0.0)) fail(errc::validation, "welch needs positive sampling rate");

  const Index l = segment_len;
  ArrayXd window(l);
  for (Index i = 0; i < l; ++i)
    window[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(l)));
  const double win_power = window.square().sum();

  const Index n_bins = l / 2 + 1;
  ArrayXd acc = ArrayXd::Zero(n_bins);
  const Index step = l - overlap;

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in(static_cast<std::size_t>(l));
  std::vector<std::complex<double>> out(static_cast<std::size_t>(l));

  Index n_segments = 0;
  for (Index start = 0; start + l <= n; start += step) {
    const ArrayXd seg = x.segment(start, l);
    const double seg_mean = seg.mean();
    for (Index i = 0; i < l; ++i) in[static_cast<std::size_t>(i)] = (seg[i] - seg_mean) * window[i];
    fft.fwd(out, in);
    for (Index k = 0; k < n_bins; ++k) acc[k] += std::norm(out[static_cast<std::size_t>(k)]);
    ++n_segments;
  }
  acc /= static_cast<double>(n_segments);

  Psd psd;
  psd.df_hz = fs_hz / static_cast<double>(l);
  psd.freqs_hz = ArrayXd::LinSpaced(n_bins, 0.0, static_cast<double>(n_bins - 1)) * psd.df_hz;
  psd.density = acc / (fs_hz * win_power);
  // One-sided scaling: interior bins carry the mirrored half.
  for (Index k = 1; k < n_bins; ++k) {
    const bool nyquist = (l % 2 == 0) && (k == n_bins - 1);
    if (!nyquist) psd.density[k] *= 2.0;
  }
  return psd;
}

double band_power(const Psd& psd, double lo_hz, double hi_hz) {
  double total = 0.0;
  for (Index k = 0; k < psd.freqs_hz.size(); ++k) {
    if (psd.freqs_hz[k] >= lo_hz && psd.freqs_hz[k] < hi_hz) total += psd.density[k];
  }
  return total * psd.df_hz;
}

}  // namespace bsync::dsp
