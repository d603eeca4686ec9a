#include "bsync/breath.hpp"

#include <algorithm>

#include "bsync/dsp.hpp"

namespace bsync::breath {

BreathPeaks detect_breath_peaks(const Eigen::Ref<const ArrayXd>& times,
                                const Eigen::Ref<const ArrayXd>& values,
                                double min_prominence_nu) {
  BreathPeaks peaks;
  const Index n = values.size();
  if (n != times.size()) fail(errc::validation, "times/values length mismatch");
  if (n < 3) return peaks;

  Index i = 1;
  while (i < n - 1) {
    if (values[i] <= values[i - 1]) {
      ++i;
      continue;
    }
    // Rising edge; absorb any plateau and require a fall after it.
    Index j = i;
    while (j + 1 < n && values[j + 1] == values[i]) ++j;
    if (j + 1 >= n || values[j + 1] > values[i]) {
      i = j + 1;
      continue;
    }
    const double peak = values[i];

    // Walk left to the nearest strictly higher sample or the edge.
    double drop_left = 0.0;
    {
      double lowest = peak;
      for (Index k = i - 1; k >= 0 && values[k] <= peak; --k) lowest = std::min(lowest, values[k]);
      drop_left = peak - lowest;
    }
    double drop_right = 0.0;
    {
      double lowest = peak;
      for (Index k = j + 1; k < n && values[k] <= peak; ++k) lowest = std::min(lowest, values[k]);
      drop_right = peak - lowest;
    }

    if (std::min(drop_left, drop_right) >= min_prominence_nu) {
      peaks.peak_times.push_back(times[i]);
      peaks.peak_values.push_back(peak);
    }
    i = j + 1;
  }
  return peaks;
}

BreathPeaks detect_breath_peaks(const streams::SignalTrack& filtered, double min_prominence_nu) {
  return detect_breath_peaks(filtered.times(), filtered.values(), min_prominence_nu);
}

IriSeries compute_iri(const BreathPeaks& peaks) {
  const Index n = peaks.size();
  if (n < 2) fail(errc::degenerate_input, "need at least 2 peaks to form intervals");
  IriSeries iri;
  iri.intervals_ms.resize(n - 1);
  iri.interval_end_times_s.resize(n - 1);
  for (Index i = 0; i + 1 < n; ++i) {
    iri.intervals_ms[i] = (peaks.peak_times[i + 1] - peaks.peak_times[i]) * 1000.0;
    iri.interval_end_times_s[i] = peaks.peak_times[i + 1];
  }
  return iri;
}

SessionZIri session_z_iri(const std::vector<IriSeries>& blocks) {
  SessionZIri out;
  Index total = 0;
  out.block_offsets.push_back(0);
  for (const auto& b : blocks) {
    total += b.size();
    out.block_offsets.push_back(total);
  }
  ArrayXd all(total);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    all.segment(out.block_offsets[b], blocks[b].size()) = blocks[b].intervals_ms;
  out.z = dsp::zscore(all);
  return out;
}

std::vector<BlockBreathMetrics> block_breath_metrics(const SessionZIri& session) {
  std::vector<BlockBreathMetrics> out;
  for (std::size_t b = 0; b + 1 < session.block_offsets.size(); ++b) {
    BlockBreathMetrics m;
    const auto z = session.block(b);
    m.n_intervals = z.size();
    if (z.size() > 0) {
      m.mean_z_iri = z.mean();
      m.var_z_iri = dsp::variance_pop(z);
    }
    out.push_back(m);
  }
  return out;
}

double baseline_rate_bpm(const IriSeries& baseline_iri) {
  if (baseline_iri.size() < 1)
    fail(errc::degenerate_input, "baseline rate needs at least one interval");
  return 60000.0 / baseline_iri.intervals_ms.mean();
}

RealtimeDepth::RealtimeDepth(double window_s, double min_range_nu)
    : window_s_(window_s), min_range_(min_range_nu) {
  if (!(window_s_ > 0.0)) fail(errc::validation, "depth window must be positive");
}

double RealtimeDepth::push(double t, double v) {
  if (t <= last_t_) fail(errc::validation, "depth normalizer requires increasing timestamps");
  last_t_ = t;

  while (!min_q_.empty() && min_q_.back().v >= v) min_q_.pop_back();
  min_q_.push_back({t, v});
  while (!max_q_.empty() && max_q_.back().v <= v) max_q_.pop_back();
  max_q_.push_back({t, v});

  const double horizon = t - window_s_;
  while (min_q_.front().t < horizon) min_q_.pop_front();
  while (max_q_.front().t < horizon) max_q_.pop_front();

  const double lo = min_q_.front().v;
  const double hi = max_q_.front().v;
  if (hi - lo < min_range_) return 0.5;
  return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

}  // namespace bsync::breath
