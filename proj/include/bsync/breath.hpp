#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "bsync/common.hpp"
#include "bsync/streams.hpp"

// Respiration analysis: prominence-gated peak detection, inter-respiration
// intervals, session-level z-scoring, per-block metrics, baseline rate, and
// the causal depth normalizer that drives the breath-following envelope.
namespace bsync::breath {

struct BreathPeaks {
  std::vector<double> peak_times;   // seconds, strictly increasing
  std::vector<double> peak_values;  // nu

  Index size() const { return static_cast<Index>(peak_times.size()); }
};

// A local maximum is kept when, walking from the peak toward the nearest
// strictly higher sample (or the signal edge) on each side, the signal drops
// by at least `min_prominence_nu` on both walks. Plateaus report their first
// sample.
BreathPeaks detect_breath_peaks(const Eigen::Ref<const ArrayXd>& times,
                                const Eigen::Ref<const ArrayXd>& values,
                                double min_prominence_nu = 2.0);
BreathPeaks detect_breath_peaks(const streams::SignalTrack& filtered,
                                double min_prominence_nu = 2.0);

struct IriSeries {
  ArrayXd intervals_ms;     // positive, one per consecutive peak pair
  ArrayXd interval_end_times_s;  // time of the closing peak

  Index size() const { return intervals_ms.size(); }
};

// Needs at least 2 peaks.
IriSeries compute_iri(const BreathPeaks& peaks);

// Session-level z-scores over the concatenation of all blocks' intervals,
// kept addressable per block.
struct SessionZIri {
  ArrayXd z;                       // concatenated z_IRI
  std::vector<Index> block_offsets;  // size = blocks + 1; block b is [off[b], off[b+1])

  Eigen::Ref<const ArrayXd> block(std::size_t b) const {
    return z.segment(block_offsets[b], block_offsets[b + 1] - block_offsets[b]);
  }
};

SessionZIri session_z_iri(const std::vector<IriSeries>& blocks);

struct BlockBreathMetrics {
  std::optional<double> mean_z_iri;  // empty when the block has no intervals
  std::optional<double> var_z_iri;
  Index n_intervals = 0;
};

std::vector<BlockBreathMetrics> block_breath_metrics(const SessionZIri& session);

// 60000 / mean(IRI ms) over the baseline block; needs >= 2 peaks upstream.
double baseline_rate_bpm(const IriSeries& baseline_iri);

// Causal per-sample breath depth in [0, 1]: position of the current value
// inside a trailing 30 s min/max window, 0.5 whenever the window range is
// below `min_range_nu`. One stream per instance.
class RealtimeDepth {
 public:
  explicit RealtimeDepth(double window_s = 30.0, double min_range_nu = 0.1);

  double push(double t, double v);
  double window_s() const { return window_s_; }

 private:
  struct TimedValue {
    double t, v;
  };
  double window_s_;
  double min_range_;
  std::deque<TimedValue> min_q_, max_q_;  // monotone queues over the window
  double last_t_ = -1.0;
};

}  // namespace bsync::breath
