#pragma once

#include <string>
#include <vector>

#include "bsync/common.hpp"

// Box-plot summaries, one-way ANOVA, post-hoc pairwise tests, and z-score
// outlier filtering. p-values come from an in-house regularized incomplete
// beta; no statistics library is assumed.
namespace bsync::stats {

struct BoxStats {
  double median = 0, q1 = 0, q3 = 0;
  double whisker_lo = 0, whisker_hi = 0;  // most extreme points inside the 1.5 IQR fences
  std::vector<double> outliers;
};

// Quartiles by linear interpolation between order statistics (type 7).
BoxStats box_stats(const Eigen::Ref<const ArrayXd>& x);

struct AnovaResult {
  double f_stat = 0.0;
  double p_value = 1.0;
  int df_between = 0;
  int df_within = 0;
};

AnovaResult one_way_anova(const std::vector<ArrayXd>& groups);

enum class PairwiseMethod { student_t, welch_t, mann_whitney_u };

std::string to_string(PairwiseMethod m);

struct PairwiseResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double df = 0.0;  // 0 for the rank test
  PairwiseMethod method = PairwiseMethod::student_t;
};

enum class TVariant { student, welch };

// Two-sided independent-samples t test (sample variances; Welch df by
// Welch-Satterthwaite).
PairwiseResult independent_t(const Eigen::Ref<const ArrayXd>& a,
                             const Eigen::Ref<const ArrayXd>& b,
                             TVariant variant = TVariant::student);

// U of the first sample, tie-corrected normal approximation with continuity
// correction, two-sided.
PairwiseResult mann_whitney_u(const Eigen::Ref<const ArrayXd>& a,
                              const Eigen::Ref<const ArrayXd>& b);

struct OutlierSplit {
  std::vector<double> kept;
  std::vector<double> removed;
};

// Single pass: removes values with |z| > threshold, z computed once over the
// full input. Zero variance removes nothing.
OutlierSplit z_outlier_filter(const Eigen::Ref<const ArrayXd>& values, double threshold = 3.0);

// Star legend used in the report: **** <= .0001 < *** <= .001 < ** <= .01
// < * <= .05 < ns <= .1, empty above .1.
std::string significance_label(double p);

// Special functions (exposed for verification against quadrature oracles).
double betainc_reg(double a, double b, double x);
double t_sf_two_sided(double t, double df);
double f_sf(double f, double df1, double df2);
double normal_sf(double z);

}  // namespace bsync::stats
