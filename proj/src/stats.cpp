#include "bsync/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bsync/dsp.hpp"

namespace bsync::stats {

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int max_iter = 300;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  constexpr double fpmin = std::numeric_limits<double>::min() / eps;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 10.0 * eps) return h;
  }
  fail(errc::domain, "incomplete beta did not converge");
}

double quantile_type7(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = (static_cast<double>(n) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, n - 1);
  const double frac = h - std::floor(h);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double betainc_reg(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) fail(errc::domain, "incomplete beta needs positive parameters");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double t_sf_two_sided(double t, double df) {
  if (df <= 0.0) fail(errc::domain, "t distribution needs positive df");
  if (!std::isfinite(t)) return 0.0;
  return betainc_reg(df / 2.0, 0.5, df / (df + t * t));
}

double f_sf(double f, double df1, double df2) {
  if (df1 <= 0.0 || df2 <= 0.0) fail(errc::domain, "F distribution needs positive df");
  if (!std::isfinite(f)) return 0.0;
  if (f <= 0.0) return 1.0;
  return betainc_reg(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f));
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

BoxStats box_stats(const Eigen::Ref<const ArrayXd>& x) {
  if (x.size() < 1) fail(errc::validation, "box stats need at least one value");
  std::vector<double> sorted(x.data(), x.data() + x.size());
  std::sort(sorted.begin(), sorted.end());

  BoxStats s;
  s.median = quantile_type7(sorted, 0.5);
  s.q1 = quantile_type7(sorted, 0.25);
  s.q3 = quantile_type7(sorted, 0.75);
  const double iqr = s.q3 - s.q1;
  const double fence_lo = s.q1 - 1.5 * iqr;
  const double fence_hi = s.q3 + 1.5 * iqr;

  s.whisker_lo = s.q1;
  s.whisker_hi = s.q3;
  bool any_inside = false;
  for (const double v : sorted) {
    if (v >= fence_lo && v <= fence_hi) {
      if (!any_inside) {
        s.whisker_lo = v;
        any_inside = true;
      }
      s.whisker_hi = v;
    } else {
      s.outliers.push_back(v);
    }
  }
  return s;
}

AnovaResult one_way_anova(const std::vector<ArrayXd>& groups) {
  if (groups.size() < 2) fail(errc::validation, "ANOVA needs at least 2 groups");
  Index total_n = 0;
  double grand_sum = 0.0;
  for (const auto& g : groups) {
    if (g.size() < 2) fail(errc::validation, "each ANOVA group needs at least 2 values");
    total_n += g.size();
    grand_sum += g.sum();
  }
  const double grand_mean = grand_sum / static_cast<double>(total_n);

  double ssb = 0.0, ssw = 0.0;
  for (const auto& g : groups) {
    const double m = g.mean();
    ssb += static_cast<double>(g.size()) * (m - grand_mean) * (m - grand_mean);
    ssw += (g - m).square().sum();
  }

  AnovaResult r;
  r.df_between = static_cast<int>(groups.size()) - 1;
  r.df_within = static_cast<int>(total_n) - static_cast<int>(groups.size());
  if (ssw <= 0.0) {
    if (ssb <= 0.0) fail(errc::degenerate_input, "ANOVA on identical constant groups");
    r.f_stat = std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    return r;
  }
  r.f_stat = (ssb / r.df_between) / (ssw / r.df_within);
  r.p_value = f_sf(r.f_stat, r.df_between, r.df_within);
  return r;
}

std::string to_string(PairwiseMethod m) {
  switch (m) {
    case PairwiseMethod::student_t: return "student_t";
    case PairwiseMethod::welch_t: return "welch_t";
    case PairwiseMethod::mann_whitney_u: return "mann_whitney_u";
  }
  fail(errc::domain, "bad pairwise method");
}

PairwiseResult independent_t(const Eigen::Ref<const ArrayXd>& a,
                             const Eigen::Ref<const ArrayXd>& b, TVariant variant) {
  const Index na = a.size(), nb = b.size();
  if (na < 2 || nb < 2) fail(errc::validation, "t test needs at least 2 values per sample");
  const double ma = a.mean(), mb = b.mean();
  const double va = (a - ma).square().sum() / static_cast<double>(na - 1);
  const double vb = (b - mb).square().sum() / static_cast<double>(nb - 1);

  PairwiseResult r;
  double se2, df;
  if (variant == TVariant::student) {
    r.method = PairwiseMethod::student_t;
    const double sp2 =
        ((na - 1) * va + (nb - 1) * vb) / static_cast<double>(na + nb - 2);
    se2 = sp2 * (1.0 / na + 1.0 / nb);
    df = static_cast<double>(na + nb - 2);
  } else {
    r.method = PairwiseMethod::welch_t;
    const double qa = va / na, qb = vb / nb;
    se2 = qa + qb;
    df = se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1));
  }
  if (se2 <= 0.0) {
    if (ma == mb) fail(errc::degenerate_input, "t test on identical constant samples");
    r.statistic = ma > mb ? std::numeric_limits<double>::infinity()
                          : -std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    r.df = df;
    return r;
  }
  r.statistic = (ma - mb) / std::sqrt(se2);
  r.df = df;
  r.p_value = t_sf_two_sided(r.statistic, df);
  return r;
}

PairwiseResult mann_whitney_u(const Eigen::Ref<const ArrayXd>& a,
                              const Eigen::Ref<const ArrayXd>& b) {
  const Index na = a.size(), nb = b.size();
  if (na < 1 || nb < 1) fail(errc::validation, "rank test needs at least 1 value per sample");

  struct Tagged {
    double v;
    bool from_a;
  };
  std::vector<Tagged> pooled;
  pooled.reserve(static_cast<std::size_t>(na + nb));
  for (Index i = 0; i < na; ++i) pooled.push_back({a[i], true});
  for (Index i = 0; i < nb; ++i) pooled.push_back({b[i], false});
  std::sort(pooled.begin(), pooled.end(),
            [](const Tagged& x, const Tagged& y) { return x.v < y.v; });

  // Midranks, plus the tie-term for the variance correction.
  const std::size_t n = pooled.size();
  double rank_sum_a = 0.0;
  double tie_term = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[j + 1].v == pooled[i].v) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    const double t = static_cast<double>(j - i + 1);
    if (t > 1.0) tie_term += t * t * t - t;
    for (std::size_t k = i; k <= j; ++k)
      if (pooled[k].from_a) rank_sum_a += midrank;
    i = j + 1;
  }

  const double u = rank_sum_a - static_cast<double>(na) * (na + 1.0) / 2.0;
  const double mu = static_cast<double>(na) * static_cast<double>(nb) / 2.0;
  const double n_tot = static_cast<double>(n);
  const double var = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                     ((n_tot + 1.0) - tie_term / (n_tot * (n_tot - 1.0)));

  PairwiseResult r;
  r.method = PairwiseMethod::mann_whitney_u;
  r.statistic = u;
  if (var <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double shift = std::max(0.0, std::abs(u - mu) - 0.5);  // continuity correction
  const double z = shift / std::sqrt(var);
  r.p_value = std::min(1.0, 2.0 * normal_sf(z));
  return r;
}

OutlierSplit z_outlier_filter(const Eigen::Ref<const ArrayXd>& values, double threshold) {
  if (values.size() < 2) fail(errc::validation, "outlier filter needs at least 2 values");
  OutlierSplit out;
  const double sd = dsp::stddev_pop(values);
  if (!(sd > 0.0)) {
    out.kept.assign(values.data(), values.data() + values.size());
    return out;
  }
  const double m = values.mean();
  for (Index i = 0; i < values.size(); ++i) {
    const double z = (values[i] - m) / sd;
    if (std::abs(z) > threshold)
      out.removed.push_back(values[i]);
    else
      out.kept.push_back(values[i]);
  }
  return out;
}

std::string significance_label(double p) {
  if (p <= 0.0001) return "****";
  if (p <= 0.001) return "***";
  if (p <= 0.01) return "**";
  if (p <= 0.05) return "*";
  if (p <= 0.1) return "ns";
  return "";
}

}  // namespace bsync::stats
