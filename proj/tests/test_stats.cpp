#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bsync/stats.hpp"
#include "support/oracles.hpp"

using namespace bsync;
using Eigen::ArrayXd;

namespace {

ArrayXd arr(std::initializer_list<double> values) {
  ArrayXd out(static_cast<Index>(values.size()));
  Index i = 0;
  for (const double v : values) out[i++] = v;
  return out;
}

}  // namespace

TEST_CASE("p-values match the quadrature oracle to 1e-9") {
  for (const double df : {1.0, 2.0, 4.0, 10.0, 30.0, 72.0}) {
    for (const double t : {0.1, 0.5, 1.0, 1.2247, 2.0, 3.5, 5.0}) {
      const double mine = stats::t_sf_two_sided(t, df);
      const double quad = oracles::t_sf_two_sided_quad(t, df);
      CHECK(std::abs(mine - quad) < 1e-9);
    }
  }
  struct FCase {
    double d1, d2;
  };
  for (const FCase c : {FCase{1, 5}, FCase{2, 6}, FCase{3, 72}, FCase{3, 68}, FCase{3, 61}}) {
    for (const double f : {0.1, 0.5, 1.0, 2.5, 3.18, 5.228, 9.0}) {
      const double mine = stats::f_sf(f, c.d1, c.d2);
      const double quad = oracles::f_sf_quad(f, c.d1, c.d2);
      CHECK(std::abs(mine - quad) < 1e-9);
    }
  }
}

TEST_CASE("published reference points reproduce") {
  // (stat, df) -> p pairs from the study domain, used as end-to-end checks
  // of the survival functions at realistic operating points.
  CHECK(stats::f_sf(5.228, 3.0, 72.0) == doctest::Approx(0.003).epsilon(0.15));
  CHECK(stats::f_sf(3.962, 3.0, 72.0) == doctest::Approx(0.011).epsilon(0.15));
  CHECK(stats::f_sf(3.158, 3.0, 68.0) == doctest::Approx(0.030).epsilon(0.1));
  CHECK(stats::f_sf(3.180, 3.0, 61.0) == doctest::Approx(0.031).epsilon(0.1));
  CHECK(stats::t_sf_two_sided(2.556, 36.0) == doctest::Approx(0.016).epsilon(0.1));
  CHECK(stats::t_sf_two_sided(2.104, 36.0) == doctest::Approx(0.043).epsilon(0.1));
}

TEST_CASE("one-way anova fixtures") {
  const auto r = stats::one_way_anova({arr({1, 2, 3}), arr({2, 3, 4}), arr({3, 4, 5})});
  CHECK(r.f_stat == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(r.df_between == 2);
  CHECK(r.df_within == 6);
  // Closed form for df (2, 6): sf(F) = (6 / (6 + 2F))^3 = 0.5^3.
  CHECK(r.p_value == doctest::Approx(0.125).epsilon(1e-9));

  const auto same = stats::one_way_anova({arr({1, 2, 3}), arr({1, 2, 3})});
  CHECK(same.f_stat == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(same.p_value == doctest::Approx(1.0).epsilon(1e-12));

  // 4 conditions x 19 participants reproduces df = (3, 72).
  Rng rng(2);
  std::vector<ArrayXd> groups;
  for (int g = 0; g < 4; ++g) {
    ArrayXd x(19);
    for (Index i = 0; i < 19; ++i) x[i] = rng.normal();
    groups.push_back(x);
  }
  const auto big = stats::one_way_anova(groups);
  CHECK(big.df_between == 3);
  CHECK(big.df_within == 72);

  CHECK_THROWS_AS((void)stats::one_way_anova({arr({1, 1}), arr({1, 1})}), Error);
  CHECK_THROWS_AS((void)stats::one_way_anova({arr({1, 2})}), Error);
  CHECK_THROWS_AS((void)stats::one_way_anova({arr({1, 2}), arr({3})}), Error);
}

TEST_CASE("anova invariances and the F = t^2 identity") {
  Rng rng(13);
  ArrayXd a(12), b(15);
  for (Index i = 0; i < a.size(); ++i) a[i] = rng.normal(1.0, 2.0);
  for (Index i = 0; i < b.size(); ++i) b[i] = rng.normal(1.5, 1.0);

  const auto base = stats::one_way_anova({a, b});
  const auto shifted = stats::one_way_anova({a + 11.0, b + 11.0});
  CHECK(base.f_stat == doctest::Approx(shifted.f_stat).epsilon(1e-9));
  CHECK(base.p_value == doctest::Approx(shifted.p_value).epsilon(1e-9));
  const auto scaled = stats::one_way_anova({3.0 * a, 3.0 * b});
  CHECK(base.f_stat == doctest::Approx(scaled.f_stat).epsilon(1e-9));

  const auto t = stats::independent_t(a, b, stats::TVariant::student);
  CHECK(base.f_stat == doctest::Approx(t.statistic * t.statistic).epsilon(1e-9));
  CHECK(base.p_value == doctest::Approx(t.p_value).epsilon(1e-9));
}

TEST_CASE("independent t fixtures") {
  const auto same = stats::independent_t(arr({1, 2, 3}), arr({1, 2, 3}));
  CHECK(same.statistic == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(same.p_value == doctest::Approx(1.0).epsilon(1e-12));

  const auto r = stats::independent_t(arr({1, 2, 3}), arr({2, 3, 4}));
  CHECK(r.statistic == doctest::Approx(-1.2247448).epsilon(1e-6));
  CHECK(r.df == 4.0);
  CHECK(r.p_value == doctest::Approx(0.2878641).epsilon(1e-6));

  // Scale invariance.
  const auto scaled = stats::independent_t(arr({10, 20, 30}), arr({20, 30, 40}));
  CHECK(scaled.statistic == doctest::Approx(r.statistic).epsilon(1e-12));
  CHECK(scaled.p_value == doctest::Approx(r.p_value).epsilon(1e-12));

  // Welch on balanced equal-variance samples agrees with student.
  const auto w = stats::independent_t(arr({1, 2, 3}), arr({2, 3, 4}), stats::TVariant::welch);
  CHECK(w.statistic == doctest::Approx(r.statistic).epsilon(1e-12));
  CHECK(w.df == doctest::Approx(4.0).epsilon(1e-12));

  CHECK_THROWS_AS((void)stats::independent_t(arr({1, 1}), arr({1, 1})), Error);
  CHECK_THROWS_AS((void)stats::independent_t(arr({1}), arr({1, 2})), Error);
}

TEST_CASE("mann-whitney u fixtures") {
  const auto hi = stats::mann_whitney_u(arr({10, 11, 12}), arr({1, 2, 3}));
  CHECK(hi.statistic == 9.0);

  const auto same = stats::mann_whitney_u(arr({1, 2, 3, 4}), arr({1, 2, 3, 4}));
  CHECK(same.statistic == doctest::Approx(8.0));  // n^2 / 2
  CHECK(same.p_value == doctest::Approx(1.0).epsilon(1e-9));

  // U stays within [0, n_a * n_b].
  Rng rng(44);
  ArrayXd a(19), b(19);
  for (Index i = 0; i < 19; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
  }
  const auto r = stats::mann_whitney_u(a, b);
  CHECK(r.statistic >= 0.0);
  CHECK(r.statistic <= 361.0);

  // Invariance under strictly monotone transforms of the pooled data.
  auto transform = [](const ArrayXd& x) { return (x * 0.37).exp() + 2.0; };
  const auto rt = stats::mann_whitney_u(transform(a), transform(b));
  CHECK(rt.statistic == doctest::Approx(r.statistic).epsilon(1e-12));
  CHECK(rt.p_value == doctest::Approx(r.p_value).epsilon(1e-12));
}

TEST_CASE("box stats fixtures") {
  ArrayXd nine(9);
  for (Index i = 0; i < 9; ++i) nine[i] = static_cast<double>(i + 1);
  const auto b = stats::box_stats(nine);
  CHECK(b.median == 5.0);
  CHECK(b.q1 == 3.0);
  CHECK(b.q3 == 7.0);
  CHECK(b.whisker_lo == 1.0);
  CHECK(b.whisker_hi == 9.0);
  CHECK(b.outliers.empty());

  const auto single = stats::box_stats(arr({4.2}));
  CHECK(single.median == 4.2);
  CHECK(single.q1 == 4.2);
  CHECK(single.q3 == 4.2);
  CHECK(single.whisker_lo == 4.2);
  CHECK(single.whisker_hi == 4.2);

  const auto spiked = stats::box_stats(arr({1, 2, 3, 4, 100}));
  REQUIRE(spiked.outliers.size() == 1);
  CHECK(spiked.outliers[0] == 100.0);
  CHECK(spiked.whisker_hi == 4.0);

  // Whiskers and outliers partition the sample.
  Rng rng(3);
  ArrayXd x(101);
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.normal() + (i % 17 == 0 ? 6.0 : 0.0);
  const auto bx = stats::box_stats(x);
  Index inside = 0;
  for (Index i = 0; i < x.size(); ++i)
    inside += (x[i] >= bx.whisker_lo && x[i] <= bx.whisker_hi) ? 1 : 0;
  CHECK(inside + static_cast<Index>(bx.outliers.size()) == x.size());
}

TEST_CASE("z outlier filter is a single pass over the input z-scores") {
  // [0,0,0,0,100]: the spike's z-score is exactly 2.0 (mean 20, population
  // sd 40), so nothing is removed at the |z| > 3 threshold.
  const ArrayXd tempting = arr({0, 0, 0, 0, 100});
  const double z_direct = (100.0 - tempting.mean()) /
                          std::sqrt((tempting - tempting.mean()).square().mean());
  CHECK(z_direct == doctest::Approx(2.0).epsilon(1e-12));
  const auto kept_all = stats::z_outlier_filter(tempting);
  CHECK(kept_all.removed.empty());
  CHECK(kept_all.kept.size() == 5);

  // A sparser spike does exceed the threshold.
  ArrayXd sparse = ArrayXd::Zero(31);
  sparse[30] = 100.0;
  const auto split = stats::z_outlier_filter(sparse);
  REQUIRE(split.removed.size() == 1);
  CHECK(split.removed[0] == 100.0);
  CHECK(split.kept.size() == 30);

  // All-equal values: nothing removed.
  const auto flat = stats::z_outlier_filter(ArrayXd::Constant(5, 2.0));
  CHECK(flat.removed.empty());

  // Symmetric data with no extreme point: nothing removed.
  ArrayXd sym(10);
  for (Index i = 0; i < 10; ++i) sym[i] = (i % 2 == 0) ? -1.0 : 1.0;
  CHECK(stats::z_outlier_filter(sym).removed.empty());
}

TEST_CASE("significance labels follow the figure legend") {
  CHECK(stats::significance_label(0.00005) == "****");
  CHECK(stats::significance_label(0.0005) == "***");
  CHECK(stats::significance_label(0.007) == "**");
  CHECK(stats::significance_label(0.038) == "*");
  CHECK(stats::significance_label(0.074) == "ns");
  CHECK(stats::significance_label(0.367) == "");
}
