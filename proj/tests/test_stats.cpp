#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "aaud/error.hpp"
#include "aaud/random.hpp"
#include "aaud/stats.hpp"

using namespace aaud;
using namespace aaud::stats;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an aaud::Error");
  return ErrorCode::io;
}

// Exact two-sided signed-rank p by listing all 2^n sign patterns over the
// average ranks of |d|.
double wilcoxon_brute(const std::vector<double>& diffs, double* w_plus) {
  std::vector<double> d;
  for (double x : diffs) {
    if (x != 0.0) d.push_back(x);
  }
  const std::size_t n = d.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = 0.5 * double(i + j) + 1.0;
    i = j + 1;
  }
  const double total = std::accumulate(rank.begin(), rank.end(), 0.0);
  double wp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) wp += rank[i];
  }
  *w_plus = wp;
  const double obs = std::abs(2 * wp - total);
  std::uint64_t count = 0;
  for (std::uint64_t m = 0; m < (std::uint64_t{1} << n); ++m) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (m >> i & 1) w += rank[i];
    }
    if (std::abs(2 * w - total) >= obs - 1e-9) ++count;
  }
  return double(count) / std::ldexp(1.0, int(n));
}

std::vector<std::pair<double, double>> as_pairs(const std::vector<double>& diffs) {
  std::vector<std::pair<double, double>> p;
  for (double x : diffs) p.emplace_back(x, 0.0);
  return p;
}

}  // namespace

TEST_CASE("exact Wilcoxon equals 2^n enumeration for every n <= 12") {
  Rng rng = make_rng(21);
  for (std::size_t n = 5; n <= 12; ++n) {
    for (int rep = 0; rep < 12; ++rep) {
      std::vector<double> diffs(n);
      for (double& x : diffs) {
        // Half the fixtures use a coarse grid so ties and zeros appear.
        x = rep % 2 ? std::round(uniform(-4, 4, rng)) : uniform(-1, 1.3, rng);
      }
      double wp = 0.0;
      const std::size_t nonzero = std::count_if(diffs.begin(), diffs.end(), [](double x) { return x != 0.0; });
      if (nonzero < 5) continue;
      const double p = wilcoxon_brute(diffs, &wp);
      const auto r = wilcoxon_signed_rank(as_pairs(diffs));
      CHECK(r.method == Method::wilcoxon_exact);
      CHECK(r.n == nonzero);
      CHECK(r.statistic == doctest::Approx(wp).epsilon(1e-12));
      CHECK(std::abs(r.p_value - p) < 1e-12);
    }
  }
}

TEST_CASE("Wilcoxon frozen values") {
  const std::vector<double> a = {1.83, 0.50, 1.62, 2.48, 1.68, 1.88, 1.55, 3.06, 1.30};
  const std::vector<double> b = {0.878, 0.647, 0.598, 2.05, 1.06, 1.29, 1.06, 3.14, 1.29};
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < a.size(); ++i) pairs.emplace_back(a[i], b[i]);
  const auto r = wilcoxon_signed_rank(pairs);
  CHECK(r.statistic == 40.0);
  CHECK(r.p_value == doctest::Approx(0.0390625).epsilon(1e-12));
  CHECK(*r.effect_size == doctest::Approx((40.0 - 5.0) / 45.0));

  // Tied magnitudes: the exact permutation p over average ranks.
  const auto tied = wilcoxon_signed_rank(as_pairs({1, 2, 2, 3, 3, -2, -2}));
  CHECK(tied.statistic == 21.0);
  CHECK(tied.p_value == doctest::Approx(0.28125).epsilon(1e-12));
}

TEST_CASE("Wilcoxon normal approximation above the exact limit") {
  const std::vector<double> z = {
      0.4257302210933933,  0.1678951367086981,   0.940422650443282,    0.4049001171530397,
      -0.23566937316111097, 0.6615950549094847,  1.6040000451301373,   1.247080963129242,
      -0.4037352358069926, -0.9654214710460525,  -0.3232744625373522,  0.34132597934724357,
      -2.0250307746388345, 0.08120833606745426,  -0.9459109472530651,  -0.4322673547034516,
      -0.2442589828573099, -0.01630015636915455, 0.7116305363741329,   1.3425133694426776,
      0.17146533705596573, 1.666463470549686,    -0.36519467348661355, 0.6515100700930196,
      1.2034701816518085,  0.39401229776087454,  -0.4434992493538084,  -0.6217253762584194,
      -0.15772582566733917, 0.5201951234700494};
  const std::vector<double> w = {
      -1.009618183538736,  -0.20917557487171307, -0.15922500991447772, 0.5408455846858077,
      0.2146591225063409,  0.3553727090399214,   -0.6538286094183394,  -0.12961363369276946,
      0.7839754700613295,  1.4934311452207607,   -1.2590655321041202,  1.5139237747390626,
      1.3458754237823045,  0.7813114007004275,   0.2644556303293035,   -0.3139228145364278,
      1.4580206835369587,  1.9602583164499647,   1.801634869866125,    1.31510376473437,
      0.357380410658956,   -1.2083186322821715,  -0.004454133120083229, 0.6564749350763358,
      -1.2883614637495544, 0.39512206018200824,  0.42986369482223,     0.6960427239628685,
      -1.184117966757189,  -0.6617025720390349};
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < z.size(); ++i) pairs.emplace_back(z[i], w[i]);
  const auto r = wilcoxon_signed_rank(pairs);
  CHECK(r.method == Method::wilcoxon_normal);
  CHECK(std::min(r.statistic, 465.0 - r.statistic) == 208.0);
  CHECK(r.p_value == doctest::Approx(0.6215603440690807).epsilon(1e-9));
}

TEST_CASE("one-sample t matches the direct formula and Boost") {
  Rng rng = make_rng(22);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 2 + rep % 40;
    std::vector<double> x(n);
    for (double& v : x) v = uniform(-1, 1.5, rng);
    const double mu0 = uniform(-0.2, 0.2, rng);
    double mean = std::accumulate(x.begin(), x.end(), 0.0) / double(n);
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / double(n - 1));
    const double t = (mean - mu0) / (sd / std::sqrt(double(n)));
    const boost::math::students_t dist(double(n - 1));
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    const auto r = one_sample_t(x, mu0);
    CHECK(std::abs(r.statistic - t) <= 1e-9 * std::max(1.0, std::abs(t)));
    CHECK(std::abs(r.p_value - p) <= 1e-9);
    CHECK(std::abs(*r.effect_size - (mean - mu0) / sd) <= 1e-9);
  }
  const auto f = one_sample_t(std::vector<double>{0.12, -0.4, 0.33, 0.05, 0.41, -0.08, 0.27, 0.19}, 0.0);
  CHECK(f.statistic == doctest::Approx(1.2139821899936043).epsilon(1e-12));
  CHECK(f.p_value == doctest::Approx(0.26411810286067977).epsilon(1e-10));
}

TEST_CASE("Pearson matches the direct formula and Boost") {
  Rng rng = make_rng(23);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 3 + rep % 30;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = uniform(-1, 1, rng);
      y[i] = 0.6 * x[i] + uniform(-1, 1, rng);
    }
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / double(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / double(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    const double rr = sxy / std::sqrt(sxx * syy);
    const double t = rr * std::sqrt(double(n - 2) / (1 - rr * rr));
    const boost::math::students_t dist(double(n - 2));
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    const auto r = pearson(x, y);
    CHECK(std::abs(r.statistic - rr) <= 1e-9);
    CHECK(std::abs(r.p_value - p) <= 1e-9);
  }
  const auto f = pearson(std::vector<double>{1, 2, 3, 4, 5, 6}, std::vector<double>{2, 1, 4, 3, 6, 5});
  CHECK(f.statistic == doctest::Approx(0.8285714285714283).epsilon(1e-12));
  CHECK(f.p_value == doctest::Approx(0.04156268221574357).epsilon(1e-9));
  const auto perfect = pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6});
  CHECK(perfect.p_value == 0.0);
}

TEST_CASE("binomial test matches a direct minlike sum") {
  for (std::uint64_t n : {1u, 5u, 10u, 20u, 40u, 101u}) {
    for (double p0 : {0.5, 0.3, 0.85}) {
      const boost::math::binomial dist(double(n), p0);
      for (std::uint64_t k = 0; k <= n; ++k) {
        const double obs = boost::math::pdf(dist, double(k));
        double p = 0.0;
        for (std::uint64_t j = 0; j <= n; ++j) {
          const double pj = boost::math::pdf(dist, double(j));
          if (pj <= obs * (1 + 1e-7)) p += pj;
        }
        p = std::min(1.0, p);
        const auto r = binomial_sign_test(k, n, p0);
        CHECK(std::abs(r.p_value - p) <= 1e-9);
      }
    }
  }
  CHECK(binomial_sign_test(8, 40, 0.5).p_value == doctest::Approx(0.0001821658297558315).epsilon(1e-9));
  CHECK(binomial_sign_test(7, 20, 0.3).p_value == doctest::Approx(0.6294979666766769).epsilon(1e-9));
  CHECK(binomial_sign_test(0, 10, 0.5).p_value == doctest::Approx(0.001953125).epsilon(1e-12));
}

TEST_CASE("distribution helpers match Boost") {
  for (double a : {0.5, 1.0, 2.5, 10.0}) {
    for (double b : {0.5, 3.0, 40.0}) {
      for (double x : {0.0, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0}) {
        CHECK(std::abs(incomplete_beta(a, b, x) - boost::math::ibeta(a, b, x)) <= 1e-12);
      }
    }
  }
  for (double z : {-5.0, -1.3, 0.0, 0.4, 2.2}) {
    CHECK(std::abs(normal_cdf(z) - boost::math::cdf(boost::math::normal(), z)) <= 1e-14);
    const boost::math::students_t dist(7.0);
    CHECK(std::abs(student_t_cdf(z, 7.0) - boost::math::cdf(dist, z)) <= 1e-12);
  }
}

TEST_CASE("degenerate inputs raise typed errors") {
  CHECK(code_of([] { one_sample_t(std::vector<double>{1.0}, 0.0); }) == ErrorCode::domain);
  CHECK(code_of([] { one_sample_t(std::vector<double>{2.0, 2.0, 2.0}, 0.0); }) == ErrorCode::degenerate);
  CHECK(code_of([] { wilcoxon_signed_rank(as_pairs({0, 0, 0, 0, 0, 0})); }) == ErrorCode::degenerate);
  CHECK(code_of([] { wilcoxon_signed_rank(as_pairs({1, 2, 3, 0})); }) == ErrorCode::domain);
  CHECK(code_of([] { pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}); }) == ErrorCode::shape);
  CHECK(code_of([] { pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}); }) == ErrorCode::domain);
  CHECK(code_of([] { pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}); }) == ErrorCode::degenerate);
  CHECK(code_of([] { binomial_sign_test(3, 2, 0.5); }) == ErrorCode::domain);
  CHECK(code_of([] { binomial_sign_test(0, 0, 0.5); }) == ErrorCode::domain);
  CHECK(code_of([] { binomial_sign_test(1, 2, 1.5); }) == ErrorCode::domain);
}

TEST_CASE("contract examples") {
  const auto t = one_sample_t(std::vector<double>{-1, -1, -1, -0.6}, 0.0);
  CHECK(t.statistic == doctest::Approx(-9.0).epsilon(1e-12));
  const boost::math::students_t dist(3.0);
  CHECK(t.p_value == doctest::Approx(2.0 * boost::math::cdf(dist, -9.0)).epsilon(1e-10));
  CHECK(*t.effect_size == doctest::Approx(-4.5).epsilon(1e-12));

  CHECK(wilcoxon_signed_rank(as_pairs({1, -1, 2, -2, 3, -3})).p_value == 1.0);

  std::vector<double> x = {1, 2, 3, 4, 5}, y(5), z(5);
  for (std::size_t i = 0; i < 5; ++i) {
    y[i] = 2 * x[i] + 1;
    z[i] = -x[i];
  }
  CHECK(pearson(x, y).statistic == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(x, z).statistic == doctest::Approx(-1.0).epsilon(1e-15));

  CHECK(binomial_sign_test(40, 80, 0.5).p_value >= 0.5);
  CHECK(binomial_sign_test(0, 80, 0.5).p_value == doctest::Approx(2.0 * std::pow(0.5, 80)).epsilon(1e-9));
  CHECK(binomial_sign_test(0, 80, 0.5).p_value == doctest::Approx(1.65e-24).epsilon(0.01));
  CHECK(binomial_sign_test(72, 80, 0.25).p_value < 1e-10);
}

TEST_CASE("invariances and p-value range under fuzzing") {
  Rng rng = make_rng(24);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 5 + rep % 30;
    std::vector<double> x(n), y(n), xs(n), ys(n);
    const double shift = uniform(-5, 5, rng), scale = uniform(0.1, 10, rng);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = uniform(-1, 1, rng);
      y[i] = x[i] * uniform(-1, 1, rng) + uniform(-1, 1, rng);
      xs[i] = x[i] + shift;
      ys[i] = scale * y[i] + shift;
    }
    const auto t = one_sample_t(x, 0.1);
    CHECK(one_sample_t(xs, 0.1 + shift).statistic == doctest::Approx(t.statistic).epsilon(1e-9));
    std::vector<double> scaled_x(n);
    for (std::size_t i = 0; i < n; ++i) scaled_x[i] = scale * x[i] + shift;
    CHECK(*one_sample_t(scaled_x, scale * 0.1 + shift).effect_size == doctest::Approx(*t.effect_size).epsilon(1e-9));
    const auto r = pearson(x, y);
    CHECK(std::abs(r.statistic) <= 1.0);
    CHECK(pearson(xs, ys).statistic == doctest::Approx(r.statistic).epsilon(1e-9));
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < n; ++i) pairs.emplace_back(x[i], y[i]);
    for (const auto& res : {t, r, wilcoxon_signed_rank(pairs), binomial_sign_test(rep % (n + 1), n, 0.3)}) {
      CHECK(res.p_value >= 0.0);
      CHECK(res.p_value <= 1.0);
    }
  }
}
