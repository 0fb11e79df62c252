#include "aaud/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "aaud/error.hpp"
#include "aaud/kernels.hpp"

namespace aaud::stats {

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::t_one_sample: return "t_one_sample";
    case Method::wilcoxon_exact: return "wilcoxon_exact";
    case Method::wilcoxon_normal: return "wilcoxon_normal";
    case Method::pearson: return "pearson";
    case Method::binomial_sign: return "binomial_sign";
  }
  return "?";
}

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) fail(ErrorCode::data, std::string(what) + " contains a non-finite value");
  }
}

double clamp_p(double p) { return std::clamp(p, 0.0, 1.0); }

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 1000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) fail(ErrorCode::domain, "incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double df) {
  if (!(df > 0.0)) fail(ErrorCode::domain, "t distribution needs df > 0");
  if (std::isinf(t)) return 0.0;
  if (std::isnan(t)) fail(ErrorCode::data, "t statistic is NaN");
  return clamp_p(incomplete_beta(0.5 * df, 0.5, df / (df + t * t)));
}

double student_t_cdf(double t, double df) {
  const double tail = 0.5 * student_t_two_sided(t, df);
  return t >= 0.0 ? 1.0 - tail : tail;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

Summary describe(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  return s;
}

TestResult one_sample_t(std::span<const double> values, double mu0) {
  if (values.size() < 2) fail(ErrorCode::domain, "t-test needs at least two values");
  require_finite(values, "t-test sample");
  const Summary s = describe(values);
  if (!(s.stddev > 0.0)) fail(ErrorCode::degenerate, "t-test sample has zero variance");
  const double n = static_cast<double>(s.n);
  TestResult r;
  r.method = Method::t_one_sample;
  r.n = s.n;
  r.statistic = (s.mean - mu0) / (s.stddev / std::sqrt(n));
  r.p_value = student_t_two_sided(r.statistic, n - 1.0);
  r.effect_size = (s.mean - mu0) / s.stddev;
  return r;
}

TestResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs) {
  std::vector<double> diffs;
  diffs.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    if (!std::isfinite(a) || !std::isfinite(b)) {
      fail(ErrorCode::data, "signed-rank pairs contain a non-finite value");
    }
    const double d = a - b;
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) fail(ErrorCode::degenerate, "all signed-rank differences are zero");
  const std::size_t n = diffs.size();
  if (n < 5) {
    fail(ErrorCode::domain, "signed-rank test needs at least 5 nonzero differences, got " +
                                std::to_string(n));
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return std::abs(diffs[i]) < std::abs(diffs[j]);
  });

  // Doubled average ranks stay integral: ranks first..last average to
  // (first + last) / 2.
  std::vector<std::uint32_t> ranks2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const auto doubled = static_cast<std::uint32_t>((i + 1) + (j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks2[order[k]] = doubled;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  std::uint64_t total2 = 0;
  std::uint64_t plus2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += ranks2[i];
    if (diffs[i] > 0.0) plus2 += ranks2[i];
  }
  const double w_plus = static_cast<double>(plus2) / 2.0;
  const double w_total = static_cast<double>(total2) / 2.0;

  TestResult r;
  r.n = n;
  r.statistic = w_plus;
  r.effect_size = (2.0 * w_plus - w_total) / w_total;

  if (n <= kWilcoxonExactMax) {
    const std::uint64_t dev = plus2 * 2 >= total2 ? plus2 * 2 - total2 : total2 - plus2 * 2;
    const std::uint64_t count = kernels::count_extreme_sign_assignments(ranks2, dev);
    r.method = Method::wilcoxon_exact;
    r.p_value = clamp_p(std::ldexp(static_cast<double>(count), -static_cast<int>(n)));
    return r;
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / std::sqrt(var);
  r.method = Method::wilcoxon_normal;
  r.p_value = clamp_p(std::erfc(z / std::sqrt(2.0)));
  return r;
}

TestResult pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::shape, "pearson inputs differ in length");
  if (x.size() < 3) fail(ErrorCode::domain, "pearson needs at least three points");
  require_finite(x, "pearson x");
  require_finite(y, "pearson y");
  const Summary sx = describe(x);
  const Summary sy = describe(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - sx.mean;
    const double dy = y[i] - sy.mean;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) fail(ErrorCode::degenerate, "pearson input has zero variance");
  TestResult res;
  res.method = Method::pearson;
  res.n = x.size();
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  res.statistic = r;
  res.effect_size = r;
  const double df = static_cast<double>(x.size()) - 2.0;
  if (std::abs(r) == 1.0) {
    res.p_value = 0.0;
  } else {
    res.p_value = df > 0.0 ? student_t_two_sided(r * std::sqrt(df / (1.0 - r * r)), df) : 1.0;
  }
  return res;
}

TestResult binomial_sign_test(std::uint64_t successes, std::uint64_t n, double p0) {
  if (!(p0 > 0.0 && p0 < 1.0)) fail(ErrorCode::domain, "binomial p0 must lie in (0, 1)");
  if (n == 0 || successes > n) fail(ErrorCode::domain, "binomial test needs 0 <= k <= n, n >= 1");
  const double nn = static_cast<double>(n);
  const double lp = std::log(p0);
  const double lq = std::log1p(-p0);
  const double lgn = std::lgamma(nn + 1.0);
  auto log_pmf = [&](std::uint64_t k) {
    const double kk = static_cast<double>(k);
    return lgn - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0) + kk * lp + (nn - kk) * lq;
  };
  // Relative slack so outcomes tied with the observed one in exact arithmetic
  // are not lost to rounding.
  const double cutoff = log_pmf(successes) + std::log1p(1e-7);
  double p = 0.0;
  for (std::uint64_t k = 0; k <= n; ++k) {
    const double lk = log_pmf(k);
    if (lk <= cutoff) p += std::exp(lk);
  }
  TestResult r;
  r.method = Method::binomial_sign;
  r.n = n;
  r.statistic = static_cast<double>(successes);
  r.p_value = clamp_p(p);
  r.effect_size = static_cast<double>(successes) / nn - p0;
  return r;
}

}  // namespace aaud::stats
