#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <utility>

namespace aaud::stats {

enum class Method { t_one_sample, wilcoxon_exact, wilcoxon_normal, pearson, binomial_sign };

std::string_view to_string(Method m) noexcept;

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::optional<double> effect_size;
  std::size_t n = 0;
  Method method = Method::t_one_sample;
};

/// Largest sample size for which the Wilcoxon p-value is enumerated exactly.
inline constexpr std::size_t kWilcoxonExactMax = 25;

/// Two-sided one-sample t-test; effect_size is Cohen's d.
TestResult one_sample_t(std::span<const double> values, double mu0);

/// Two-sided signed-rank test on first - second. Zero differences are
/// dropped, ties share average ranks, statistic is W+. effect_size is the
/// matched-pairs rank-biserial correlation.
TestResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs);

/// Product-moment r with a two-sided p from t = r sqrt((n-2)/(1-r^2)).
TestResult pearson(std::span<const double> x, std::span<const double> y);

/// Exact two-sided binomial test. The p-value sums every outcome no more
/// likely than the observed one. effect_size is successes/n - p0.
TestResult binomial_sign_test(std::uint64_t successes, std::uint64_t n, double p0);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1) standard deviation; 0 when n < 2
};

Summary describe(std::span<const double> values);

// Distribution functions, exposed for testing.

/// Regularised incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
/// P(|T| >= |t|) for T ~ t(df).
double student_t_two_sided(double t, double df);
double normal_cdf(double z);

}  // namespace aaud::stats
