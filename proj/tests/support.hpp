#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "aaud/geometry.hpp"
#include "aaud/random.hpp"

namespace aaud::testing {

inline EffectiveUnembedding random_unembedding(std::size_t d, std::size_t v, std::uint64_t seed) {
  Rng rng = make_rng(seed, 99);
  Matrix rows(v, d);
  for (double& x : rows.data()) x = std::normal_distribution<double>(0.0, 1.0)(rng) / std::sqrt(double(d));
  Vector gamma(d), bias(v);
  for (double& g : gamma) g = uniform(0.5, 1.5, rng);
  for (double& b : bias) b = uniform(-0.5, 0.5, rng);
  return build_effective_unembedding(rows, gamma, bias);
}

inline std::vector<TokenId> first_tokens(std::size_t k) {
  std::vector<TokenId> ids(k);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  return ids;
}

inline double norm2(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline double dot2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vector scaled(std::span<const double> x, double s) {
  Vector out(x.begin(), x.end());
  for (double& v : out) v *= s;
  return out;
}

inline Vector added(std::span<const double> a, std::span<const double> b) {
  Vector out(a.begin(), a.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

}  // namespace aaud::testing
