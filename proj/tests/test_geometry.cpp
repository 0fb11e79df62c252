#include "doctest.h"

#include <cmath>

#include "aaud/error.hpp"
#include "aaud/geometry.hpp"
#include "support.hpp"

using namespace aaud;
using namespace aaud::testing;

namespace {

// Modified Gram-Schmidt with one re-orthogonalisation pass; the projector it
// yields is compared against the Householder one.
std::vector<Vector> mgs_basis(const Matrix& cols, double tol) {
  std::vector<Vector> q;
  double largest = 0.0;
  for (std::size_t j = 0; j < cols.rows(); ++j) largest = std::max(largest, norm2(cols.row(j)));
  for (std::size_t j = 0; j < cols.rows(); ++j) {
    Vector v(cols.row(j).begin(), cols.row(j).end());
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : q) {
        const double c = dot2(b, v);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * b[i];
      }
    }
    const double n = norm2(v);
    if (n > tol * largest) {
      for (double& x : v) x /= n;
      q.push_back(std::move(v));
    }
  }
  return q;
}

Vector mgs_project(const std::vector<Vector>& q, std::span<const double> x) {
  Vector out(x.size(), 0.0);
  for (const auto& b : q) {
    const double c = dot2(b, x);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += c * b[i];
  }
  return out;
}

struct Fixture {
  EffectiveUnembedding unemb;
  Vector h;
  Vector delta;
};

Fixture frozen_fixture() {
  const std::size_t d = 6, v = 5;
  Matrix w(v, d);
  Vector gamma(d), bias(v), h(d), delta(d);
  for (std::size_t k = 0; k < v; ++k) {
    for (std::size_t i = 0; i < d; ++i) w(k, i) = std::sin(double((k + 1) * (i + 1)) * 0.9 + 0.3 * double(k));
    bias[k] = 0.1 * double(k) - 0.2;
  }
  for (std::size_t i = 0; i < d; ++i) {
    gamma[i] = 0.5 + 0.1 * double(i);
    h[i] = std::cos(double(i) * 1.3) + 0.2 * double(i);
    delta[i] = 0.1 * std::sin(2.0 * double(i) + 0.5);
  }
  return {build_effective_unembedding(w, gamma, bias), h, delta};
}

}  // namespace

TEST_CASE("frozen fixture: logits, epsilon and CIR") {
  const Fixture f = frozen_fixture();
  const ResidualState base(f.h);
  const Vector z = logits(base, f.unemb);
  const double want[] = {-2.1227312050400258, -1.4959772293115203, -0.8265219317848392,
                         -0.7527249099015687, -1.43490410430774};
  for (std::size_t k = 0; k < 5; ++k) CHECK(z[k] == doctest::Approx(want[k]).epsilon(1e-12));
  CHECK(pairwise_margin(base, f.unemb, 0, 2) == doctest::Approx(-1.2962092732551866).epsilon(1e-12));

  const std::vector<TokenId> answers = {0, 2, 3};
  const auto sub = build_answer_subspace(f.unemb, base, answers);
  CHECK(sub.effective_rank == 3);
  const auto dec = decompose(f.delta, base, sub);
  CHECK(dec.epsilon == doctest::Approx(0.06567130283659864).epsilon(1e-12));
  CHECK(dec.cir == doctest::Approx(0.8132205300242308).epsilon(1e-12));
  CHECK_FALSE(dec.degenerate);
}

TEST_CASE("Householder basis is orthonormal and spans the same space as Gram-Schmidt") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, 5);
    const std::size_t d = 3 + seed % 17;
    const std::size_t k = 1 + seed % std::min<std::size_t>(d, 6);
    Matrix cols(k, d);
    for (double& x : cols.data()) x = std::normal_distribution<double>()(rng);
    const auto qr = householder_basis(cols, 1e-10);
    REQUIRE(qr.vectors.rows() == k);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        CHECK(dot2(qr.vectors.row(a), qr.vectors.row(b)) ==
              doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
      }
    }
    const auto q = mgs_basis(cols, 1e-10);
    const Vector x = standard_normal(d, rng);
    Vector mine(d, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
      const double c = dot2(qr.vectors.row(a), x);
      for (std::size_t i = 0; i < d; ++i) mine[i] += c * qr.vectors(a, i);
    }
    const Vector ref = mgs_project(q, x);
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(mine[i] - ref[i]) < 1e-12 * (1 + norm2(x)));
    // Positive R diagonal: each basis vector has a positive component along its column.
    for (std::size_t a = 0; a < k; ++a) CHECK(dot2(qr.vectors.row(a), cols.row(qr.kept_columns[a])) > 0.0);
  }
}

TEST_CASE("dependent columns are skipped by the rank tolerance") {
  Matrix cols(3, 5, 0.0);
  cols(0, 0) = 1.0;
  cols(1, 0) = 2.0;  // parallel to the first
  cols(2, 1) = 1.0;
  const auto qr = householder_basis(cols, 1e-8);
  CHECK(qr.vectors.rows() == 2);
  CHECK(qr.kept_columns == std::vector<std::size_t>{0, 2});

  CHECK_THROWS_AS(householder_basis(Matrix(2, 4, 0.0), 1e-8), Error);
}

TEST_CASE("answer subspace is tangent to the base direction") {
  const auto unemb = random_unembedding(32, 20, 11);
  Rng rng = make_rng(12);
  const ResidualState base(standard_normal(32, rng));
  const auto sub = build_answer_subspace(unemb, base, first_tokens(4));
  CHECK(sub.effective_rank == 4);
  for (std::size_t q = 0; q < sub.basis.rows(); ++q) {
    CHECK(std::abs(dot2(sub.basis.row(q), base.unit_dir())) < 1e-13);
  }
  // Projecting a tangential answer row leaves it unchanged.
  const auto row = sub.tangential_row(2);
  const Vector p = sub.project(row);
  for (std::size_t i = 0; i < 32; ++i) CHECK(p[i] == doctest::Approx(row[i]).epsilon(1e-12).scale(1.0));
}

TEST_CASE("answer subspace rejects bad answer sets") {
  const auto unemb = random_unembedding(8, 6, 1);
  const ResidualState base(Vector(8, 1.0));
  const std::vector<TokenId> dup = {1, 1};
  const std::vector<TokenId> out_of_range = {1, 6};
  const std::vector<TokenId> none;
  auto code = [&](std::span<const TokenId> ids) {
    try {
      build_answer_subspace(unemb, base, ids);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io;
  };
  CHECK(code(dup) == ErrorCode::duplicate);
  CHECK(code(out_of_range) == ErrorCode::index);
  CHECK(code(none) == ErrorCode::domain);
}

TEST_CASE("residual states reject zero and non-finite vectors") {
  CHECK_THROWS_AS(ResidualState(Vector(4, 0.0)), Error);
  CHECK_THROWS_AS(ResidualState(Vector{1.0, NAN}), Error);
  CHECK_THROWS_AS(ResidualState(Vector{}), Error);
}

TEST_CASE("a radial perturbation is degenerate with CIR 0") {
  const auto unemb = random_unembedding(16, 8, 2);
  Rng rng = make_rng(3);
  const ResidualState base(standard_normal(16, rng));
  const auto sub = build_answer_subspace(unemb, base, first_tokens(3));
  const auto dec = decompose(scaled(base.h(), 0.3), base, sub);
  CHECK(dec.degenerate);
  CHECK(dec.cir == 0.0);
  CHECK(dec.epsilon == doctest::Approx(0.3));
}

TEST_CASE("decomposing against a subspace from another base is a consistency error") {
  const auto unemb = random_unembedding(16, 8, 2);
  Rng rng = make_rng(4);
  const ResidualState a(standard_normal(16, rng));
  const ResidualState b(standard_normal(16, rng));
  const auto sub = build_answer_subspace(unemb, a, first_tokens(3));
  try {
    decompose(Vector(16, 0.1), b, sub);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::consistency);
  }
}

TEST_CASE("random CIR baselines") {
  CHECK(expected_random_cir(4096, 4) == doctest::Approx(std::sqrt(4.0 / 4095.0)));
  CHECK(expected_random_cir(4096, 4) == doctest::Approx(0.031).epsilon(0.01));
  CHECK(exact_mean_random_cir(4096, 4) < expected_random_cir(4096, 4));
  CHECK(exact_mean_random_cir(3, 1) == doctest::Approx(2.0 / M_PI));  // |cos| on a circle
  CHECK(exact_mean_random_cir(8, 7) == 1.0);
  CHECK_THROWS_AS(expected_random_cir(4, 4), Error);
}

TEST_CASE("argmax breaks ties toward the lower index") {
  const Vector v = {1.0, 3.0, 3.0, 2.0};
  CHECK(argmax(v) == 1);
  const std::vector<TokenId> c = {3, 2, 0};
  CHECK(argmax_among(v, c) == 2);
}
