#pragma once

// Decision geometry of an RMSNorm readout on the unit hypersphere.
//
// With the normalisation gain folded into the unembedding rows, the logit of
// token k depends on the residual vector h only through its direction:
//
//     z_k = sqrt(d) * wbar_k . u + b_k,     u = h / |h|
//
// A context perturbation delta of a base state h0 moves u (to first order)
// only through its tangential part P delta, P = I - u0 u0^T. Inside the
// tangent space the answer subspace A = span{P wbar_k : k answer} carries
// every answer-logit change; the orthogonal remainder is inert.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "aaud/matrix.hpp"
#include "aaud/random.hpp"

namespace aaud {

using TokenId = std::size_t;

inline constexpr double kDefaultRankTol = 1e-8;

/// Perturbations with |delta| / r0 above this are flagged: the first-order
/// expansion is applied regardless, but reports mark the instance.
inline constexpr double kHighEpsilon = 0.5;

struct EffectiveUnembedding {
  Matrix rows;    // V x d, row k = w_k (elementwise) gamma
  Vector biases;  // V

  std::size_t hidden_dim() const noexcept { return rows.cols(); }
  std::size_t vocab_size() const noexcept { return rows.rows(); }
};

EffectiveUnembedding build_effective_unembedding(const Matrix& raw_rows,
                                                 std::span<const double> gamma,
                                                 std::span<const double> biases);

/// A residual-stream vector together with its norm and direction.
class ResidualState {
 public:
  /// Rejects non-finite entries and the zero vector.
  explicit ResidualState(Vector h);

  const Vector& h() const noexcept { return h_; }
  double norm() const noexcept { return r0_; }
  const Vector& unit_dir() const noexcept { return u_; }
  std::size_t dim() const noexcept { return h_.size(); }

 private:
  Vector h_;
  double r0_ = 0.0;
  Vector u_;
};

Vector logits(const ResidualState& state, const EffectiveUnembedding& unemb);

/// sqrt(d) * wbar . v + b for an arbitrary direction vector v, without
/// renormalising v. Used to read out first-order directions.
Vector logits_at_direction(std::span<const double> direction, const EffectiveUnembedding& unemb);

double pairwise_margin(const ResidualState& state, const EffectiveUnembedding& unemb,
                       TokenId token_i, TokenId token_j);
double pairwise_margin_at_direction(std::span<const double> direction,
                                    const EffectiveUnembedding& unemb, TokenId token_i,
                                    TokenId token_j);

/// Index of the largest value; ties go to the lowest index.
TokenId argmax(std::span<const double> values);

/// Candidate with the largest value; ties go to the lowest token id.
TokenId argmax_among(std::span<const double> values, std::span<const TokenId> candidates);

/// (I - u0 u0^T) delta
Vector tangent_project(std::span<const double> delta, const ResidualState& base);

/// u0 + P delta / r0
Vector first_order_direction(const ResidualState& base, std::span<const double> delta);

/// Standard-normal draw projected into the tangent space at `base` and
/// normalised.
Vector random_tangent_unit(const ResidualState& base, Rng& rng);

/// Orthonormal basis of the span of a set of vectors, computed by Householder
/// QR in the given column order. A column whose residual norm falls below
/// rank_tol * (largest input norm) is treated as dependent and skipped. Basis
/// signs are fixed so every kept diagonal entry of R is nonnegative.
struct OrthonormalBasis {
  Matrix vectors;                        // k' x d, one basis vector per row
  std::vector<double> diagonal;          // |R_jj| for each kept column
  std::vector<std::size_t> kept_columns; // input index behind each basis vector
};

OrthonormalBasis householder_basis(const Matrix& columns, double rank_tol);

struct AnswerSubspace {
  std::vector<TokenId> answer_token_ids;
  Matrix tangential_rows;  // K x d, P wbar_k in answer order
  Matrix basis;            // K' x d, orthonormal rows (the columns of Q)
  std::size_t effective_rank = 0;
  Vector base_direction;
  double rank_tol = kDefaultRankTol;

  std::size_t hidden_dim() const noexcept { return base_direction.size(); }
  std::size_t answer_count() const noexcept { return answer_token_ids.size(); }

  /// Position of `token` in answer_token_ids, if present.
  std::optional<std::size_t> position(TokenId token) const noexcept;
  std::span<const double> tangential_row(TokenId token) const;

  /// Pi_A x
  Vector project(std::span<const double> x) const;
};

AnswerSubspace build_answer_subspace(const EffectiveUnembedding& unemb, const ResidualState& base,
                                     std::span<const TokenId> answer_token_ids,
                                     double rank_tol = kDefaultRankTol);

struct PerturbationDecomposition {
  Vector raw;          // delta
  Vector tangential;   // P delta
  Vector predictive;   // Pi_A P delta
  Vector nullspace;    // P delta - Pi_A P delta
  double epsilon = 0.0;
  double cir = 0.0;
  bool degenerate = false;  // tangential part vanished; cir reported as 0
};

PerturbationDecomposition decompose(std::span<const double> delta, const ResidualState& base,
                                    const AnswerSubspace& subspace);

/// sqrt(K' / (d - 1)): the root of E[CIR^2] for a uniformly random tangential
/// perturbation.
double expected_random_cir(std::size_t d, std::size_t k_prime);

/// E[CIR] itself for the same null model. CIR^2 ~ Beta(K'/2, (d-1-K')/2), so
/// this sits slightly below expected_random_cir (Jensen).
double exact_mean_random_cir(std::size_t d, std::size_t k_prime);

}  // namespace aaud
