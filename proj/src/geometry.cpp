#include "aaud/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "aaud/error.hpp"
#include "aaud/kernels.hpp"

namespace aaud {

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    fail(ErrorCode::shape, std::string(what) + ": expected length " + std::to_string(want) +
                               ", got " + std::to_string(got));
  }
}

void require_token(TokenId token, std::size_t vocab) {
  if (token >= vocab) {
    fail(ErrorCode::index, "token " + std::to_string(token) + " outside vocabulary of size " +
                               std::to_string(vocab));
  }
}

// Max elementwise distance tolerated between a subspace's base direction and
// the state it is applied to.
constexpr double kBaseMatchTol = 1e-12;

}  // namespace

EffectiveUnembedding build_effective_unembedding(const Matrix& raw_rows,
                                                 std::span<const double> gamma,
                                                 std::span<const double> biases) {
  const std::size_t v = raw_rows.rows();
  const std::size_t d = raw_rows.cols();
  if (v == 0 || d == 0) fail(ErrorCode::shape, "unembedding must be non-empty");
  require_dim(gamma.size(), d, "gamma");
  require_dim(biases.size(), v, "biases");
  if (!all_finite(raw_rows.data()) || !all_finite(gamma) || !all_finite(biases)) {
    fail(ErrorCode::data, "unembedding contains non-finite values");
  }

  EffectiveUnembedding out{Matrix(v, d), Vector(biases.begin(), biases.end())};
  for (std::size_t k = 0; k < v; ++k) {
    auto src = raw_rows.row(k);
    auto dst = out.rows.row(k);
    for (std::size_t i = 0; i < d; ++i) dst[i] = src[i] * gamma[i];
  }
  return out;
}

ResidualState::ResidualState(Vector h) : h_(std::move(h)) {
  if (h_.empty()) fail(ErrorCode::shape, "residual state must be non-empty");
  if (!all_finite(h_)) fail(ErrorCode::data, "residual state contains non-finite values");
  r0_ = kernels::norm(h_);
  if (!(r0_ > 0.0)) fail(ErrorCode::degenerate, "residual state has zero norm");
  u_.resize(h_.size());
  for (std::size_t i = 0; i < h_.size(); ++i) u_[i] = h_[i] / r0_;
}

Vector logits_at_direction(std::span<const double> direction, const EffectiveUnembedding& unemb) {
  require_dim(direction.size(), unemb.hidden_dim(), "direction");
  Vector z(unemb.vocab_size());
  kernels::matvec(unemb.rows, direction, z);
  const double scale = std::sqrt(static_cast<double>(unemb.hidden_dim()));
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = scale * z[k] + unemb.biases[k];
  return z;
}

Vector logits(const ResidualState& state, const EffectiveUnembedding& unemb) {
  return logits_at_direction(state.unit_dir(), unemb);
}

double pairwise_margin_at_direction(std::span<const double> direction,
                                    const EffectiveUnembedding& unemb, TokenId token_i,
                                    TokenId token_j) {
  require_dim(direction.size(), unemb.hidden_dim(), "direction");
  require_token(token_i, unemb.vocab_size());
  require_token(token_j, unemb.vocab_size());
  if (token_i == token_j) return 0.0;
  const auto wi = unemb.rows.row(token_i);
  const auto wj = unemb.rows.row(token_j);
  double s = 0.0;
  for (std::size_t n = 0; n < direction.size(); ++n) s += (wi[n] - wj[n]) * direction[n];
  const double scale = std::sqrt(static_cast<double>(unemb.hidden_dim()));
  return scale * s + (unemb.biases[token_i] - unemb.biases[token_j]);
}

double pairwise_margin(const ResidualState& state, const EffectiveUnembedding& unemb,
                       TokenId token_i, TokenId token_j) {
  return pairwise_margin_at_direction(state.unit_dir(), unemb, token_i, token_j);
}

TokenId argmax(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::shape, "argmax of an empty vector");
  TokenId best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

TokenId argmax_among(std::span<const double> values, std::span<const TokenId> candidates) {
  if (candidates.empty()) fail(ErrorCode::shape, "argmax over an empty candidate set");
  TokenId best = candidates.front();
  require_token(best, values.size());
  for (TokenId c : candidates.subspan(1)) {
    require_token(c, values.size());
    if (values[c] > values[best] || (values[c] == values[best] && c < best)) best = c;
  }
  return best;
}

Vector tangent_project(std::span<const double> delta, const ResidualState& base) {
  require_dim(delta.size(), base.dim(), "perturbation");
  const auto& u = base.unit_dir();
  const double radial = kernels::dot(u, delta);
  Vector out(delta.begin(), delta.end());
  kernels::axpy(-radial, u, out);
  return out;
}

Vector first_order_direction(const ResidualState& base, std::span<const double> delta) {
  Vector out = tangent_project(delta, base);
  const double inv_r = 1.0 / base.norm();
  const auto& u = base.unit_dir();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = u[i] + inv_r * out[i];
  return out;
}

Vector random_tangent_unit(const ResidualState& base, Rng& rng) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    Vector v = tangent_project(standard_normal(base.dim(), rng), base);
    const double n = kernels::norm(v);
    if (n > 0.0) {
      for (double& x : v) x /= n;
      return v;
    }
  }
  fail(ErrorCode::degenerate, "could not draw a tangent direction");
}

OrthonormalBasis householder_basis(const Matrix& columns, double rank_tol) {
  const std::size_t k = columns.rows();
  const std::size_t d = columns.cols();
  if (k == 0) fail(ErrorCode::shape, "householder_basis needs at least one vector");
  if (!(rank_tol >= 0.0)) fail(ErrorCode::domain, "rank_tol must be nonnegative");

  Matrix work = columns;  // one input vector per row
  double largest = 0.0;
  for (std::size_t j = 0; j < k; ++j) largest = std::max(largest, kernels::norm(work.row(j)));
  if (!(largest > 0.0)) fail(ErrorCode::degenerate, "all input vectors are zero");
  const double cutoff = rank_tol * largest;

  struct Reflector {
    std::size_t pivot;
    Vector v;  // entries pivot..d-1
    double vtv;
  };
  std::vector<Reflector> reflectors;
  OrthonormalBasis out;
  std::vector<double> signed_diag;

  std::size_t pivot = 0;
  for (std::size_t j = 0; j < k && pivot < d; ++j) {
    auto col = work.row(j);
    double sigma2 = 0.0;
    for (std::size_t i = pivot; i < d; ++i) sigma2 += col[i] * col[i];
    const double sigma = std::sqrt(sigma2);
    if (sigma <= cutoff || sigma == 0.0) continue;

    const double x0 = col[pivot];
    const double sgn = x0 >= 0.0 ? 1.0 : -1.0;
    Reflector h{pivot, Vector(col.begin() + static_cast<std::ptrdiff_t>(pivot), col.end()), 0.0};
    h.v[0] += sgn * sigma;
    for (double x : h.v) h.vtv += x * x;

    // H x = -sgn * sigma e_pivot; apply H to the remaining columns.
    for (std::size_t c = j + 1; c < k; ++c) {
      auto other = work.row(c);
      double s = 0.0;
      for (std::size_t i = 0; i < h.v.size(); ++i) s += h.v[i] * other[pivot + i];
      const double f = 2.0 * s / h.vtv;
      for (std::size_t i = 0; i < h.v.size(); ++i) other[pivot + i] -= f * h.v[i];
    }
    signed_diag.push_back(-sgn * sigma);
    out.diagonal.push_back(sigma);
    out.kept_columns.push_back(j);
    reflectors.push_back(std::move(h));
    ++pivot;
  }

  const std::size_t rank = reflectors.size();
  out.vectors = Matrix(rank, d);
  for (std::size_t q = 0; q < rank; ++q) {
    auto e = out.vectors.row(q);
    e[q] = 1.0;
    for (std::size_t r = rank; r-- > 0;) {
      const auto& h = reflectors[r];
      double s = 0.0;
      for (std::size_t i = 0; i < h.v.size(); ++i) s += h.v[i] * e[h.pivot + i];
      const double f = 2.0 * s / h.vtv;
      for (std::size_t i = 0; i < h.v.size(); ++i) e[h.pivot + i] -= f * h.v[i];
    }
    if (signed_diag[q] < 0.0) {
      for (double& x : e) x = -x;
    }
  }
  return out;
}

std::optional<std::size_t> AnswerSubspace::position(TokenId token) const noexcept {
  auto it = std::find(answer_token_ids.begin(), answer_token_ids.end(), token);
  if (it == answer_token_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - answer_token_ids.begin());
}

std::span<const double> AnswerSubspace::tangential_row(TokenId token) const {
  auto pos = position(token);
  if (!pos) fail(ErrorCode::index, "token " + std::to_string(token) + " is not an answer token");
  return tangential_rows.row(*pos);
}

Vector AnswerSubspace::project(std::span<const double> x) const {
  require_dim(x.size(), hidden_dim(), "projection input");
  Vector out(x.size(), 0.0);
  for (std::size_t q = 0; q < basis.rows(); ++q) {
    const auto b = basis.row(q);
    kernels::axpy(kernels::dot(b, x), b, out);
  }
  return out;
}

AnswerSubspace build_answer_subspace(const EffectiveUnembedding& unemb, const ResidualState& base,
                                     std::span<const TokenId> answer_token_ids, double rank_tol) {
  const std::size_t d = unemb.hidden_dim();
  const std::size_t k = answer_token_ids.size();
  require_dim(base.dim(), d, "base state");
  if (k == 0 || k > d) {
    fail(ErrorCode::domain, "answer count must lie in [1, d], got " + std::to_string(k));
  }
  for (std::size_t a = 0; a < k; ++a) {
    require_token(answer_token_ids[a], unemb.vocab_size());
    for (std::size_t b = 0; b < a; ++b) {
      if (answer_token_ids[a] == answer_token_ids[b]) {
        fail(ErrorCode::duplicate,
             "answer token " + std::to_string(answer_token_ids[a]) + " listed twice");
      }
    }
  }

  AnswerSubspace sub;
  sub.answer_token_ids.assign(answer_token_ids.begin(), answer_token_ids.end());
  sub.base_direction = base.unit_dir();
  sub.rank_tol = rank_tol;
  sub.tangential_rows = Matrix(k, d);
  for (std::size_t a = 0; a < k; ++a) {
    const Vector t = tangent_project(unemb.rows.row(answer_token_ids[a]), base);
    std::copy(t.begin(), t.end(), sub.tangential_rows.row(a).begin());
  }

  OrthonormalBasis qr;
  try {
    qr = householder_basis(sub.tangential_rows, rank_tol);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::degenerate) {
      fail(ErrorCode::degenerate, "answer subspace is degenerate: all tangential rows vanish");
    }
    throw;
  }
  sub.basis = std::move(qr.vectors);
  sub.effective_rank = sub.basis.rows();
  return sub;
}

PerturbationDecomposition decompose(std::span<const double> delta, const ResidualState& base,
                                    const AnswerSubspace& subspace) {
  require_dim(delta.size(), base.dim(), "perturbation");
  require_dim(subspace.hidden_dim(), base.dim(), "subspace");
  const auto& u = base.unit_dir();
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (std::abs(u[i] - subspace.base_direction[i]) > kBaseMatchTol) {
      fail(ErrorCode::consistency, "subspace was built over a different base direction");
    }
  }

  PerturbationDecomposition out;
  out.raw.assign(delta.begin(), delta.end());
  out.tangential = tangent_project(delta, base);
  out.predictive = subspace.project(out.tangential);
  out.nullspace = out.tangential;
  kernels::axpy(-1.0, out.predictive, out.nullspace);

  const double raw_norm = kernels::norm(out.raw);
  const double tan_norm = kernels::norm(out.tangential);
  out.epsilon = raw_norm / base.norm();
  // Projection round-off leaves ~1e-16 |delta| behind for a purely radial delta.
  if (tan_norm == 0.0 || tan_norm <= 1e-13 * raw_norm) {
    out.degenerate = true;
    out.cir = 0.0;
  } else {
    out.cir = std::min(1.0, kernels::norm(out.predictive) / tan_norm);
  }
  return out;
}

double expected_random_cir(std::size_t d, std::size_t k_prime) {
  if (d < 2 || k_prime < 1 || k_prime >= d) {
    fail(ErrorCode::domain, "expected_random_cir needs 1 <= K' <= d - 1");
  }
  return std::sqrt(static_cast<double>(k_prime) / static_cast<double>(d - 1));
}

double exact_mean_random_cir(std::size_t d, std::size_t k_prime) {
  if (d < 2 || k_prime < 1 || k_prime >= d) {
    fail(ErrorCode::domain, "exact_mean_random_cir needs 1 <= K' <= d - 1");
  }
  if (k_prime == d - 1) return 1.0;
  const double a = 0.5 * static_cast<double>(k_prime);
  const double b = 0.5 * static_cast<double>(d - 1 - k_prime);
  return std::exp(std::lgamma(a + 0.5) + std::lgamma(a + b) - std::lgamma(a) -
                  std::lgamma(a + b + 0.5));
}

}  // namespace aaud
