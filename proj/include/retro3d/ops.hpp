#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "retro3d/autodiff.hpp"

// Differentiable operations over Vars. Tensors are treated as [rows, cols] where
// cols is the last dimension. There is no implicit broadcasting: row-vector
// and scalar forms are separate ops.
namespace retro3d {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// `a` times a one-element Var.
Var scale_by(const Var& a, const Var& s);
/// x[r, :] + b for every row r; b has `cols(x)` elements.
Var add_rowvec(const Var& x, const Var& b);
/// x[r, :] * factors[r]; factors are constants.
Var scale_rows(const Var& x, std::span<const double> factors);

Var matmul(const Var& a, const Var& b);
/// a · bᵀ for a [m, k], b [n, k].
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);

Var sum(const Var& a);
Var mean(const Var& a);

Var relu(const Var& x);
/// Exact erf form: x · Φ(x).
Var gelu(const Var& x);

/// Softmax over the last dimension. `mask` (optional, same size as x) keeps entries
/// with value 1; masked entries get probability 0. A fully masked row is an error.
Var softmax_lastdim(const Var& x, std::span<const std::uint8_t> mask = {});
Var log_softmax_lastdim(const Var& x);

Var layernorm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

/// Inverted dropout with a mask drawn from `seed`. Rate 0 returns x unchanged.
Var dropout(const Var& x, double rate, std::uint64_t seed);

/// Rows of `x` picked by `index`; index -1 yields an all-zero row.
Var gather_rows(const Var& x, std::span<const int> index);
/// out[index[e], :] += x[e, :], out has `rows` rows.
Var scatter_add_rows(const Var& x, std::span<const int> index, std::size_t rows);

Var concat_lastdim(const std::vector<Var>& parts);
Var slice_lastdim(const Var& x, std::size_t start, std::size_t length);

/// out[i*M + j, :] = u[i, :] + v[j, :] for u, v of shape [M, C].
Var pair_sum(const Var& u, const Var& v);

/// Mean negative log-likelihood over rows whose target differs from `pad_index`.
Var cross_entropy(const Var& logits, std::span<const int> targets, int pad_index);
/// (KL(p‖q) + KL(q‖p)) / 2 per row, averaged over rows with row_mask 1
/// (all rows when the mask is empty).
Var kl_divergence(const Var& p_logits, const Var& q_logits,
                  std::span<const std::uint8_t> row_mask = {});
/// Mean over included rows of -Σ_j target[r, j] · log(probs[r, j]).
/// Returns a constant 0 when no row is included.
Var soft_target_cross_entropy(const Var& probs, const Tensor& target,
                              std::span<const std::uint8_t> row_mask);

}  // namespace retro3d
