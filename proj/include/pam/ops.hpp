#pragma once

// Differentiable tensor operations. Shapes never broadcast implicitly: every
// promotion (bias rows, per-row scales, repeats) is its own named op.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "pam/tensor.hpp"

namespace pam::ag {

/// [m x k] . [k x n] -> [m x n]. Each output row depends only on the matching
/// input row and is accumulated in a fixed order, so row subsets give
/// bit-identical rows.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);

/// x[r, c] + bias[c]; bias must hold exactly cols(x) values.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[r, c] * s[r]; s must hold exactly rows(x) values.
Tensor scale_rows(const Tensor& x, const Tensor& s);
/// Repeats every row `times` times consecutively.
Tensor repeat_rows(const Tensor& x, std::size_t times);
/// Means over consecutive groups of `group` rows.
Tensor mean_pool_rows(const Tensor& x, std::size_t group);

Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Softmax over `axis` (0 or 1 for matrices, 0 for vectors). Max-subtracted.
Tensor softmax(const Tensor& x, std::size_t axis);
/// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Row-wise layer normalisation with learned gain and bias (eps 1e-5).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// Feature-axis concatenation in argument order.
Tensor concat_feature(const std::vector<Tensor>& xs);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
/// Gathers rows by index (duplicates allowed; gradients add up).
Tensor take_rows(const Tensor& x, std::span<const std::size_t> index);
/// Zero matrix with `total_rows` rows where row index[i] = x[i].
Tensor scatter_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t total_rows);

/// sum_i w[i] * xs[i]; gradients flow to both the xs and w.
Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& w);

/// One packed sequence: rows [begin, begin + length) of the input.
struct Span {
  std::size_t begin = 0;
  std::size_t length = 0;
};

/// Multi-head causal self-attention over independent packed sequences.
/// qkv holds [Q | K | V] along features (3D columns); the result is [R x D].
/// Rows outside every span are zero.
Tensor causal_attention(const Tensor& qkv, std::span<const Span> spans, std::size_t heads);

/// Row-wise argmax; ties go to the lowest index. Not differentiable.
std::vector<std::size_t> argmax_rows(const Tensor& x);

}  // namespace pam::ag
