#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tesu/tensor.hpp"

namespace tesu {

// Contiguous run of rows belonging to one sequence in a packed [N x d] batch.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};
using Segments = std::vector<Segment>;

Segments single_segment(std::size_t length);
Segments segments_from_lengths(std::span<const std::size_t> lengths);
std::size_t total_length(const Segments& segments);

// All ops record onto the active tape when any input requires grad.
// Shapes are explicit: the only broadcast is a row-wise bias/gain.

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
// x · W + b (b broadcast over rows)
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor add_row(const Tensor& x, const Tensor& row);

Tensor gelu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Real eps = Real(1e-5));
Tensor l2_normalize_rows(const Tensor& x, Real eps = Real(1e-8));

Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
// Copy of base with base.row(index[i]) replaced by rows.row(i).
Tensor replace_rows(const Tensor& base, const Tensor& rows,
                    std::span<const std::size_t> index);
// Stride-r mean pooling per segment; a trailing partial window averages the
// rows it has. Output segments are written to pooled_segments when non-null.
Tensor mean_pool_rows(const Tensor& x, std::size_t stride, const Segments& segments,
                      Segments* pooled_segments = nullptr);

// Multi-head scaled dot-product attention over a packed [N x 3d] q|k|v
// tensor; attention never crosses segment boundaries.
Tensor attention(const Tensor& qkv, std::size_t heads, const Segments& segments,
                 bool causal);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const std::uint8_t> mask);
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

bool all_finite(const Tensor& x);

}  // namespace tesu
