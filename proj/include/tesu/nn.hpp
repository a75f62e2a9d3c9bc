#pragma once

#include <string>
#include <vector>

#include "tesu/ops.hpp"
#include "tesu/rng.hpp"
#include "tesu/tensor.hpp"

namespace tesu::nn {

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng, double stddev);
  static Linear zeros(std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm init(std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

// Pre-norm block: x + Attn(LN(x)), then + MLP(LN(x)) with a GELU MLP.
// zero_residual starts both output projections at zero (identity block).
struct TransformerBlock {
  LayerNorm ln_attn;
  Linear qkv;
  Linear attn_out;
  LayerNorm ln_mlp;
  Linear fc_in;
  Linear fc_out;
  std::size_t heads = 1;

  static TransformerBlock init(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                               std::size_t depth, Rng& rng, bool zero_residual = false);
  Tensor operator()(const Tensor& x, const Segments& segments, bool causal) const;
  void collect(NamedTensors& out, const std::string& prefix) const;
};

std::vector<TransformerBlock> make_blocks(std::size_t count, std::size_t dim, std::size_t heads,
                                          std::size_t mlp_ratio, Rng& rng, bool zero_residual = false);
Tensor run_blocks(const std::vector<TransformerBlock>& blocks, Tensor x, const Segments& segments,
                  bool causal);
void collect_blocks(const std::vector<TransformerBlock>& blocks, NamedTensors& out,
                    const std::string& prefix);

// Fixed sinusoidal position codes restarting at 0 for every segment.
Tensor sinusoidal_positions(const Segments& segments, std::size_t dim);

Tensor normal_tensor(Shape shape, Rng& rng, double stddev);

std::vector<Tensor> tensors_of(const NamedTensors& named);
void set_trainable(const NamedTensors& named, bool trainable);
std::size_t parameter_count(const NamedTensors& named);

// Copies values from `source` into same-named tensors of `target`; throws
// ErrorKind::kFormat on missing names or shape differences.
void assign_tensors(const NamedTensors& target, const NamedTensors& source);

}  // namespace tesu::nn
