#include "tesu/nn.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tesu/error.hpp"

namespace tesu::nn {

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  std::vector<Real> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Real>(stddev * rng.normal());
  return Tensor::from(std::move(shape), std::move(values));
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, double stddev) {
  return {normal_tensor({in, out}, rng, stddev), Tensor::zeros({out})};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}), Tensor::zeros({out})};
}

void Linear::collect(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNorm LayerNorm::init(std::size_t dim) {
  return {Tensor::full({dim}, Real(1)), Tensor::zeros({dim})};
}

void LayerNorm::collect(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

TransformerBlock TransformerBlock::init(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                                        std::size_t depth, Rng& rng, bool zero_residual) {
  if (dim % heads != 0) {
    fail(ErrorKind::kConfig, "model width " + std::to_string(dim) + " not divisible by " +
                                 std::to_string(heads) + " heads");
  }
  const double in_std = 1.0 / std::sqrt(static_cast<double>(dim));
  const double hidden_std = 1.0 / std::sqrt(static_cast<double>(dim * mlp_ratio));
  // residual branches shrink with depth so the stream stays O(1) at init
  const double residual = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(depth, 1)));
  TransformerBlock b;
  b.heads = heads;
  b.ln_attn = LayerNorm::init(dim);
  b.qkv = Linear::init(dim, 3 * dim, rng, in_std);
  b.attn_out = Linear::init(dim, dim, rng, in_std * residual);
  b.ln_mlp = LayerNorm::init(dim);
  b.fc_in = Linear::init(dim, dim * mlp_ratio, rng, in_std);
  b.fc_out = Linear::init(dim * mlp_ratio, dim, rng, hidden_std * residual);
  if (zero_residual) {
    b.attn_out = Linear::zeros(dim, dim);
    b.fc_out = Linear::zeros(dim * mlp_ratio, dim);
  }
  return b;
}

Tensor TransformerBlock::operator()(const Tensor& x, const Segments& segments, bool causal) const {
  Tensor h = add(x, attn_out(attention(qkv(ln_attn(x)), heads, segments, causal)));
  return add(h, fc_out(gelu(fc_in(ln_mlp(h)))));
}

void TransformerBlock::collect(NamedTensors& out, const std::string& prefix) const {
  ln_attn.collect(out, prefix + ".ln_attn");
  qkv.collect(out, prefix + ".qkv");
  attn_out.collect(out, prefix + ".attn_out");
  ln_mlp.collect(out, prefix + ".ln_mlp");
  fc_in.collect(out, prefix + ".fc_in");
  fc_out.collect(out, prefix + ".fc_out");
}

std::vector<TransformerBlock> make_blocks(std::size_t count, std::size_t dim, std::size_t heads,
                                          std::size_t mlp_ratio, Rng& rng, bool zero_residual) {
  std::vector<TransformerBlock> blocks;
  for (std::size_t i = 0; i < count; ++i) {
    blocks.push_back(TransformerBlock::init(dim, heads, mlp_ratio, count, rng, zero_residual));
  }
  return blocks;
}

Tensor run_blocks(const std::vector<TransformerBlock>& blocks, Tensor x, const Segments& segments,
                  bool causal) {
  for (const auto& b : blocks) x = b(x, segments, causal);
  return x;
}

void collect_blocks(const std::vector<TransformerBlock>& blocks, NamedTensors& out,
                    const std::string& prefix) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(out, prefix + "." + std::to_string(i));
  }
}

Tensor sinusoidal_positions(const Segments& segments, std::size_t dim) {
  const std::size_t n = total_length(segments);
  Tensor out = Tensor::zeros({n, dim});
  Real* p = out.ptr();
  for (const auto& s : segments) {
    for (std::size_t t = 0; t < s.length; ++t) {
      for (std::size_t k = 0; k < dim; ++k) {
        const double rate =
            std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(dim));
        const double angle = static_cast<double>(t) * rate;
        p[(s.offset + t) * dim + k] = static_cast<Real>(k % 2 == 0 ? std::sin(angle) : std::cos(angle));
      }
    }
  }
  return out;
}

std::vector<Tensor> tensors_of(const NamedTensors& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

void set_trainable(const NamedTensors& named, bool trainable) {
  for (auto [name, t] : named) t.set_requires_grad(trainable);
}

std::size_t parameter_count(const NamedTensors& named) {
  std::size_t n = 0;
  for (const auto& [name, t] : named) n += t.numel();
  return n;
}

void assign_tensors(const NamedTensors& target, const NamedTensors& source) {
  std::map<std::string, const Tensor*> lookup;
  for (const auto& [name, t] : source) lookup[name] = &t;
  for (auto [name, t] : target) {
    auto it = lookup.find(name);
    if (it == lookup.end()) fail(ErrorKind::kFormat, "checkpoint is missing tensor '" + name + "'");
    if (it->second->shape() != t.shape()) {
      fail(ErrorKind::kFormat, "tensor '" + name + "' has shape " + shape_str(it->second->shape()) +
                                   ", model expects " + shape_str(t.shape()));
    }
    std::copy(it->second->data().begin(), it->second->data().end(), t.data().begin());
  }
}

}  // namespace tesu::nn
