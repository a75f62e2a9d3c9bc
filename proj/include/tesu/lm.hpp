#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tesu/checkpoint.hpp"
#include "tesu/nn.hpp"
#include "tesu/schedule.hpp"
#include "tesu/tokenizer.hpp"

namespace tesu {

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 96;
  std::size_t blocks = 3;
  std::size_t heads = 4;
  std::size_t context = 256;
  std::size_t mlp_ratio = 4;
};

// Small decoder-only causal transformer with learned positions and an
// untied output head.
class DecoderLM {
 public:
  static DecoderLM init(const LmConfig& cfg, std::uint64_t seed);
  static DecoderLM from_checkpoint(const Checkpoint& ckpt, const LmConfig& cfg);

  const LmConfig& config() const { return cfg_; }

  // Native token embeddings (rows of the embedding table).
  Tensor embed(std::span<const int> ids) const;

  // Causal logits [E x V] for packed embedding sequences.
  Tensor forward_embeddings(const Tensor& embeds, const Segments& segments) const;
  Tensor forward_embeddings(const Tensor& embeds) const;
  Tensor forward_tokens(std::span<const int> ids, const Segments& segments) const;
  Tensor forward_tokens(std::span<const int> ids) const;

  // Greedy decoding; stops at EOS (not included) or after max_new tokens.
  std::vector<int> generate(const Tensor& prefix_embeds, std::size_t max_new) const;

  NamedTensors parameters() const;
  Checkpoint to_checkpoint() const;

 private:
  LmConfig cfg_;
  Tensor token_embedding_;  // V x d_m
  Tensor position_embedding_;  // C x d_m
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear head_;
};

struct LmTrainConfig {
  ScheduleCfg schedule{3e-3, 0.03, 1, 32, 20};
  double clip = 1.0;
  std::uint64_t seed = 7;
};

struct LmTrainReport {
  std::vector<double> epoch_loss;
  double heldout_perplexity = 0.0;
  std::size_t truncated_sequences = 0;
};

using LmEpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Next-token CE training on framed sequences ([BOS] ... [EOS]); sequences
// longer than the context are truncated and counted. Parameters are frozen
// on return.
LmTrainReport pretrain_lm(DecoderLM& lm, std::span<const std::vector<int>> train,
                          std::span<const std::vector<int>> heldout, const LmTrainConfig& cfg,
                          const LmEpochCallback& on_epoch = {});

// exp(mean next-token CE) over the given framed sequences.
double perplexity(const DecoderLM& lm, std::span<const std::vector<int>> sequences);

}  // namespace tesu
