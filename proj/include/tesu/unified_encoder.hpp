#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tesu/checkpoint.hpp"
#include "tesu/nn.hpp"
#include "tesu/synthspeech.hpp"
#include "tesu/tokenizer.hpp"

namespace tesu {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t text_dim = 64;
  std::size_t latent_dim = 64;
  std::size_t feature_dim = 32;
  std::size_t frames_per_token = 4;
  std::size_t encoder_blocks = 2;
  std::size_t mapper_blocks = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
};

// Shared-space sequence M(E(x)): L x d_u.
struct LatentSeq {
  Tensor values;
  std::size_t length() const { return values.defined() ? values.rows() : 0; }
};

struct TextEncoder {
  Tensor embedding;  // V x d_t
  std::vector<nn::TransformerBlock> blocks;
};

struct SpeechEncoder {
  nn::Linear frame_proj;  // d_a -> d_t
  std::vector<nn::TransformerBlock> blocks;
};

struct UnifiedMapper {
  std::vector<nn::TransformerBlock> blocks;
  nn::LayerNorm norm;
  nn::Linear out;  // d_t -> d_u
};

class UnifiedEncoder {
 public:
  static UnifiedEncoder init(const EncoderConfig& cfg, std::uint64_t seed);
  static UnifiedEncoder from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }

  // Differentiable packed encoders; segments describe per-sequence rows.
  Tensor text_latents(std::span<const TokenSeq> seqs, Segments& segments) const;
  Tensor speech_latents(std::span<const AcousticSeq> seqs, Segments& segments) const;

  // Frozen single-sequence inference (no tape).
  LatentSeq encode_text(const TokenSeq& x) const;
  LatentSeq encode_speech(const AcousticSeq& x) const;

  NamedTensors parameters() const;
  Checkpoint to_checkpoint() const;

 private:
  EncoderConfig cfg_;
  TextEncoder text_;
  SpeechEncoder speech_;
  UnifiedMapper mapper_;
};

// Process-wide count of speech-encoder calls; stages that must be text-only
// assert it does not move.
std::uint64_t speech_encoder_invocations();

enum class AlignObjective {
  kAligned,  // MSE + lambda * InfoNCE across modalities
  kControl,  // per-modality autoencoding only, no cross-modal term
};

struct AlignConfig {
  AlignObjective objective = AlignObjective::kAligned;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 2e-3;
  double warmup_frac = 0.03;
  double mse_weight = 1.0;
  double contrastive_weight = 0.5;
  double temperature = 0.07;
  double sigma = 0.1;
  std::uint64_t seed = 11;
};

struct AlignLoss {
  Tensor total;
  double mse = 0.0;
  double contrastive = 0.0;
};

// Paired loss over one batch. Pairs must have equal latent lengths.
AlignLoss alignment_loss(const UnifiedEncoder& enc, std::span<const TokenSeq> texts,
                         std::span<const AcousticSeq> speech, const AlignConfig& cfg);

struct AlignReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_mse;
  std::vector<double> epoch_contrastive;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Trains encoders and mapper in place (speech rendered with fresh noise per
// epoch), then freezes every parameter.
AlignReport train_alignment(UnifiedEncoder& enc, std::span<const TokenSeq> sentences,
                            const AlignConfig& cfg, const SynthConfig& synth,
                            const EpochCallback& on_epoch = {});

struct AlignmentResidual {
  double mse = 0.0;
  double mean_cosine = 0.0;
};

AlignmentResidual alignment_residual(const LatentSeq& a, const LatentSeq& b);
AlignmentResidual alignment_residual(const UnifiedEncoder& enc, const TokenSeq& text,
                                     const AcousticSeq& speech);

}  // namespace tesu
