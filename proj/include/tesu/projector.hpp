#pragma once

#include <cstdint>

#include "tesu/checkpoint.hpp"
#include "tesu/nn.hpp"
#include "tesu/unified_encoder.hpp"

namespace tesu {

struct ProjectorConfig {
  std::size_t latent_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t model_dim = 96;
};

// Encoder projector: Linear(d_u -> d_h), GELU, Linear(d_h -> d_m), applied
// per position. The second layer starts at zero so nothing is injected
// before training.
class Projector {
 public:
  static Projector init(const ProjectorConfig& cfg, std::uint64_t seed);
  static Projector from_checkpoint(const Checkpoint& ckpt, const ProjectorConfig& cfg);

  const ProjectorConfig& config() const { return cfg_; }
  Tensor operator()(const Tensor& latents) const;
  Tensor project(const LatentSeq& latents) const;

  std::size_t parameter_count() const;
  NamedTensors parameters() const;
  Checkpoint to_checkpoint() const;

 private:
  ProjectorConfig cfg_;
  nn::Linear in_;
  nn::Linear out_;
};

}  // namespace tesu
