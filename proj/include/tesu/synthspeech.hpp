#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tesu/tensor.hpp"
#include "tesu/tokenizer.hpp"

namespace tesu {

struct SynthConfig {
  std::size_t feature_dim = 32;
  std::size_t frames_per_token = 4;
  double sigma = 0.1;
  double position_scale = 0.5;
  std::uint64_t pattern_seed = 0x5eed7e5aULL;
};

// Synthetic stand-in for a spoken utterance: F x d_a frames.
struct AcousticSeq {
  Tensor frames;
  std::size_t frames_per_token = 0;  // 0 for variable-duration renders
  std::size_t token_count = 0;
  // True per-token frame counts. Oracle bookkeeping only; encoders never read it.
  std::vector<std::size_t> token_frames;

  std::size_t frame_count() const { return frames.defined() ? frames.rows() : 0; }
};

// Seed-stable acoustic signature of a token id (independent of any model
// parameters).
std::vector<Real> base_pattern(int token_id, const SynthConfig& cfg);

// Each token yields r frames: base_pattern + positional offset of the global
// frame index + N(0, sigma^2) noise drawn from noise_seed.
AcousticSeq render(const TokenSeq& text, std::uint64_t noise_seed, double sigma, std::size_t r,
                   const SynthConfig& cfg = {});

// Per-token frame counts uniform on [r_min, r_max].
AcousticSeq render_jittered(const TokenSeq& text, std::uint64_t noise_seed, double sigma,
                            std::size_t r_min, std::size_t r_max, const SynthConfig& cfg = {});

// Number of render calls in this process (text-only training guard).
std::uint64_t synth_invocations();

// Little-endian dump: "TESA", u32 version, u32 F, u32 d_a, then f32 frames.
std::string serialize_frames(const AcousticSeq& seq);
AcousticSeq parse_frames(const std::string& bytes, std::size_t frames_per_token);
void save_frames(const std::filesystem::path& path, const AcousticSeq& seq);
AcousticSeq load_frames(const std::filesystem::path& path, std::size_t frames_per_token);

}  // namespace tesu
