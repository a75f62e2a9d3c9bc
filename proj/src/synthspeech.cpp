#include "tesu/synthspeech.hpp"

#include <atomic>
#include <cmath>

#include "tesu/binio.hpp"
#include "tesu/error.hpp"
#include "tesu/rng.hpp"

namespace tesu {
namespace {

std::atomic<std::uint64_t> g_render_calls{0};

constexpr std::uint32_t kFramesVersion = 1;

double position_offset(std::size_t frame, std::size_t k, std::size_t dim) {
  const double rate = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(dim));
  const double angle = static_cast<double>(frame) * rate;
  return (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

AcousticSeq render_counts(const TokenSeq& text, std::uint64_t noise_seed, double sigma,
                          const std::vector<std::size_t>& counts, const SynthConfig& cfg) {
  ++g_render_calls;
  if (sigma < 0.0) fail(ErrorKind::kInvalidArgument, "render: sigma must be non-negative");
  if (text.empty()) fail(ErrorKind::kInvalidArgument, "render: empty token sequence");
  const std::size_t dim = cfg.feature_dim;
  std::size_t total = 0;
  for (auto c : counts) total += c;
  AcousticSeq seq;
  seq.frames = Tensor::zeros({total, dim});
  seq.token_count = text.size();
  seq.token_frames = counts;
  Rng noise(noise_seed);
  Real* out = seq.frames.ptr();
  std::size_t frame = 0;
  for (std::size_t t = 0; t < text.size(); ++t) {
    const auto pattern = base_pattern(text.ids[t], cfg);
    for (std::size_t rep = 0; rep < counts[t]; ++rep, ++frame) {
      for (std::size_t k = 0; k < dim; ++k) {
        const double eps = sigma > 0.0 ? sigma * noise.normal() : 0.0;
        out[frame * dim + k] =
            static_cast<Real>(pattern[k] + cfg.position_scale * position_offset(frame, k, dim) + eps);
      }
    }
  }
  return seq;
}

}  // namespace

std::vector<Real> base_pattern(int token_id, const SynthConfig& cfg) {
  Rng rng(Rng::derive(cfg.pattern_seed, static_cast<std::uint64_t>(token_id)));
  std::vector<Real> pattern(cfg.feature_dim);
  for (auto& v : pattern) v = static_cast<Real>(rng.normal());
  return pattern;
}

AcousticSeq render(const TokenSeq& text, std::uint64_t noise_seed, double sigma, std::size_t r,
                   const SynthConfig& cfg) {
  if (r == 0) fail(ErrorKind::kInvalidArgument, "render: frames per token must be at least 1");
  auto seq = render_counts(text, noise_seed, sigma, std::vector<std::size_t>(text.size(), r), cfg);
  seq.frames_per_token = r;
  return seq;
}

AcousticSeq render_jittered(const TokenSeq& text, std::uint64_t noise_seed, double sigma,
                            std::size_t r_min, std::size_t r_max, const SynthConfig& cfg) {
  if (r_min < 1 || r_min > r_max) {
    fail(ErrorKind::kInvalidArgument, "render_jittered: need 1 <= r_min <= r_max, got [" +
                                          std::to_string(r_min) + ", " + std::to_string(r_max) + "]");
  }
  Rng durations(Rng::derive(noise_seed, 1));
  std::vector<std::size_t> counts(text.size());
  for (auto& c : counts) {
    c = static_cast<std::size_t>(durations.uniform_int(static_cast<std::int64_t>(r_min),
                                                       static_cast<std::int64_t>(r_max)));
  }
  auto seq = render_counts(text, noise_seed, sigma, counts, cfg);
  seq.frames_per_token = (r_min == r_max) ? r_min : 0;
  return seq;
}

std::uint64_t synth_invocations() { return g_render_calls.load(); }

std::string serialize_frames(const AcousticSeq& seq) {
  binio::Writer w;
  w.raw("TESA");
  w.u32(kFramesVersion);
  w.u32(static_cast<std::uint32_t>(seq.frames.rows()));
  w.u32(static_cast<std::uint32_t>(seq.frames.cols()));
  for (Real v : seq.frames.data()) w.f32(static_cast<float>(v));
  return w.take();
}

AcousticSeq parse_frames(const std::string& bytes, std::size_t frames_per_token) {
  binio::Reader r(bytes);
  if (bytes.size() < 16 || r.raw(4) != "TESA") fail(ErrorKind::kFormat, "frame file: bad magic");
  const auto version = r.u32();
  if (version != kFramesVersion) {
    fail(ErrorKind::kFormat, "frame file: unsupported version " + std::to_string(version));
  }
  const std::size_t f = r.u32();
  const std::size_t d = r.u32();
  if (f == 0 || d == 0) fail(ErrorKind::kFormat, "frame file: empty frame matrix");
  if (r.remaining() != f * d * 4) {
    fail(ErrorKind::kFormat, "frame file: payload of " + std::to_string(r.remaining()) +
                                 " bytes does not match " + std::to_string(f) + "x" + std::to_string(d));
  }
  std::vector<Real> values(f * d);
  for (auto& v : values) v = static_cast<Real>(r.f32());
  AcousticSeq seq;
  seq.frames = Tensor::from({f, d}, std::move(values));
  seq.frames_per_token = frames_per_token;
  seq.token_count = frames_per_token ? (f + frames_per_token - 1) / frames_per_token : 0;
  return seq;
}

void save_frames(const std::filesystem::path& path, const AcousticSeq& seq) {
  binio::write_file(path, serialize_frames(seq));
}

AcousticSeq load_frames(const std::filesystem::path& path, std::size_t frames_per_token) {
  return parse_frames(binio::read_file(path), frames_per_token);
}

}  // namespace tesu
