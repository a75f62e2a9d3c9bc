#include "tesu/unified_encoder.hpp"

#include <atomic>
#include <cmath>
#include <numeric>

#include "tesu/error.hpp"
#include "tesu/optim.hpp"
#include "tesu/rng.hpp"
#include "tesu/schedule.hpp"

namespace tesu {
namespace {

std::atomic<std::uint64_t> g_speech_calls{0};

void validate(const EncoderConfig& cfg) {
  if (cfg.vocab_size <= static_cast<std::size_t>(kNumReserved)) {
    fail(ErrorKind::kConfig, "encoder: vocab_size must exceed the reserved ids");
  }
  if (cfg.frames_per_token == 0) fail(ErrorKind::kConfig, "encoder: frames_per_token must be positive");
  if (cfg.text_dim % cfg.heads != 0) fail(ErrorKind::kConfig, "encoder: text_dim not divisible by heads");
}

// latents have unit per-coordinate rms
Tensor unit_rms(const Tensor& x, std::size_t dim) {
  return scale(l2_normalize_rows(x), static_cast<Real>(std::sqrt(static_cast<double>(dim))));
}

}  // namespace

std::uint64_t speech_encoder_invocations() { return g_speech_calls.load(); }

UnifiedEncoder UnifiedEncoder::init(const EncoderConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  UnifiedEncoder enc;
  enc.cfg_ = cfg;
  Rng rng(seed);
  enc.text_.embedding = nn::normal_tensor({cfg.vocab_size, cfg.text_dim}, rng, 1.0);
  enc.text_.blocks = nn::make_blocks(cfg.encoder_blocks, cfg.text_dim, cfg.heads, cfg.mlp_ratio, rng);
  enc.speech_.frame_proj = nn::Linear::init(cfg.feature_dim, cfg.text_dim, rng,
                                            1.0 / std::sqrt(static_cast<double>(cfg.feature_dim)));
  enc.speech_.blocks = nn::make_blocks(cfg.encoder_blocks, cfg.text_dim, cfg.heads, cfg.mlp_ratio, rng);
  enc.mapper_.blocks = nn::make_blocks(cfg.mapper_blocks, cfg.text_dim, cfg.heads, cfg.mlp_ratio, rng, true);
  enc.mapper_.norm = nn::LayerNorm::init(cfg.text_dim);
  enc.mapper_.out = nn::Linear::init(cfg.text_dim, cfg.latent_dim, rng,
                                     1.0 / std::sqrt(static_cast<double>(cfg.text_dim)));
  return enc;
}

UnifiedEncoder UnifiedEncoder::from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& cfg) {
  if (ckpt.tag != ComponentTag::kUnifiedEncoder) {
    fail(ErrorKind::kFormat, std::string("expected a unified-encoder checkpoint, got ") +
                                 component_name(ckpt.tag));
  }
  UnifiedEncoder enc = init(cfg, 0);
  nn::assign_tensors(enc.parameters(), model_tensors(ckpt));
  return enc;
}

NamedTensors UnifiedEncoder::parameters() const {
  NamedTensors out;
  out.emplace_back("text.embedding", text_.embedding);
  nn::collect_blocks(text_.blocks, out, "text.block");
  speech_.frame_proj.collect(out, "speech.frame_proj");
  nn::collect_blocks(speech_.blocks, out, "speech.block");
  nn::collect_blocks(mapper_.blocks, out, "mapper.block");
  mapper_.norm.collect(out, "mapper.norm");
  mapper_.out.collect(out, "mapper.out");
  return out;
}

Checkpoint UnifiedEncoder::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.tag = ComponentTag::kUnifiedEncoder;
  for (const auto& [name, t] : parameters()) ckpt.tensors.emplace_back(name, t.detach());
  return ckpt;
}

Tensor UnifiedEncoder::text_latents(std::span<const TokenSeq> seqs, Segments& segments) const {
  std::vector<int> ids;
  std::vector<std::size_t> lengths;
  for (const auto& s : seqs) {
    if (s.empty()) fail(ErrorKind::kInvalidArgument, "encode_text: empty token sequence");
    ids.insert(ids.end(), s.ids.begin(), s.ids.end());
    lengths.push_back(s.size());
  }
  if (ids.empty()) fail(ErrorKind::kInvalidArgument, "encode_text: no sequences");
  segments = segments_from_lengths(lengths);
  Tensor x = add(gather_rows(text_.embedding, ids), nn::sinusoidal_positions(segments, cfg_.text_dim));
  x = nn::run_blocks(text_.blocks, x, segments, false);
  x = nn::run_blocks(mapper_.blocks, x, segments, false);
  return unit_rms(mapper_.out(mapper_.norm(x)), cfg_.latent_dim);
}

Tensor UnifiedEncoder::speech_latents(std::span<const AcousticSeq> seqs, Segments& segments) const {
  ++g_speech_calls;
  std::vector<Tensor> frames;
  std::vector<std::size_t> lengths;
  for (const auto& s : seqs) {
    if (!s.frames.defined() || s.frames.cols() != cfg_.feature_dim) {
      fail(ErrorKind::kDimension, "encode_speech: frames must be F x " + std::to_string(cfg_.feature_dim));
    }
    if (s.frame_count() < cfg_.frames_per_token) {
      fail(ErrorKind::kInvalidArgument, "encode_speech: " + std::to_string(s.frame_count()) +
                                            " frames is fewer than the pooling stride " +
                                            std::to_string(cfg_.frames_per_token));
    }
    frames.push_back(s.frames);
    lengths.push_back(s.frame_count());
  }
  if (frames.empty()) fail(ErrorKind::kInvalidArgument, "encode_speech: no sequences");
  const Segments frame_segments = segments_from_lengths(lengths);
  Tensor x = frames.size() == 1 ? frames[0] : concat_rows(frames);
  x = speech_.frame_proj(x);
  x = mean_pool_rows(x, cfg_.frames_per_token, frame_segments, &segments);
  x = nn::run_blocks(speech_.blocks, x, segments, false);
  x = nn::run_blocks(mapper_.blocks, x, segments, false);
  return unit_rms(mapper_.out(mapper_.norm(x)), cfg_.latent_dim);
}

LatentSeq UnifiedEncoder::encode_text(const TokenSeq& x) const {
  NoGradGuard no_grad;
  Segments segs;
  return {text_latents(std::span<const TokenSeq>(&x, 1), segs)};
}

LatentSeq UnifiedEncoder::encode_speech(const AcousticSeq& x) const {
  NoGradGuard no_grad;
  Segments segs;
  return {speech_latents(std::span<const AcousticSeq>(&x, 1), segs)};
}

AlignLoss alignment_loss(const UnifiedEncoder& enc, std::span<const TokenSeq> texts,
                         std::span<const AcousticSeq> speech, const AlignConfig& cfg) {
  if (texts.size() != speech.size() || texts.empty()) {
    fail(ErrorKind::kInvalidArgument, "alignment_loss: need matching nonempty text/speech batches");
  }
  Segments text_segs, speech_segs;
  Tensor t = enc.text_latents(texts, text_segs);
  Tensor s = enc.speech_latents(speech, speech_segs);
  for (std::size_t i = 0; i < text_segs.size(); ++i) {
    if (text_segs[i].length != speech_segs[i].length) {
      fail(ErrorKind::kDimension, "alignment pair " + std::to_string(i) + ": text latent length " +
                                      std::to_string(text_segs[i].length) + " vs speech latent length " +
                                      std::to_string(speech_segs[i].length));
    }
  }
  AlignLoss out;
  Tensor reg = mse(t, s);
  out.mse = reg.item();
  Tensor total = scale(reg, static_cast<Real>(cfg.mse_weight));
  if (cfg.contrastive_weight > 0.0) {
    // symmetric InfoNCE over every position in the batch; other occurrences
    // of the same token are not negatives
    const std::size_t n = t.rows();
    std::vector<int> diag(n);
    std::iota(diag.begin(), diag.end(), 0);
    std::vector<int> ids;
    ids.reserve(n);
    for (const auto& x : texts) ids.insert(ids.end(), x.ids.begin(), x.ids.end());
    std::vector<Real> bias(n * n, Real(0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j && ids[i] == ids[j]) bias[i * n + j] = Real(-1e4);
      }
    }
    const Tensor same_token = Tensor::from({n, n}, std::move(bias));
    Tensor tn = l2_normalize_rows(t);
    Tensor sn = l2_normalize_rows(s);
    const auto inv_tau = static_cast<Real>(1.0 / cfg.temperature);
    Tensor ts = cross_entropy(add(scale(matmul_transposed(tn, sn), inv_tau), same_token), diag);
    Tensor st = cross_entropy(add(scale(matmul_transposed(sn, tn), inv_tau), same_token), diag);
    Tensor nce = scale(add(ts, st), Real(0.5));
    out.contrastive = nce.item();
    total = add(total, scale(nce, static_cast<Real>(cfg.contrastive_weight)));
  }
  out.total = total;
  return out;
}

AlignReport train_alignment(UnifiedEncoder& enc, std::span<const TokenSeq> sentences,
                            const AlignConfig& cfg, const SynthConfig& synth,
                            const EpochCallback& on_epoch) {
  if (sentences.empty()) fail(ErrorKind::kInvalidArgument, "train_alignment: no sentences");
  if (synth.frames_per_token != enc.config().frames_per_token ||
      synth.feature_dim != enc.config().feature_dim) {
    fail(ErrorKind::kConfig, "train_alignment: synth config disagrees with encoder frame layout");
  }
  const auto& ecfg = enc.config();
  Rng rng(cfg.seed);
  auto params_named = enc.parameters();
  nn::set_trainable(params_named, true);
  auto params = nn::tensors_of(params_named);

  // Control stack: modality-specific reconstruction heads (discarded afterwards).
  Rng head_rng(Rng::derive(cfg.seed, 99));
  const double head_std = 1.0 / std::sqrt(static_cast<double>(ecfg.latent_dim));
  nn::Linear token_head = nn::Linear::init(ecfg.latent_dim, ecfg.vocab_size, head_rng, head_std);
  nn::Linear frame_head = nn::Linear::init(ecfg.latent_dim, ecfg.feature_dim, head_rng, head_std);
  if (cfg.objective == AlignObjective::kControl) {
    for (auto* lin : {&token_head, &frame_head}) {
      lin->weight.set_requires_grad(true);
      lin->bias.set_requires_grad(true);
      params.push_back(lin->weight);
      params.push_back(lin->bias);
    }
  }

  ScheduleCfg sched;
  sched.base_lr = cfg.lr;
  sched.warmup_frac = cfg.warmup_frac;
  sched.batch_size = cfg.batch_size;
  sched.epochs = cfg.epochs;
  sched.total_steps = std::max<std::size_t>(1, cfg.epochs * steps_per_epoch(sentences.size(), cfg.batch_size));
  AdamState adam = adam_init(params);

  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  AlignReport report;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_acc = 0.0, mse_acc = 0.0, nce_acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<TokenSeq> texts;
      std::vector<AcousticSeq> speech;
      for (std::size_t i = begin; i < end; ++i) {
        const auto idx = order[i];
        texts.push_back(sentences[idx]);
        const auto noise_seed = Rng::derive(Rng::derive(cfg.seed, epoch + 1), idx);
        speech.push_back(render(sentences[idx], noise_seed, cfg.sigma, ecfg.frames_per_token, synth));
      }
      zero_grads(params);
      Tape tape;
      double loss_value = 0.0;
      {
        TapeGuard guard(tape);
        Tensor loss;
        if (cfg.objective == AlignObjective::kAligned) {
          AlignLoss l = alignment_loss(enc, texts, speech, cfg);
          loss = l.total;
          mse_acc += l.mse;
          nce_acc += l.contrastive;
        } else {
          Segments ts, ss, fs;
          Tensor t = enc.text_latents(texts, ts);
          Tensor s = enc.speech_latents(speech, ss);
          std::vector<int> ids;
          for (const auto& x : texts) ids.insert(ids.end(), x.ids.begin(), x.ids.end());
          std::vector<Tensor> frames;
          std::vector<std::size_t> lengths;
          for (const auto& a : speech) {
            frames.push_back(a.frames);
            lengths.push_back(a.frame_count());
          }
          Tensor pooled = mean_pool_rows(concat_rows(frames), ecfg.frames_per_token,
                                         segments_from_lengths(lengths));
          Tensor rec_text = cross_entropy(token_head(t), ids);
          Tensor rec_speech = mse(frame_head(s), pooled);
          loss = add(rec_text, rec_speech);
          mse_acc += rec_speech.item();
          nce_acc += rec_text.item();
        }
        loss_value = loss.item();
        tape.backward(loss);
      }
      clip_grad_norm(params, 1.0);
      adam_step(params, adam, lr_at(std::min(step + 1, sched.total_steps), sched));
      ++step;
      loss_acc += loss_value;
      ++batches;
    }
    report.epoch_loss.push_back(loss_acc / static_cast<double>(batches));
    report.epoch_mse.push_back(mse_acc / static_cast<double>(batches));
    report.epoch_contrastive.push_back(nce_acc / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, report.epoch_loss.back());
  }
  nn::set_trainable(params_named, false);
  return report;
}

AlignmentResidual alignment_residual(const LatentSeq& a, const LatentSeq& b) {
  if (a.length() == 0 || a.length() != b.length() || a.values.cols() != b.values.cols()) {
    fail(ErrorKind::kDimension, "alignment_residual: latent shapes " + shape_str(a.values.shape()) +
                                    " and " + shape_str(b.values.shape()) + " differ");
  }
  const std::size_t n = a.length(), d = a.values.cols();
  const Real* x = a.values.ptr();
  const Real* y = b.values.ptr();
  double sq = 0.0, cos_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double u = x[i * d + j], v = y[i * d + j];
      sq += (u - v) * (u - v);
      dot += u * v;
      nx += u * u;
      ny += v * v;
    }
    const double denom = std::sqrt(nx) * std::sqrt(ny);
    cos_total += denom > 0.0 ? dot / denom : 0.0;
  }
  return {sq / static_cast<double>(n * d), cos_total / static_cast<double>(n)};
}

AlignmentResidual alignment_residual(const UnifiedEncoder& enc, const TokenSeq& text,
                                     const AcousticSeq& speech) {
  return alignment_residual(enc.encode_text(text), enc.encode_speech(speech));
}

}  // namespace tesu
