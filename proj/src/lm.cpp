#include "tesu/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tesu/error.hpp"
#include "tesu/optim.hpp"
#include "tesu/rng.hpp"

namespace tesu {

DecoderLM DecoderLM::init(const LmConfig& cfg, std::uint64_t seed) {
  if (cfg.vocab_size <= static_cast<std::size_t>(kNumReserved)) {
    fail(ErrorKind::kConfig, "lm: vocab_size must exceed the reserved ids");
  }
  if (cfg.context == 0) fail(ErrorKind::kConfig, "lm: context must be positive");
  DecoderLM lm;
  lm.cfg_ = cfg;
  Rng rng(seed);
  lm.token_embedding_ = nn::normal_tensor({cfg.vocab_size, cfg.model_dim}, rng, 0.1);
  lm.position_embedding_ = nn::normal_tensor({cfg.context, cfg.model_dim}, rng, 0.1);
  lm.blocks_ = nn::make_blocks(cfg.blocks, cfg.model_dim, cfg.heads, cfg.mlp_ratio, rng);
  lm.final_norm_ = nn::LayerNorm::init(cfg.model_dim);
  // near-uniform next-token distribution at init
  lm.head_ = nn::Linear::init(cfg.model_dim, cfg.vocab_size, rng, 0.02);
  return lm;
}

DecoderLM DecoderLM::from_checkpoint(const Checkpoint& ckpt, const LmConfig& cfg) {
  if (ckpt.tag != ComponentTag::kLanguageModel) {
    fail(ErrorKind::kFormat, std::string("expected a language-model checkpoint, got ") +
                                 component_name(ckpt.tag));
  }
  DecoderLM lm = init(cfg, 0);
  nn::assign_tensors(lm.parameters(), model_tensors(ckpt));
  return lm;
}

NamedTensors DecoderLM::parameters() const {
  NamedTensors out;
  out.emplace_back("lm.token_embedding", token_embedding_);
  out.emplace_back("lm.position_embedding", position_embedding_);
  nn::collect_blocks(blocks_, out, "lm.block");
  final_norm_.collect(out, "lm.final_norm");
  head_.collect(out, "lm.head");
  return out;
}

Checkpoint DecoderLM::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.tag = ComponentTag::kLanguageModel;
  for (const auto& [name, t] : parameters()) ckpt.tensors.emplace_back(name, t.detach());
  return ckpt;
}

Tensor DecoderLM::embed(std::span<const int> ids) const { return gather_rows(token_embedding_, ids); }

Tensor DecoderLM::forward_embeddings(const Tensor& embeds, const Segments& segments) const {
  if (!embeds.defined() || embeds.rank() != 2 || embeds.rows() == 0) {
    fail(ErrorKind::kInvalidArgument, "forward_embeddings: empty input");
  }
  if (embeds.cols() != cfg_.model_dim) {
    fail(ErrorKind::kDimension, "forward_embeddings: embeddings " + shape_str(embeds.shape()) +
                                    " do not match model width " + std::to_string(cfg_.model_dim));
  }
  std::vector<int> positions;
  positions.reserve(embeds.rows());
  for (const auto& s : segments) {
    if (s.length > cfg_.context) {
      fail(ErrorKind::kContextOverflow, "forward_embeddings: sequence of " + std::to_string(s.length) +
                                            " exceeds context " + std::to_string(cfg_.context));
    }
    for (std::size_t t = 0; t < s.length; ++t) positions.push_back(static_cast<int>(t));
  }
  if (positions.size() != embeds.rows()) {
    fail(ErrorKind::kDimension, "forward_embeddings: segments do not cover the input rows");
  }
  Tensor x = add(embeds, gather_rows(position_embedding_, positions));
  x = nn::run_blocks(blocks_, x, segments, true);
  return head_(final_norm_(x));
}

Tensor DecoderLM::forward_embeddings(const Tensor& embeds) const {
  if (!embeds.defined() || embeds.rank() != 2) {
    fail(ErrorKind::kInvalidArgument, "forward_embeddings: empty input");
  }
  return forward_embeddings(embeds, single_segment(embeds.rows()));
}

Tensor DecoderLM::forward_tokens(std::span<const int> ids, const Segments& segments) const {
  if (ids.empty()) fail(ErrorKind::kInvalidArgument, "forward_tokens: empty input");
  return forward_embeddings(embed(ids), segments);
}

Tensor DecoderLM::forward_tokens(std::span<const int> ids) const {
  return forward_tokens(ids, single_segment(ids.size()));
}

std::vector<int> DecoderLM::generate(const Tensor& prefix_embeds, std::size_t max_new) const {
  if (!prefix_embeds.defined() || prefix_embeds.rows() == 0) {
    fail(ErrorKind::kInvalidArgument, "generate: empty prefix");
  }
  NoGradGuard no_grad;
  std::vector<int> out;
  Tensor seq = prefix_embeds;
  for (std::size_t step = 0; step < max_new; ++step) {
    if (seq.rows() > cfg_.context) {
      fail(ErrorKind::kContextOverflow, "generate: sequence of " + std::to_string(seq.rows()) +
                                            " exceeds context " + std::to_string(cfg_.context));
    }
    Tensor logits = forward_embeddings(seq);
    const Real* last = logits.ptr() + (logits.rows() - 1) * logits.cols();
    const int next = static_cast<int>(std::max_element(last, last + logits.cols()) - last);
    if (next == kEosId) break;
    out.push_back(next);
    const Tensor parts[] = {seq, embed(std::span<const int>(&next, 1))};
    seq = concat_rows(parts);
  }
  return out;
}

namespace {

struct Example {
  std::vector<int> inputs;
  std::vector<int> targets;
};

Example make_example(const std::vector<int>& seq, std::size_t context, std::size_t& truncated) {
  std::size_t n = seq.size();
  if (n < 2) fail(ErrorKind::kInvalidArgument, "pretrain_lm: sequence shorter than two tokens");
  if (n - 1 > context) {
    ++truncated;
    n = context + 1;
  }
  return {std::vector<int>(seq.begin(), seq.begin() + static_cast<long>(n - 1)),
          std::vector<int>(seq.begin() + 1, seq.begin() + static_cast<long>(n))};
}

}  // namespace

double perplexity(const DecoderLM& lm, std::span<const std::vector<int>> sequences) {
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t count = 0;
  std::size_t truncated = 0;
  for (const auto& seq : sequences) {
    auto ex = make_example(seq, lm.config().context, truncated);
    Tensor loss = cross_entropy(lm.forward_tokens(ex.inputs), ex.targets);
    total += loss.item() * static_cast<double>(ex.targets.size());
    count += ex.targets.size();
  }
  if (count == 0) fail(ErrorKind::kInvalidArgument, "perplexity: no sequences");
  return std::exp(total / static_cast<double>(count));
}

LmTrainReport pretrain_lm(DecoderLM& lm, std::span<const std::vector<int>> train,
                          std::span<const std::vector<int>> heldout, const LmTrainConfig& cfg,
                          const LmEpochCallback& on_epoch) {
  if (train.empty()) fail(ErrorKind::kInvalidArgument, "pretrain_lm: empty corpus");
  LmTrainReport report;
  std::vector<Example> examples;
  for (const auto& seq : train) examples.push_back(make_example(seq, lm.config().context, report.truncated_sequences));

  ScheduleCfg sched = cfg.schedule;
  sched.total_steps = std::max<std::size_t>(1, sched.epochs * steps_per_epoch(examples.size(), sched.batch_size));
  validate(sched);

  auto named = lm.parameters();
  nn::set_trainable(named, true);
  auto params = nn::tensors_of(named);
  AdamState adam = adam_init(params);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += sched.batch_size) {
      const std::size_t end = std::min(order.size(), begin + sched.batch_size);
      std::vector<int> inputs, targets;
      std::vector<std::size_t> lengths;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& ex = examples[order[i]];
        inputs.insert(inputs.end(), ex.inputs.begin(), ex.inputs.end());
        targets.insert(targets.end(), ex.targets.begin(), ex.targets.end());
        lengths.push_back(ex.inputs.size());
      }
      zero_grads(params);
      Tape tape;
      double value = 0.0;
      {
        TapeGuard guard(tape);
        Tensor loss = cross_entropy(lm.forward_tokens(inputs, segments_from_lengths(lengths)), targets);
        value = loss.item();
        tape.backward(loss);
      }
      if (cfg.clip > 0.0) clip_grad_norm(params, cfg.clip);
      adam_step(params, adam, lr_at(std::min(step + 1, sched.total_steps), sched));
      ++step;
      loss_acc += value;
      ++batches;
    }
    report.epoch_loss.push_back(loss_acc / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, report.epoch_loss.back());
  }
  nn::set_trainable(named, false);
  if (!heldout.empty()) report.heldout_perplexity = perplexity(lm, heldout);
  return report;
}

}  // namespace tesu
