#include "tesu/pipeline.hpp"

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>

#include "tesu/error.hpp"
#include "tesu/optim.hpp"

namespace tesu {
namespace {

void require_frozen(const NamedTensors& named, const char* what) {
  for (const auto& [name, t] : named) {
    if (t.requires_grad()) fail(ErrorKind::kState, std::string(what) + " must be frozen, " + name + " is trainable");
  }
}

void require_framed(const TokenSeq& seq) {
  if (seq.ids.size() != seq.words.size() + 2 || seq.ids.front() != kBosId || seq.ids.back() != kEosId) {
    fail(ErrorKind::kInvalidArgument, "expected a framed token sequence ([BOS] words [EOS])");
  }
}

std::vector<int> concat_ids(std::initializer_list<const std::vector<int>*> parts) {
  std::vector<int> out;
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

// Rows of one teacher-forced prompt/query/response sequence.
struct SftRows {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> query_rows;

  void append(const PromptIds& prompt, std::size_t query_len, const std::vector<int>& response) {
    if (query_len == 0) fail(ErrorKind::kInvalidArgument, "sft: empty query");
    if (response.empty()) fail(ErrorKind::kInvalidArgument, "sft: empty response");
    std::vector<int> seq = prompt.head;
    const std::size_t q0 = seq.size();
    seq.insert(seq.end(), query_len, kPadId);
    seq.insert(seq.end(), prompt.tail.begin(), prompt.tail.end());
    const std::size_t supervised_from = seq.size();
    seq.insert(seq.end(), response.begin(), response.end());
    seq.push_back(kEosId);
    const std::size_t base = inputs.size();
    for (std::size_t p = 0; p + 1 < seq.size(); ++p) {
      inputs.push_back(seq[p]);
      targets.push_back(seq[p + 1]);
      mask.push_back(p + 1 >= supervised_from ? 1 : 0);
    }
    for (std::size_t k = 0; k < query_len; ++k) query_rows.push_back(base + q0 + k);
    lengths.push_back(seq.size() - 1);
  }
};

Tensor splice(const DecoderLM& lm, const Projector& proj, const std::vector<int>& inputs,
              std::span<const LatentSeq> latents, std::span<const std::size_t> rows) {
  Tensor embeds = lm.embed(inputs);
  if (latents.empty()) return embeds;
  std::vector<Tensor> parts;
  parts.reserve(latents.size());
  for (const auto& l : latents) parts.push_back(l.values);
  return replace_rows(embeds, proj(parts.size() == 1 ? parts[0] : concat_rows(parts)), rows);
}

template <typename BuildLoss>
StageReport train_projector(Projector& proj, std::size_t examples, const StageConfig& cfg,
                            const StageCallback& on_epoch, BuildLoss&& build_loss) {
  if (examples == 0) fail(ErrorKind::kInvalidArgument, "projector training: empty dataset");
  ScheduleCfg sched = cfg.schedule;
  sched.total_steps = std::max<std::size_t>(1, sched.epochs * steps_per_epoch(examples, sched.batch_size));
  validate(sched);

  auto named = proj.parameters();
  nn::set_trainable(named, true);
  auto params = nn::tensors_of(named);
  AdamState adam = adam_init(params);
  StageReport report;
  std::vector<std::size_t> order(examples);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
    Rng rng(Rng::derive(cfg.seed, epoch));
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    double loss_acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += sched.batch_size) {
      const std::size_t end = std::min(order.size(), begin + sched.batch_size);
      zero_grads(params);
      Tape tape;
      double value = 0.0;
      {
        TapeGuard guard(tape);
        Tensor loss = build_loss(std::span<const std::size_t>(order).subspan(begin, end - begin), rng);
        if (!loss.defined()) {
          ++report.skipped_batches;
          continue;
        }
        value = loss.item();
        tape.backward(loss);
      }
      if (cfg.clip > 0.0) clip_grad_norm(params, cfg.clip);
      adam_step(params, adam, lr_at(std::min(step + 1, sched.total_steps), sched));
      if (step == 0) report.first_step_loss = value;
      ++step;
      loss_acc += value;
      ++batches;
    }
    report.epoch_loss.push_back(batches ? loss_acc / static_cast<double>(batches) : 0.0);
    if (on_epoch) on_epoch(epoch, report.epoch_loss.back());
  }
  report.steps = step;
  nn::set_trainable(named, false);
  return report;
}

}  // namespace

std::size_t SpanPlan::covered() const {
  std::size_t n = 0;
  for (const auto& s : spans) n += s.length;
  return n;
}

bool plan_valid(const SpanPlan& plan, std::size_t word_count, const SpanParams& params) {
  for (std::size_t i = 0; i < plan.spans.size(); ++i) {
    const auto& s = plan.spans[i];
    if (s.length < params.min_length || s.length > params.max_length || s.end() > word_count) return false;
    if (i > 0 && plan.spans[i - 1].end() > s.start) return false;
  }
  return true;
}

SpanPlan sample_spans(std::size_t word_count, Rng& rng, const SpanParams& params) {
  if (params.min_length == 0 || params.min_length > params.max_length) {
    fail(ErrorKind::kConfig, "span lengths must satisfy 0 < min <= max");
  }
  SpanPlan plan;
  if (word_count < params.min_length) return plan;
  const std::size_t attempts = params.attempts ? params.attempts : 2 * params.max_spans;
  std::vector<std::size_t> starts;
  for (std::size_t a = 0; a < attempts && plan.spans.size() < params.max_spans; ++a) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(params.min_length),
                                                              static_cast<std::int64_t>(params.max_length)));
    if (len > word_count) continue;
    starts.clear();
    for (std::size_t s = 0; s + len <= word_count; ++s) {
      bool ok = true;
      for (const auto& t : plan.spans) {
        if (!(s + len + params.min_gap <= t.start || s >= t.end() + params.min_gap)) {
          ok = false;
          break;
        }
      }
      if (ok) starts.push_back(s);
    }
    if (starts.empty()) continue;
    const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(starts.size()) - 1));
    plan.spans.push_back({starts[pick], len});
  }
  std::sort(plan.spans.begin(), plan.spans.end(), [](const Span& a, const Span& b) { return a.start < b.start; });
  return plan;
}

SpanPlan sample_spans(std::size_t word_count, Rng& rng, std::size_t max_spans, std::size_t min_gap) {
  SpanParams p;
  p.max_spans = max_spans;
  p.min_gap = min_gap;
  return sample_spans(word_count, rng, p);
}

std::size_t InterleavedBatch::supervised() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

InterleavedBatch build_interleaved(std::span<const TokenSeq> texts, std::span<const SpanPlan> plans,
                                   const UnifiedEncoder& enc, const Projector& proj, const DecoderLM& lm) {
  if (texts.size() != plans.size()) fail(ErrorKind::kInvalidArgument, "build_interleaved: one plan per text");
  if (texts.empty()) fail(ErrorKind::kInvalidArgument, "build_interleaved: empty batch");
  InterleavedBatch batch;
  std::vector<int> inputs;
  std::vector<std::size_t> lengths, index;
  std::vector<TokenSeq> span_text;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto& text = texts[i];
    require_framed(text);
    const std::size_t words = text.words.size();
    if (!plan_valid(plans[i], words, SpanParams{1, words ? words : 1, 0, 0, 0})) {
      fail(ErrorKind::kInvalidArgument, "build_interleaved: span plan does not fit the text");
    }
    const std::size_t base = inputs.size();
    std::vector<std::uint8_t> in_span(words, 0);
    for (const auto& s : plans[i].spans) {
      TokenSeq sub;
      for (std::size_t k = s.start; k < s.end(); ++k) {
        in_span[k] = 1;
        sub.ids.push_back(text.ids[k + 1]);
        sub.words.push_back(text.words[k]);
        index.push_back(base + k + 1);
      }
      span_text.push_back(std::move(sub));
    }
    for (std::size_t p = 0; p + 1 < text.ids.size(); ++p) {
      inputs.push_back(text.ids[p]);
      batch.targets.push_back(text.ids[p + 1]);
      // target p is word p; the final target (EOS) is never inside a span
      batch.mask.push_back(p < words && in_span[p] ? 0 : 1);
    }
    lengths.push_back(text.ids.size() - 1);
  }
  batch.segments = segments_from_lengths(lengths);
  batch.embeds = lm.embed(inputs);
  if (!span_text.empty()) {
    Segments latent_segments;
    Tensor latents;
    {
      NoGradGuard no_grad;
      latents = enc.text_latents(span_text, latent_segments);
    }
    for (std::size_t k = 0; k < span_text.size(); ++k) {
      if (latent_segments[k].length != span_text[k].size()) {
        fail(ErrorKind::kInternal, "build_interleaved: span latent length " +
                                       std::to_string(latent_segments[k].length) + " != span word count " +
                                       std::to_string(span_text[k].size()));
      }
    }
    batch.embeds = replace_rows(batch.embeds, proj(latents), index);
    batch.injected_rows = index.size();
  }
  return batch;
}

InterleavedBatch build_interleaved(const TokenSeq& text, const SpanPlan& plan, const UnifiedEncoder& enc,
                                   const Projector& proj, const DecoderLM& lm) {
  return build_interleaved(std::span<const TokenSeq>(&text, 1), std::span<const SpanPlan>(&plan, 1), enc, proj,
                           lm);
}

StageReport pretrain_projector(Projector& proj, std::span<const TokenSeq> documents, const UnifiedEncoder& enc,
                               const DecoderLM& lm, const StageConfig& cfg, const StageCallback& on_epoch) {
  require_frozen(enc.parameters(), "unified encoder");
  require_frozen(lm.parameters(), "language model");
  for (const auto& d : documents) require_framed(d);
  std::vector<TokenSeq> batch_text;
  std::vector<SpanPlan> plans;
  return train_projector(proj, documents.size(), cfg, on_epoch, [&](std::span<const std::size_t> idx, Rng& rng) {
    batch_text.clear();
    plans.clear();
    for (auto i : idx) {
      batch_text.push_back(documents[i]);
      plans.push_back(sample_spans(documents[i].words.size(), rng, cfg.spans));
    }
    InterleavedBatch b = build_interleaved(batch_text, plans, enc, proj, lm);
    if (b.supervised() == 0) return Tensor();
    return masked_cross_entropy(lm.forward_embeddings(b.embeds, b.segments), b.targets, b.mask);
  });
}

const char* sft_kind_name(SftKind kind) { return kind == SftKind::kRepetition ? "repetition" : "instruction"; }

PromptIds prompt_ids(const std::string& system_prompt, const Vocab& vocab) {
  PromptIds p;
  p.head.push_back(kBosId);
  for (const auto& w : normalize_words(system_prompt)) p.head.push_back(vocab.id(w));
  p.head.push_back(vocab.id(kUserMarker));
  p.tail.push_back(vocab.id(kAssistantMarker));
  return p;
}

SftDataset build_sft_dataset(std::span<const InstructionPair> instructions, std::span<const std::string> repetition,
                             double mix_ratio, std::size_t count, const Vocab& vocab, const DecoderLM& lm, Rng& rng) {
  if (instructions.empty() && repetition.empty()) {
    fail(ErrorKind::kInvalidArgument, "build_sft_dataset: both sources are empty");
  }
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) {
    fail(ErrorKind::kConfig, "build_sft_dataset: mix_ratio must lie in [0, 1]");
  }
  SftDataset data;
  data.repetition_source_empty = repetition.empty();
  const PromptIds instr_prompt = prompt_ids(kInstructionPrompt, vocab);
  std::map<std::string, std::string> regenerated;
  auto pick = [&rng](std::size_t n) {
    return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
  };
  for (std::size_t k = 0; k < count; ++k) {
    const bool rep = !repetition.empty() && (instructions.empty() || rng.uniform() < mix_ratio);
    if (rep) {
      const std::string q = normalize_text(repetition[pick(repetition.size())]);
      data.examples.push_back({SftKind::kRepetition, kRepetitionPrompt, q, q});
      ++data.repetition_count;
      continue;
    }
    const auto& pair = instructions[pick(instructions.size())];
    const std::string q = normalize_text(pair.query);
    auto it = regenerated.find(q);
    if (it == regenerated.end()) {
      const TokenSeq query = encode(q, vocab);
      const auto ids = concat_ids({&instr_prompt.head, &query.ids, &instr_prompt.tail});
      auto out = lm.generate(lm.embed(ids), 24);
      std::string response = decode(out, vocab);
      if (normalize_words(response).empty()) {
        response = normalize_text(pair.response);
        ++data.fallback_responses;
      }
      it = regenerated.emplace(q, response).first;
    }
    data.examples.push_back({SftKind::kInstruction, kInstructionPrompt, q, it->second});
    ++data.instruction_count;
  }
  return data;
}

void save_sft_dataset(const std::filesystem::path& path, const SftDataset& data) {
  std::vector<std::string> lines;
  lines.reserve(data.examples.size());
  for (const auto& e : data.examples) {
    lines.push_back(nlohmann::json{{"type", sft_kind_name(e.kind)},
                                   {"system_prompt", e.system_prompt},
                                   {"query", e.query},
                                   {"response", e.response}}
                        .dump());
  }
  write_lines(path, lines);
}

SftDataset load_sft_dataset(const std::filesystem::path& path) {
  SftDataset data;
  for (const auto& line : read_lines(path)) {
    try {
      auto j = nlohmann::json::parse(line);
      SftExample e;
      const auto type = j.at("type").get<std::string>();
      if (type == "repetition") {
        e.kind = SftKind::kRepetition;
        ++data.repetition_count;
      } else if (type == "instruction") {
        e.kind = SftKind::kInstruction;
        ++data.instruction_count;
      } else {
        fail(ErrorKind::kFormat, "sft dataset: unknown type " + type);
      }
      e.system_prompt = j.at("system_prompt").get<std::string>();
      e.query = j.at("query").get<std::string>();
      e.response = j.at("response").get<std::string>();
      data.examples.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::kFormat, "sft dataset: " + std::string(ex.what()));
    }
  }
  data.repetition_source_empty = data.repetition_count == 0;
  return data;
}

SftBatch build_sft_batch(std::span<const SftExample> examples, std::span<const LatentSeq> query_latents,
                         const Projector& proj, const DecoderLM& lm, const Vocab& vocab) {
  if (examples.size() != query_latents.size()) {
    fail(ErrorKind::kInvalidArgument, "build_sft_batch: one latent sequence per example");
  }
  SftRows rows;
  std::map<std::string, PromptIds> prompts;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    auto it = prompts.find(e.system_prompt);
    if (it == prompts.end()) it = prompts.emplace(e.system_prompt, prompt_ids(e.system_prompt, vocab)).first;
    rows.append(it->second, query_latents[i].length(), encode(e.response, vocab).ids);
  }
  SftBatch b;
  b.embeds = splice(lm, proj, rows.inputs, query_latents, rows.query_rows);
  b.segments = segments_from_lengths(rows.lengths);
  b.targets = std::move(rows.targets);
  b.mask = std::move(rows.mask);
  return b;
}

StageReport sft(Projector& proj, const SftDataset& data, const UnifiedEncoder& enc, const DecoderLM& lm,
                const Vocab& vocab, const StageConfig& cfg, const StageCallback& on_epoch) {
  require_frozen(enc.parameters(), "unified encoder");
  require_frozen(lm.parameters(), "language model");
  std::map<std::string, LatentSeq> cache;
  std::vector<LatentSeq> latents;
  latents.reserve(data.examples.size());
  for (const auto& e : data.examples) {
    auto it = cache.find(e.query);
    if (it == cache.end()) it = cache.emplace(e.query, enc.encode_text(encode(e.query, vocab))).first;
    latents.push_back(it->second);
  }
  std::vector<SftExample> batch_ex;
  std::vector<LatentSeq> batch_lat;
  return train_projector(proj, data.examples.size(), cfg, on_epoch, [&](std::span<const std::size_t> idx, Rng&) {
    batch_ex.clear();
    batch_lat.clear();
    for (auto i : idx) {
      batch_ex.push_back(data.examples[i]);
      batch_lat.push_back(latents[i]);
    }
    SftBatch b = build_sft_batch(batch_ex, batch_lat, proj, lm, vocab);
    return masked_cross_entropy(lm.forward_embeddings(b.embeds, b.segments), b.targets, b.mask);
  });
}

namespace {

void require_stack(const Stack& s) {
  if (!s.encoder || !s.projector || !s.lm || !s.vocab) fail(ErrorKind::kState, "inference stack is incomplete");
}

Tensor prefix_embeddings(const Stack& stack, const LatentSeq& latents, const std::string& system_prompt) {
  if (latents.length() == 0) fail(ErrorKind::kInvalidArgument, "inference: empty input");
  const PromptIds p = prompt_ids(system_prompt, *stack.vocab);
  const Tensor parts[] = {stack.lm->embed(p.head), (*stack.projector)(latents.values), stack.lm->embed(p.tail)};
  return concat_rows(parts);
}

}  // namespace

Generation generate_from_latents(const Stack& stack, const LatentSeq& latents, const std::string& system_prompt,
                                 std::size_t max_new) {
  require_stack(stack);
  NoGradGuard no_grad;
  Generation g;
  g.ids = stack.lm->generate(prefix_embeddings(stack, latents, system_prompt), max_new);
  g.text = decode(g.ids, *stack.vocab);
  g.words = normalize_words(g.text);
  return g;
}

Generation infer(const Stack& stack, const TokenSeq& text, const std::string& system_prompt, std::size_t max_new) {
  require_stack(stack);
  return generate_from_latents(stack, stack.encoder->encode_text(text), system_prompt, max_new);
}

Generation infer(const Stack& stack, const AcousticSeq& speech, const std::string& system_prompt,
                 std::size_t max_new) {
  require_stack(stack);
  return generate_from_latents(stack, stack.encoder->encode_speech(speech), system_prompt, max_new);
}

double response_ce(const Stack& stack, const LatentSeq& latents, const std::string& system_prompt,
                   const std::vector<int>& response) {
  require_stack(stack);
  NoGradGuard no_grad;
  SftRows rows;
  rows.append(prompt_ids(system_prompt, *stack.vocab), latents.length(), response);
  Tensor embeds = splice(*stack.lm, *stack.projector, rows.inputs, std::span<const LatentSeq>(&latents, 1),
                         rows.query_rows);
  return masked_cross_entropy(stack.lm->forward_embeddings(embeds), rows.targets, rows.mask).item();
}

}  // namespace tesu
