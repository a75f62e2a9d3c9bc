#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tesu/corpus.hpp"
#include "tesu/lm.hpp"
#include "tesu/projector.hpp"
#include "tesu/rng.hpp"
#include "tesu/schedule.hpp"
#include "tesu/unified_encoder.hpp"

namespace tesu {

struct Span {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t end() const { return start + length; }
  bool operator==(const Span&) const = default;
};

// Sorted, pairwise disjoint word spans.
struct SpanPlan {
  std::vector<Span> spans;
  bool empty() const { return spans.empty(); }
  std::size_t covered() const;
};

struct SpanParams {
  std::size_t min_length = 3;
  std::size_t max_length = 10;
  std::size_t max_spans = 3;
  std::size_t min_gap = 2;
  std::size_t attempts = 0;  // 0: 2 * max_spans
};

bool plan_valid(const SpanPlan& plan, std::size_t word_count, const SpanParams& params = {});

// Each attempt draws a length uniformly, then a start uniformly among the
// placements that stay in bounds and keep min_gap words from accepted spans;
// an attempt with no placement is rejected.
SpanPlan sample_spans(std::size_t word_count, Rng& rng, const SpanParams& params = {});
SpanPlan sample_spans(std::size_t word_count, Rng& rng, std::size_t max_spans, std::size_t min_gap);

// Packed LM inputs with projector rows spliced in. Texts are framed
// ([BOS] words [EOS]); input row p predicts targets[p].
struct InterleavedBatch {
  Tensor embeds;
  Segments segments;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  std::size_t injected_rows = 0;

  std::size_t supervised() const;
};

// Span rows carry proj(encode_text(span words)); a target is masked iff the
// target word lies inside a span.
InterleavedBatch build_interleaved(std::span<const TokenSeq> texts, std::span<const SpanPlan> plans,
                                   const UnifiedEncoder& enc, const Projector& proj, const DecoderLM& lm);
InterleavedBatch build_interleaved(const TokenSeq& text, const SpanPlan& plan, const UnifiedEncoder& enc,
                                   const Projector& proj, const DecoderLM& lm);

struct StageConfig {
  ScheduleCfg schedule{1e-4, 0.03, 1, 64, 3};
  double clip = 1.0;
  std::uint64_t seed = 17;
  SpanParams spans;
};

struct StageReport {
  std::vector<double> epoch_loss;
  double first_step_loss = 0.0;
  std::size_t steps = 0;
  std::size_t skipped_batches = 0;
};

using StageCallback = std::function<void(std::size_t epoch, double loss)>;

// Trains only the projector. Encoder and LM must already be frozen.
StageReport pretrain_projector(Projector& proj, std::span<const TokenSeq> documents,
                               const UnifiedEncoder& enc, const DecoderLM& lm, const StageConfig& cfg,
                               const StageCallback& on_epoch = {});

enum class SftKind { kRepetition, kInstruction };

const char* sft_kind_name(SftKind kind);

struct SftExample {
  SftKind kind = SftKind::kRepetition;
  std::string system_prompt;
  std::string query;
  std::string response;
};

struct SftDataset {
  std::vector<SftExample> examples;
  std::size_t repetition_count = 0;
  std::size_t instruction_count = 0;
  std::size_t fallback_responses = 0;
  bool repetition_source_empty = false;
};

// mix_ratio is the probability of a repetition example. Instruction responses
// are regenerated by greedy decoding of the frozen LM from the native prompt.
SftDataset build_sft_dataset(std::span<const InstructionPair> instructions,
                             std::span<const std::string> repetition, double mix_ratio, std::size_t count,
                             const Vocab& vocab, const DecoderLM& lm, Rng& rng);

// One JSON record per line: {type, system_prompt, query, response}.
void save_sft_dataset(const std::filesystem::path& path, const SftDataset& data);
SftDataset load_sft_dataset(const std::filesystem::path& path);

// Native ids of "[BOS] prompt user" and "assistant".
struct PromptIds {
  std::vector<int> head;
  std::vector<int> tail;
};
PromptIds prompt_ids(const std::string& system_prompt, const Vocab& vocab);

// Teacher-forced SFT sequence: prompt head, projected query rows, prompt
// tail, response, EOS. Only response and EOS targets are supervised.
struct SftBatch {
  Tensor embeds;
  Segments segments;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
};

SftBatch build_sft_batch(std::span<const SftExample> examples, std::span<const LatentSeq> query_latents,
                         const Projector& proj, const DecoderLM& lm, const Vocab& vocab);

StageReport sft(Projector& proj, const SftDataset& data, const UnifiedEncoder& enc, const DecoderLM& lm,
                const Vocab& vocab, const StageConfig& cfg, const StageCallback& on_epoch = {});

struct Stack {
  const UnifiedEncoder* encoder = nullptr;
  const Projector* projector = nullptr;
  const DecoderLM* lm = nullptr;
  const Vocab* vocab = nullptr;
};

struct Generation {
  std::vector<int> ids;
  std::vector<std::string> words;
  std::string text;
};

Generation generate_from_latents(const Stack& stack, const LatentSeq& latents, const std::string& system_prompt,
                                 std::size_t max_new = 32);
Generation infer(const Stack& stack, const TokenSeq& text, const std::string& system_prompt = kRepetitionPrompt,
                 std::size_t max_new = 32);
Generation infer(const Stack& stack, const AcousticSeq& speech, const std::string& system_prompt = kRepetitionPrompt,
                 std::size_t max_new = 32);

// Mean teacher-forced CE (nats/token) of `response` given the latents.
double response_ce(const Stack& stack, const LatentSeq& latents, const std::string& system_prompt,
                   const std::vector<int>& response);

}  // namespace tesu
