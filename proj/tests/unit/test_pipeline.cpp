#include <algorithm>
#include <cmath>
#include <vector>

#include "support.hpp"
#include "tesu/pipeline.hpp"
#include "tesu/synthspeech.hpp"

using namespace tesu;

namespace {

struct TinyStack {
  Vocab vocab;
  UnifiedEncoder enc;
  DecoderLM lm;
  Projector proj;
  std::vector<std::string> sentences;

  TinyStack() {
    sentences = {"the red fox runs to the old barn", "a small dog sees the red fox",
                 "the old barn stands near a small river", "a dog runs", "the fox sleeps near the river",
                 "what color is the fox", "the fox is red"};
    std::vector<std::string> corpus = sentences;
    corpus.push_back(kRepetitionPrompt);
    corpus.push_back(kInstructionPrompt);
    corpus.push_back(std::string(kUserMarker) + " " + kAssistantMarker);
    vocab = build_vocab(corpus, 200);
    EncoderConfig ec;
    ec.vocab_size = vocab.size();
    ec.text_dim = 16;
    ec.latent_dim = 12;
    ec.encoder_blocks = 1;
    ec.mapper_blocks = 1;
    ec.heads = 2;
    ec.mlp_ratio = 2;
    enc = UnifiedEncoder::init(ec, 1);
    LmConfig lc;
    lc.vocab_size = vocab.size();
    lc.model_dim = 16;
    lc.blocks = 1;
    lc.heads = 2;
    lc.context = 64;
    lc.mlp_ratio = 2;
    lm = DecoderLM::init(lc, 2);
    proj = Projector::init(ProjectorConfig{12, 20, 16}, 3);
  }

  std::vector<TokenSeq> framed() const {
    std::vector<TokenSeq> out;
    for (const auto& s : sentences) out.push_back(encode(s, vocab, true));
    return out;
  }
};

bool same(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

std::string component_bytes(const NamedTensors& named) {
  Checkpoint c;
  for (const auto& [n, t] : named) c.tensors.emplace_back(n, t);
  return serialize_checkpoint(c);
}

}  // namespace

TEST_CASE("span sampler edge cases") {
  Rng rng(1);
  CHECK(sample_spans(2, rng).empty());
  CHECK(sample_spans(0, rng).empty());
  SpanParams forced;
  forced.attempts = 200;
  const SpanPlan one = sample_spans(3, rng, forced);
  REQUIRE(one.spans.size() == 1);
  CHECK(one.spans[0] == Span{0, 3});
  SpanParams bad;
  bad.min_length = 5;
  bad.max_length = 4;
  CHECK_KIND(sample_spans(10, rng, bad), ErrorKind::kConfig);
}

TEST_CASE("span sampler statistics over 10k draws") {
  Rng rng(2);
  std::vector<double> hist(8, 0.0);
  std::size_t spans = 0;
  const SpanParams params;
  for (int draw = 0; draw < 10000; ++draw) {
    const SpanPlan plan = sample_spans(200, rng, params.max_spans, params.min_gap);
    CHECK(plan.spans.size() <= params.max_spans);
    for (std::size_t i = 0; i < plan.spans.size(); ++i) {
      const Span& a = plan.spans[i];
      REQUIRE(a.length >= 3);
      REQUIRE(a.length <= 10);
      REQUIRE(a.end() <= 200);
      hist[a.length - 3] += 1.0;
      ++spans;
      for (std::size_t j = 0; j < plan.spans.size(); ++j) {
        if (i == j) continue;
        const Span& b = plan.spans[j];
        // disjoint and at least min_gap apart, checked on every ordered pair
        REQUIRE((a.end() + params.min_gap <= b.start || b.end() + params.min_gap <= a.start));
      }
      if (i > 0) CHECK(plan.spans[i - 1].start < a.start);
    }
  }
  const double expected = static_cast<double>(spans) / 8.0;
  double chi2 = 0.0;
  for (double h : hist) chi2 += (h - expected) * (h - expected) / expected;
  // chi-square critical value for 7 degrees of freedom at p = 0.01
  CHECK(chi2 < 18.475);
}

TEST_CASE("interleaved batch masks") {
  TinyStack s;
  const TokenSeq three = encode("a dog runs", s.vocab, true);

  SUBCASE("empty plan is a plain LM example") {
    const InterleavedBatch b = build_interleaved(three, SpanPlan{}, s.enc, s.proj, s.lm);
    CHECK(b.mask == std::vector<std::uint8_t>{1, 1, 1, 1});
    CHECK(b.injected_rows == 0);
    const std::vector<int> inputs(three.ids.begin(), three.ids.end() - 1);
    CHECK(same(b.embeds, s.lm.embed(inputs)));
    CHECK(b.targets == std::vector<int>(three.ids.begin() + 1, three.ids.end()));
  }
  SUBCASE("full-coverage span on three words") {
    const InterleavedBatch b = build_interleaved(three, SpanPlan{{{0, 3}}}, s.enc, s.proj, s.lm);
    // targets are w0 w1 w2 EOS; only EOS lies outside the span
    CHECK(b.mask == std::vector<std::uint8_t>{0, 0, 0, 1});
    CHECK(b.injected_rows == 3);
    CHECK(b.embeds.rows() == three.size() - 1);
  }
  SUBCASE("interior span keeps the exit target supervised") {
    const TokenSeq t = encode("the red fox runs to the old barn", s.vocab, true);
    const InterleavedBatch b = build_interleaved(t, SpanPlan{{{2, 3}}}, s.enc, s.proj, s.lm);
    CHECK(b.mask == std::vector<std::uint8_t>{1, 1, 0, 0, 0, 1, 1, 1, 1});
    CHECK(b.embeds.rows() == t.size() - 1);
  }
  SUBCASE("invalid inputs") {
    CHECK_KIND(build_interleaved(encode("a dog runs", s.vocab), SpanPlan{}, s.enc, s.proj, s.lm),
               ErrorKind::kInvalidArgument);
    CHECK_KIND(build_interleaved(three, SpanPlan{{{1, 3}}}, s.enc, s.proj, s.lm), ErrorKind::kInvalidArgument);
  }
}

TEST_CASE("splice identity with an empty plan") {
  TinyStack s;
  const TokenSeq t = encode("the red fox runs to the old barn", s.vocab, true);
  const InterleavedBatch b = build_interleaved(t, SpanPlan{}, s.enc, s.proj, s.lm);
  const Tensor spliced = masked_cross_entropy(s.lm.forward_embeddings(b.embeds, b.segments), b.targets, b.mask);
  const std::vector<int> inputs(t.ids.begin(), t.ids.end() - 1);
  const std::vector<int> targets(t.ids.begin() + 1, t.ids.end());
  CHECK(spliced.item() == cross_entropy(s.lm.forward_tokens(inputs), targets).item());
}

TEST_CASE("zero-init projector injects zero vectors") {
  TinyStack s;
  const TokenSeq t = encode("the old barn stands near a small river", s.vocab, true);
  const SpanPlan plan{{{1, 3}, {5, 3}}};
  const InterleavedBatch b = build_interleaved(t, plan, s.enc, s.proj, s.lm);
  const double spliced = masked_cross_entropy(s.lm.forward_embeddings(b.embeds, b.segments), b.targets, b.mask).item();

  // independent construction: native embeddings with span rows zeroed
  const std::vector<int> inputs(t.ids.begin(), t.ids.end() - 1);
  Tensor embeds = s.lm.embed(inputs).clone();
  std::vector<std::uint8_t> mask(inputs.size(), 1);
  for (const Span& sp : plan.spans) {
    for (std::size_t w = sp.start; w < sp.end(); ++w) {
      for (std::size_t j = 0; j < embeds.cols(); ++j) embeds.at(w + 1, j) = 0;
      mask[w] = 0;
    }
  }
  const std::vector<int> targets(t.ids.begin() + 1, t.ids.end());
  const double plain = masked_cross_entropy(s.lm.forward_embeddings(embeds), targets, mask).item();
  CHECK(std::abs(spliced - plain) < 1e-5);
}

TEST_CASE("projector gradients vanish without spans") {
  TinyStack s;
  auto named = s.proj.parameters();
  auto lm_params = s.lm.parameters();
  nn::set_trainable(named, true);
  // the LM is made trainable only so the tape has something to differentiate
  nn::set_trainable(lm_params, true);
  const auto texts = s.framed();
  const std::vector<SpanPlan> plans(texts.size());
  Tape tape;
  {
    TapeGuard guard(tape);
    const InterleavedBatch b = build_interleaved(texts, plans, s.enc, s.proj, s.lm);
    tape.backward(masked_cross_entropy(s.lm.forward_embeddings(b.embeds, b.segments), b.targets, b.mask));
  }
  bool lm_touched = false;
  for (const auto& [name, t] : lm_params) {
    for (Real g : t.grad()) lm_touched = lm_touched || g != 0;
  }
  CHECK(lm_touched);
  for (const auto& [name, t] : named) {
    for (Real g : t.grad()) CHECK(g == 0);
  }
  nn::set_trainable(named, false);
  nn::set_trainable(lm_params, false);
}

TEST_CASE("learning-rate schedule") {
  ScheduleCfg cfg{1e-4, 0.03, 1000, 64, 3};
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(warmup_steps(cfg) == 30);
  CHECK(lr_at(30, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(15, cfg) == doctest::Approx(0.5e-4));
  CHECK(std::abs(lr_at(1000, cfg)) < 1e-12);
  CHECK(lr_at(515, cfg) == doctest::Approx(0.5e-4));
  for (std::size_t k = 31; k <= 1000; ++k) CHECK(lr_at(k, cfg) <= lr_at(k - 1, cfg));
  CHECK_KIND(lr_at(1001, cfg), ErrorKind::kInvalidArgument);
  cfg.warmup_frac = 1.0;
  CHECK_KIND(lr_at(0, cfg), ErrorKind::kConfig);
}

TEST_CASE("projector pretraining isolation and determinism") {
  TinyStack s;
  const auto docs = s.framed();
  StageConfig cfg;
  cfg.schedule = ScheduleCfg{1e-3, 0.03, 1, 4, 2};
  cfg.spans.min_length = 1;
  cfg.spans.max_length = 3;

  const std::string enc_before = component_bytes(s.enc.parameters());
  const std::string lm_before = component_bytes(s.lm.parameters());
  const auto speech_before = speech_encoder_invocations();
  const auto synth_before = synth_invocations();

  Projector a = Projector::init(s.proj.config(), 3), b = Projector::init(s.proj.config(), 3);
  const StageReport ra = pretrain_projector(a, docs, s.enc, s.lm, cfg);
  const StageReport rb = pretrain_projector(b, docs, s.enc, s.lm, cfg);
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(serialize_checkpoint(a.to_checkpoint()) == serialize_checkpoint(b.to_checkpoint()));
  CHECK(serialize_checkpoint(a.to_checkpoint()) != serialize_checkpoint(s.proj.to_checkpoint()));
  CHECK(ra.steps == 4);

  CHECK(component_bytes(s.enc.parameters()) == enc_before);
  CHECK(component_bytes(s.lm.parameters()) == lm_before);
  CHECK(speech_encoder_invocations() == speech_before);
  CHECK(synth_invocations() == synth_before);
  for (const auto& [name, t] : a.parameters()) CHECK(!t.requires_grad());
}

TEST_CASE("projector stages require frozen components") {
  TinyStack s;
  nn::set_trainable(s.lm.parameters(), true);
  CHECK_KIND(pretrain_projector(s.proj, s.framed(), s.enc, s.lm, StageConfig{}), ErrorKind::kState);
}

TEST_CASE("fully covered documents still supervise EOS") {
  TinyStack s;
  const std::vector<TokenSeq> docs = {encode("a dog runs", s.vocab, true)};
  StageConfig cfg;
  cfg.schedule = ScheduleCfg{1e-3, 0.0, 1, 1, 1};
  cfg.spans.max_length = 3;
  cfg.spans.attempts = 200;
  const StageReport r = pretrain_projector(s.proj, docs, s.enc, s.lm, cfg);
  CHECK(r.skipped_batches == 0);
  CHECK(r.steps == 1);
}

TEST_CASE("sft dataset construction") {
  TinyStack s;
  const std::vector<InstructionPair> instr = {{"what color is the fox", "the fox is red"}};
  const std::vector<std::string> rep = {"Open the door.", "a dog runs"};

  SUBCASE("repetition response is the normalized query") {
    Rng rng(4);
    const SftDataset d = build_sft_dataset({}, std::vector<std::string>{"Open the door."}, 1.0, 3, s.vocab, s.lm, rng);
    for (const auto& e : d.examples) {
      CHECK(e.kind == SftKind::kRepetition);
      CHECK(e.system_prompt == kRepetitionPrompt);
      CHECK(e.query == "open the door");
      CHECK(e.response == "open the door");
      CHECK(encode(e.response, s.vocab).ids == encode("open the door", s.vocab).ids);
    }
  }
  SUBCASE("mix ratio within a binomial bound") {
    Rng rng(5);
    const SftDataset d = build_sft_dataset(instr, rep, 0.5, 1000, s.vocab, s.lm, rng);
    CHECK(d.repetition_count + d.instruction_count == 1000);
    // 4 standard deviations of Binomial(1000, 0.5)
    CHECK(std::abs(static_cast<double>(d.repetition_count) - 500.0) < 4.0 * std::sqrt(250.0));
  }
  SUBCASE("instruction responses are deterministic under a fixed LM") {
    Rng r1(6), r2(6);
    const SftDataset a = build_sft_dataset(instr, {}, 0.0, 5, s.vocab, s.lm, r1);
    const SftDataset b = build_sft_dataset(instr, {}, 0.0, 5, s.vocab, s.lm, r2);
    CHECK(a.repetition_source_empty);
    REQUIRE(a.examples.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(a.examples[i].response == b.examples[i].response);
      CHECK(!a.examples[i].response.empty());
      CHECK(a.examples[i].system_prompt == kInstructionPrompt);
    }
  }
  SUBCASE("argument checks") {
    Rng rng(7);
    CHECK_KIND(build_sft_dataset({}, {}, 0.5, 10, s.vocab, s.lm, rng), ErrorKind::kInvalidArgument);
    CHECK_KIND(build_sft_dataset(instr, rep, 1.5, 10, s.vocab, s.lm, rng), ErrorKind::kConfig);
  }
  SUBCASE("jsonl round trip") {
    Rng rng(8);
    const SftDataset d = build_sft_dataset(instr, rep, 0.5, 20, s.vocab, s.lm, rng);
    const auto dir = testing::scratch_dir("sft");
    save_sft_dataset(dir / "d.jsonl", d);
    const SftDataset back = load_sft_dataset(dir / "d.jsonl");
    REQUIRE(back.examples.size() == d.examples.size());
    CHECK(back.repetition_count == d.repetition_count);
    for (std::size_t i = 0; i < d.examples.size(); ++i) {
      CHECK(back.examples[i].kind == d.examples[i].kind);
      CHECK(back.examples[i].query == d.examples[i].query);
      CHECK(back.examples[i].response == d.examples[i].response);
    }
  }
}

TEST_CASE("sft batch supervises only the response") {
  TinyStack s;
  const SftExample e{SftKind::kRepetition, kRepetitionPrompt, "a dog runs", "a dog runs"};
  const LatentSeq lat = s.enc.encode_text(encode(e.query, s.vocab));
  const SftBatch b = build_sft_batch(std::span<const SftExample>(&e, 1), std::span<const LatentSeq>(&lat, 1), s.proj,
                                     s.lm, s.vocab);
  const PromptIds p = prompt_ids(kRepetitionPrompt, s.vocab);
  const std::size_t head = p.head.size(), q = lat.length(), tail = p.tail.size(), resp = 3;
  REQUIRE(b.mask.size() == head + q + tail + resp);
  for (std::size_t i = 0; i < b.mask.size(); ++i) {
    // input row i predicts sequence position i + 1
    const bool supervised = i + 1 >= head + q + tail;
    CHECK(b.mask[i] == (supervised ? 1 : 0));
  }
  CHECK(b.targets.back() == kEosId);
  // zero-init projector: query rows are exactly zero
  for (std::size_t r = head; r < head + q; ++r) {
    for (std::size_t j = 0; j < b.embeds.cols(); ++j) CHECK(b.embeds.at(r, j) == 0);
  }
}

TEST_CASE("sft with an empty repetition source still trains") {
  TinyStack s;
  Rng rng(9);
  const std::vector<InstructionPair> instr = {{"what color is the fox", "the fox is red"}};
  const SftDataset d = build_sft_dataset(instr, {}, 0.8, 8, s.vocab, s.lm, rng);
  CHECK(d.repetition_source_empty);
  const std::string lm_before = component_bytes(s.lm.parameters());
  const std::string enc_before = component_bytes(s.enc.parameters());
  const auto speech_before = speech_encoder_invocations();
  StageConfig cfg;
  cfg.schedule = ScheduleCfg{1e-3, 0.03, 1, 4, 2};
  const StageReport r = sft(s.proj, d, s.enc, s.lm, s.vocab, cfg);
  CHECK(r.steps == 4);
  CHECK(component_bytes(s.lm.parameters()) == lm_before);
  CHECK(component_bytes(s.enc.parameters()) == enc_before);
  CHECK(speech_encoder_invocations() == speech_before);
}

TEST_CASE("identical latents give identical generations") {
  TinyStack s;
  const Stack st{&s.enc, &s.proj, &s.lm, &s.vocab};
  const TokenSeq t = encode("the red fox runs", s.vocab);
  const LatentSeq lat = s.enc.encode_text(t);
  const LatentSeq copy{lat.values.clone()};
  CHECK(generate_from_latents(st, lat, kRepetitionPrompt).ids == generate_from_latents(st, copy, kRepetitionPrompt).ids);
  CHECK(infer(st, t).ids == generate_from_latents(st, lat, kRepetitionPrompt).ids);
  const Stack partial{&s.enc, nullptr, &s.lm, &s.vocab};
  CHECK_KIND(infer(partial, t), ErrorKind::kState);
}
