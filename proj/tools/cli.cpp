#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <ostream>

#include "tesu/binio.hpp"
#include "tesu/checkpoint.hpp"
#include "tesu/corpus.hpp"
#include "tesu/eval.hpp"
#include "tesu/pipeline.hpp"

namespace tesu::cli {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path Layout::unified(bool control) const {
  return root / "checkpoints" / (control ? "unified_control.ckpt" : "unified.ckpt");
}
fs::path Layout::projector_pretrain(bool control) const {
  return root / "checkpoints" / (control ? "projector_pretrain_control.ckpt" : "projector_pretrain.ckpt");
}
fs::path Layout::projector(bool control) const {
  return root / "checkpoints" / (control ? "projector_control.ckpt" : "projector.ckpt");
}
fs::path Layout::report(const std::string& name, const char* ext) const {
  return root / "reports" / (name + "." + ext);
}

int exit_code(ErrorKind kind) { return 10 + static_cast<int>(kind); }

namespace {

struct Context {
  RunConfig cfg;
  std::uint64_t hash = 0;
  Layout layout;
  bool allow_mixed = false;
  std::ostream* out = nullptr;

  std::ostream& log() const { return *out; }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void require_file(const fs::path& path, const char* stage) {
  if (!fs::exists(path)) {
    fail(ErrorKind::kDependency,
         "missing " + path.string() + "; run `tesu " + stage + "` first");
  }
}

void check_hash(const Context& ctx, std::optional<std::uint64_t> found, const fs::path& path, const char* stage) {
  if (found && *found == ctx.hash) return;
  if (ctx.allow_mixed) {
    ctx.log() << "warning: " << path.string() << " comes from a different config (mixed chain allowed)\n";
    return;
  }
  fail(ErrorKind::kDependency, path.string() + " was produced by config " + (found ? hash_hex(*found) : "<none>") +
                                   ", current config is " + hash_hex(ctx.hash) + "; rerun `tesu " + stage +
                                   "` or pass --allow-mixed");
}

Checkpoint load_stage(const Context& ctx, const fs::path& path, const char* stage) {
  require_file(path, stage);
  Checkpoint ckpt = load_checkpoint(path);
  check_hash(ctx, config_hash(ckpt), path, stage);
  return ckpt;
}

void save_stage(const Context& ctx, const fs::path& path, Checkpoint ckpt) {
  set_config_hash(ckpt, ctx.hash);
  save_checkpoint(path, ckpt);
  ctx.log() << "wrote " << path.string() << "\n";
}

struct CurveWriter {
  std::string text;
  std::string hash;
  explicit CurveWriter(std::uint64_t h, const std::string& columns)
      : text("epoch," + columns + ",config_hash\n"), hash(hash_hex(h)) {}
  void row(std::size_t epoch, std::initializer_list<double> values) {
    text += std::to_string(epoch);
    for (double v : values) text += "," + fmt(v, 6);
    text += "," + hash + "\n";
  }
};

struct Loaded {
  Corpus corpus;
  Vocab vocab;
};

Loaded load_corpus_checked(const Context& ctx) {
  require_file(ctx.layout.corpus_manifest(), "gen-corpus");
  json manifest;
  try {
    manifest = json::parse(binio::read_file(ctx.layout.corpus_manifest()));
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("corpus manifest: ") + e.what());
  }
  std::optional<std::uint64_t> found;
  if (manifest.contains("config_hash")) found = std::stoull(manifest["config_hash"].get<std::string>(), nullptr, 16);
  check_hash(ctx, found, ctx.layout.corpus_manifest(), "gen-corpus");
  return {load_corpus(ctx.layout.corpus_dir()), Vocab::load(ctx.layout.vocab())};
}

EncoderConfig encoder_config(const Context& ctx, const Vocab& vocab) {
  EncoderConfig c = ctx.cfg.encoder;
  c.vocab_size = vocab.size();
  return c;
}

LmConfig lm_config(const Context& ctx, const Vocab& vocab) {
  LmConfig c = ctx.cfg.lm;
  c.vocab_size = vocab.size();
  return c;
}

std::vector<TokenSeq> encode_all(const std::vector<std::string>& lines, const Vocab& vocab, bool frame) {
  std::vector<TokenSeq> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(encode(l, vocab, frame));
  return out;
}

std::vector<std::string> head(const std::vector<std::string>& v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<long>(std::min(n, v.size()))};
}

double heldout_cosine(const Context& ctx, const UnifiedEncoder& enc, const Loaded& data) {
  const auto sentences = head(data.corpus.heldout, ctx.cfg.eval.heldout_count);
  double sum = 0.0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const TokenSeq tok = encode(sentences[i], data.vocab);
    const AcousticSeq sp =
        render(tok, Rng::derive(ctx.cfg.eval.noise_seed, i), ctx.cfg.synth.sigma, ctx.cfg.synth.frames_per_token,
               ctx.cfg.synth);
    sum += alignment_residual(enc, tok, sp).mean_cosine;
  }
  return sum / static_cast<double>(sentences.size());
}

// ---- stages -------------------------------------------------------------

void cmd_gen_corpus(const Context& ctx) {
  const Corpus corpus = generate_corpus(ctx.cfg.corpus);
  save_corpus(corpus, ctx.layout.corpus_dir());
  const Vocab vocab = build_vocab(corpus.vocabulary_text, ctx.cfg.vocab_max);
  vocab.save(ctx.layout.vocab());
  json manifest = {{"config_hash", hash_hex(ctx.hash)},
                   {"documents", corpus.documents.size()},
                   {"align", corpus.align.size()},
                   {"heldout", corpus.heldout.size()},
                   {"repetition", corpus.repetition.size()},
                   {"lm_repetition", corpus.lm_repetition.size()},
                   {"instructions", corpus.instructions.size()},
                   {"vocab_size", vocab.size()}};
  binio::write_file(ctx.layout.corpus_manifest(), manifest.dump(2) + "\n");
  ctx.log() << "corpus: " << corpus.documents.size() << " documents, " << corpus.align.size() << " alignment, "
            << corpus.heldout.size() << " held-out, " << corpus.repetition.size() << " repetition sentences; vocab "
            << vocab.size() << "\n";
}

void cmd_render(const Context& ctx, const std::string& text, const fs::path& out_path, double sigma,
                std::uint64_t seed) {
  const Vocab vocab = [&] {
    require_file(ctx.layout.vocab(), "gen-corpus");
    return Vocab::load(ctx.layout.vocab());
  }();
  const TokenSeq tok = encode(text, vocab);
  if (tok.empty()) fail(ErrorKind::kInvalidArgument, "render: empty text");
  const AcousticSeq seq = render(tok, seed, sigma, ctx.cfg.synth.frames_per_token, ctx.cfg.synth);
  save_frames(out_path, seq);
  ctx.log() << "wrote " << seq.frame_count() << " frames x " << ctx.cfg.synth.feature_dim << " to "
            << out_path.string() << "\n";
}

void cmd_train_unified(const Context& ctx, bool control) {
  const Loaded data = load_corpus_checked(ctx);
  UnifiedEncoder enc = UnifiedEncoder::init(encoder_config(ctx, data.vocab), ctx.cfg.encoder_seed);
  AlignConfig ac = ctx.cfg.align;
  ac.objective = control ? AlignObjective::kControl : AlignObjective::kAligned;
  const auto sentences = encode_all(data.corpus.align, data.vocab, false);
  const std::string stage = control ? "train-unified-control" : "train-unified";
  ctx.log() << "[" << stage << "] baseline held-out cosine " << fmt(heldout_cosine(ctx, enc, data)) << "\n";
  CurveWriter curve(ctx.hash, "loss,mse,contrastive");
  const AlignReport rep = train_alignment(enc, sentences, ac, ctx.cfg.synth, [&](std::size_t e, double loss) {
    ctx.log() << "[" << stage << "] epoch " << e + 1 << "/" << ac.epochs << " loss " << fmt(loss) << "\n";
  });
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) {
    curve.row(e + 1, {rep.epoch_loss[e], rep.epoch_mse[e], rep.epoch_contrastive[e]});
  }
  ctx.log() << "[" << stage << "] held-out cosine " << fmt(heldout_cosine(ctx, enc, data)) << "\n";
  binio::write_file(ctx.layout.curve(control ? "unified_control" : "unified"), curve.text);
  save_stage(ctx, ctx.layout.unified(control), enc.to_checkpoint());
}

void cmd_train_lm(const Context& ctx) {
  const Loaded data = load_corpus_checked(ctx);
  std::vector<std::vector<int>> train, heldout;
  for (const auto& d : data.corpus.documents) train.push_back(encode(d, data.vocab, true).ids);
  for (const auto& s : data.corpus.lm_repetition) {
    train.push_back(encode(dialog_text(kRepetitionPrompt, s, s), data.vocab, true).ids);
  }
  Rng rng(Rng::derive(ctx.cfg.corpus.seed, 7));
  const auto& instr = data.corpus.instructions;
  for (std::size_t i = 0; i < ctx.cfg.corpus.lm_instruction_dialogs && !instr.empty(); ++i) {
    const auto& p = instr[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(instr.size()) - 1))];
    train.push_back(encode(dialog_text(kInstructionPrompt, p.query, p.response), data.vocab, true).ids);
  }
  for (const auto& s : head(data.corpus.heldout, ctx.cfg.eval.heldout_count)) {
    heldout.push_back(encode(dialog_text(kRepetitionPrompt, s, s), data.vocab, true).ids);
  }
  DecoderLM lm = DecoderLM::init(lm_config(ctx, data.vocab), ctx.cfg.lm_seed);
  CurveWriter curve(ctx.hash, "loss");
  const auto epochs = ctx.cfg.lm_train.schedule.epochs;
  const LmTrainReport rep = pretrain_lm(lm, train, heldout, ctx.cfg.lm_train, [&](std::size_t e, double loss) {
    ctx.log() << "[train-lm] epoch " << e + 1 << "/" << epochs << " loss " << fmt(loss) << "\n";
  });
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) curve.row(e + 1, {rep.epoch_loss[e]});
  ctx.log() << "[train-lm] " << train.size() << " sequences, " << rep.truncated_sequences
            << " truncated; held-out perplexity " << fmt(rep.heldout_perplexity) << "\n";
  binio::write_file(ctx.layout.curve("lm"), curve.text);
  save_stage(ctx, ctx.layout.lm(), lm.to_checkpoint());
}

struct Frozen {
  UnifiedEncoder enc;
  DecoderLM lm;
};

Frozen load_frozen(const Context& ctx, const Vocab& vocab, bool control) {
  return {UnifiedEncoder::from_checkpoint(
              load_stage(ctx, ctx.layout.unified(control), control ? "train-unified --control" : "train-unified"),
              encoder_config(ctx, vocab)),
          DecoderLM::from_checkpoint(load_stage(ctx, ctx.layout.lm(), "train-lm"), lm_config(ctx, vocab))};
}

void cmd_pretrain(const Context& ctx, bool control) {
  const Loaded data = load_corpus_checked(ctx);
  const Frozen f = load_frozen(ctx, data.vocab, control);
  Projector proj = Projector::init(ctx.cfg.projector, ctx.cfg.projector_seed);
  const auto docs = encode_all(data.corpus.documents, data.vocab, true);
  const std::string stage = control ? "pretrain-control" : "pretrain";
  const auto epochs = ctx.cfg.pretrain.schedule.epochs;
  const StageReport rep = pretrain_projector(proj, docs, f.enc, f.lm, ctx.cfg.pretrain, [&](std::size_t e, double l) {
    ctx.log() << "[" << stage << "] epoch " << e + 1 << "/" << epochs << " loss " << fmt(l) << "\n";
  });
  CurveWriter curve(ctx.hash, "loss");
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) curve.row(e + 1, {rep.epoch_loss[e]});
  ctx.log() << "[" << stage << "] " << rep.steps << " steps, " << rep.skipped_batches << " skipped batches\n";
  binio::write_file(ctx.layout.curve(control ? "pretrain_control" : "pretrain"), curve.text);
  save_stage(ctx, ctx.layout.projector_pretrain(control), proj.to_checkpoint());
}

void cmd_sft(const Context& ctx, bool control) {
  const Loaded data = load_corpus_checked(ctx);
  const Frozen f = load_frozen(ctx, data.vocab, control);
  Projector proj = Projector::from_checkpoint(
      load_stage(ctx, ctx.layout.projector_pretrain(control), control ? "pretrain --control" : "pretrain"),
      ctx.cfg.projector);
  Rng rng(ctx.cfg.sft.data_seed);
  const SftDataset dataset = build_sft_dataset(data.corpus.instructions, data.corpus.repetition, ctx.cfg.sft.mix_ratio,
                                               ctx.cfg.sft.examples, data.vocab, f.lm, rng);
  save_sft_dataset(ctx.layout.sft_data(), dataset);
  const std::string stage = control ? "sft-control" : "sft";
  ctx.log() << "[" << stage << "] " << dataset.repetition_count << " repetition, " << dataset.instruction_count
            << " instruction examples";
  if (dataset.repetition_source_empty) ctx.log() << " (repetition source empty)";
  if (dataset.fallback_responses) ctx.log() << ", " << dataset.fallback_responses << " template fallbacks";
  ctx.log() << "\n";
  const auto epochs = ctx.cfg.sft.stage.schedule.epochs;
  const StageReport rep = sft(proj, dataset, f.enc, f.lm, data.vocab, ctx.cfg.sft.stage, [&](std::size_t e, double l) {
    ctx.log() << "[" << stage << "] epoch " << e + 1 << "/" << epochs << " loss " << fmt(l) << "\n";
  });
  CurveWriter curve(ctx.hash, "loss");
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) curve.row(e + 1, {rep.epoch_loss[e]});
  binio::write_file(ctx.layout.curve(control ? "sft_control" : "sft"), curve.text);
  save_stage(ctx, ctx.layout.projector(control), proj.to_checkpoint());
}

struct LoadedStack {
  Frozen frozen;
  Projector projector;
  Stack view(const Vocab& vocab) const { return {&frozen.enc, &projector, &frozen.lm, &vocab}; }
};

LoadedStack load_stack(const Context& ctx, const Vocab& vocab, bool control) {
  Frozen f = load_frozen(ctx, vocab, control);
  Projector p = Projector::from_checkpoint(
      load_stage(ctx, ctx.layout.projector(control), control ? "sft --control" : "sft"), ctx.cfg.projector);
  return {std::move(f), std::move(p)};
}

EvalReport grid(const Context& ctx, const Stack& stack, const Loaded& data, const std::string& name) {
  EvalReport report;
  const std::pair<std::string, std::vector<std::string>> splits[] = {
      {"train", head(data.corpus.repetition, ctx.cfg.eval.train_count)},
      {"heldout", head(data.corpus.heldout, ctx.cfg.eval.heldout_count)}};
  for (const auto& [split, sentences] : splits) {
    EvalOptions opts;
    opts.max_new = ctx.cfg.eval.max_new;
    opts.synth = ctx.cfg.synth;
    opts.noise_seed = ctx.cfg.eval.noise_seed;
    opts.path = InputPath::kText;
    report.rows.push_back(make_row(InputPath::kText, 0.0, split, repetition_eval(stack, sentences, opts), 0));
    for (double sigma : ctx.cfg.eval.sigmas) {
      opts.path = InputPath::kSpeech;
      opts.sigma = sigma;
      report.rows.push_back(make_row(InputPath::kSpeech, sigma, split, repetition_eval(stack, sentences, opts),
                                     ctx.cfg.eval.noise_seed));
    }
  }
  for (const auto& r : report.rows) {
    ctx.log() << "[eval " << name << "] " << r.path << " sigma " << fmt(r.sigma) << " " << r.split << ": wer "
              << fmt(r.wer) << " exact " << fmt(r.exact_match) << " cosine " << fmt(r.align_cosine) << " ce "
              << fmt(r.ce) << "\n";
  }
  report.metadata = {{"config_hash", hash_hex(ctx.hash)},
                     {"stack", name},
                     {"noise_seed", std::to_string(ctx.cfg.eval.noise_seed)},
                     {"encoder_seed", std::to_string(ctx.cfg.encoder_seed)},
                     {"lm_seed", std::to_string(ctx.cfg.lm_seed)},
                     {"projector_seed", std::to_string(ctx.cfg.projector_seed)}};
  report.timestamp = utc_timestamp();
  return report;
}

void cmd_eval(const Context& ctx) {
  const Loaded data = load_corpus_checked(ctx);
  const LoadedStack aligned = load_stack(ctx, data.vocab, false);
  const EvalReport main = grid(ctx, aligned.view(data.vocab), data, "aligned");
  emit_report(main, ReportFormat::kCsv, ctx.layout.report("report", "csv"));
  emit_report(main, ReportFormat::kJson, ctx.layout.report("report", "json"));
  ctx.log() << "wrote " << ctx.layout.report("report", "csv").string() << "\n";
  if (fs::exists(ctx.layout.projector(true)) && fs::exists(ctx.layout.unified(true))) {
    const LoadedStack control = load_stack(ctx, data.vocab, true);
    const EvalReport ctl = grid(ctx, control.view(data.vocab), data, "control");
    emit_report(ctl, ReportFormat::kCsv, ctx.layout.report("control", "csv"));
    emit_report(ctl, ReportFormat::kJson, ctx.layout.report("control", "json"));
    ctx.log() << "wrote " << ctx.layout.report("control", "csv").string() << "\n";
  } else {
    ctx.log() << "[eval] no control stack; skipping the misalignment ablation\n";
  }
}

void cmd_infer(const Context& ctx, const std::string& text, const std::string& frames, const std::string& prompt,
               bool control, bool residual, std::size_t max_new) {
  require_file(ctx.layout.vocab(), "gen-corpus");
  const Vocab vocab = Vocab::load(ctx.layout.vocab());
  const LoadedStack s = load_stack(ctx, vocab, control);
  const Stack stack = s.view(vocab);
  Generation g;
  if (!frames.empty()) {
    const AcousticSeq seq = load_frames(frames, ctx.cfg.synth.frames_per_token);
    if (seq.frames.cols() != ctx.cfg.synth.feature_dim) {
      fail(ErrorKind::kFormat, "frame file has width " + std::to_string(seq.frames.cols()) + ", expected " +
                                   std::to_string(ctx.cfg.synth.feature_dim));
    }
    g = infer(stack, seq, prompt, max_new);
    if (residual) {
      if (text.empty()) fail(ErrorKind::kInvalidArgument, "--residual needs --input with the reference text");
      const auto r = alignment_residual(s.frozen.enc, encode(text, vocab), seq);
      ctx.log() << "residual mse " << fmt(r.mse, 6) << " cosine " << fmt(r.mean_cosine, 6) << "\n";
    }
  } else {
    if (text.empty()) fail(ErrorKind::kInvalidArgument, "infer: pass --input or --frames");
    g = infer(stack, encode(text, vocab), prompt, max_new);
  }
  ctx.log() << g.text << "\n";
}

void cmd_report(const Context& ctx) {
  bool any = false;
  for (const char* name : {"report", "control"}) {
    const fs::path csv = ctx.layout.report(name, "csv");
    if (!fs::exists(csv)) continue;
    any = true;
    const auto rows = parse_report_csv(binio::read_file(csv));
    const fs::path js = ctx.layout.report(name, "json");
    std::string stamp = "?";
    if (fs::exists(js)) {
      const EvalReport meta = parse_report_json(binio::read_file(js));
      stamp = meta.timestamp;
      auto it = meta.metadata.find("config_hash");
      if (it != meta.metadata.end() && it->second != hash_hex(ctx.hash)) {
        ctx.log() << "note: " << name << " was produced by config " << it->second << "\n";
      }
    }
    ctx.log() << name << " (" << stamp << ")\n";
    ctx.log() << "  path    sigma   split     wer     exact   cosine  ce\n";
    for (const auto& r : rows) {
      ctx.log() << "  " << std::left << std::setw(7) << r.path << " " << fmt(r.sigma) << "  " << std::setw(8)
                << r.split << "  " << fmt(r.wer) << "  " << fmt(r.exact_match) << "  " << fmt(r.align_cosine)
                << "  " << fmt(r.ce) << "\n";
    }
  }
  if (!any) fail(ErrorKind::kDependency, "no reports under " + ctx.layout.root.string() + "; run `tesu eval` first");
}

std::string default_config_path() {
  if (const char* env = std::getenv("TESU_CONFIG"); env && *env) return env;
  return "configs/reference.json";
}

json parse_override_value(const std::string& v) {
  try {
    return json::parse(v);
  } catch (const json::exception&) {
    return v;
  }
}

Context make_context(const std::string& config_path, const std::vector<std::string>& sets,
                     const std::string& work_dir, bool allow_mixed, std::ostream& out) {
  std::string text;
  try {
    text = binio::read_file(config_path);
  } catch (const Error&) {
    fail(ErrorKind::kConfig, "cannot read config " + config_path);
  }
  if (!sets.empty()) {
    json root;
    try {
      root = json::parse(text);
    } catch (const json::exception& e) {
      fail(ErrorKind::kConfig, std::string("config: ") + e.what());
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) fail(ErrorKind::kConfig, "--set expects key.path=value, got " + s);
      json* node = &root;
      std::string key = s.substr(0, eq);
      std::size_t pos = 0;
      for (std::size_t dot; (dot = key.find('.', pos)) != std::string::npos; pos = dot + 1) {
        node = &(*node)[key.substr(pos, dot - pos)];
      }
      (*node)[key.substr(pos)] = parse_override_value(s.substr(eq + 1));
    }
    text = root.dump();
  }
  Context ctx;
  ctx.cfg = parse_run_config(text);
  if (!work_dir.empty()) ctx.cfg.work_dir = work_dir;
  ctx.hash = config_hash(ctx.cfg);
  ctx.layout.root = ctx.cfg.work_dir;
  ctx.allow_mixed = allow_mixed;
  ctx.out = &out;
  return ctx;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-only training of a speech-capable LM stack at desk scale", "tesu"};
  app.require_subcommand(1);
  std::string config_path = default_config_path();
  std::string work_dir;
  std::vector<std::string> sets;
  bool allow_mixed = false;
  app.add_option("-c,--config", config_path, "Run config (JSON); default $TESU_CONFIG or configs/reference.json");
  app.add_option("--work-dir", work_dir, "Override the config's work_dir");
  app.add_option("--set", sets, "Override a config value, e.g. --set lm.train.epochs=2");
  app.add_flag("--allow-mixed", allow_mixed, "Accept artifacts produced by a different config");

  auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic corpus and vocabulary");

  auto* render_cmd = app.add_subcommand("render", "Render synthetic frames for a sentence");
  std::string render_text, render_out;
  double render_sigma = -1.0;
  std::uint64_t render_seed = 1;
  render_cmd->add_option("--text", render_text, "Sentence to render")->required();
  render_cmd->add_option("--out", render_out, "Output frame file")->required();
  render_cmd->add_option("--sigma", render_sigma, "Noise level (default: synth.sigma)");
  render_cmd->add_option("--seed", render_seed, "Noise seed");

  bool control = false;
  auto* unified = app.add_subcommand("train-unified", "Train the unified text/speech encoder");
  unified->add_flag("--control", control, "Train the control encoder (no cross-modal objective)");
  auto* lm = app.add_subcommand("train-lm", "Pretrain the decoder LM on text");
  auto* pretrain = app.add_subcommand("pretrain", "Interleaved projector pretraining");
  pretrain->add_flag("--control", control, "Use the control encoder");
  auto* sft_cmd = app.add_subcommand("sft", "Projector SFT with the repetition task");
  sft_cmd->add_flag("--control", control, "Use the control encoder");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate text and speech paths, plus the ablation");

  auto* infer_cmd = app.add_subcommand("infer", "One-shot generation from text or a frame file");
  std::string infer_text, infer_frames, prompt = kRepetitionPrompt;
  bool residual = false;
  std::size_t max_new = 0;
  infer_cmd->add_option("--input", infer_text, "Input text");
  infer_cmd->add_option("--frames", infer_frames, "Frame file written by `tesu render`");
  infer_cmd->add_option("--prompt", prompt, "System prompt (default: repetition prompt)");
  infer_cmd->add_flag("--residual", residual, "Print the alignment residual of --frames against --input");
  infer_cmd->add_flag("--control", control, "Use the control stack");
  infer_cmd->add_option("--max-new", max_new, "Generation budget (default: eval.max_new)");

  auto* report_cmd = app.add_subcommand("report", "Print the evaluation reports");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    const Context ctx = make_context(config_path, sets, work_dir, allow_mixed, out);
    if (gen->parsed()) cmd_gen_corpus(ctx);
    else if (render_cmd->parsed())
      cmd_render(ctx, render_text, render_out, render_sigma < 0.0 ? ctx.cfg.synth.sigma : render_sigma, render_seed);
    else if (unified->parsed()) cmd_train_unified(ctx, control);
    else if (lm->parsed()) cmd_train_lm(ctx);
    else if (pretrain->parsed()) cmd_pretrain(ctx, control);
    else if (sft_cmd->parsed()) cmd_sft(ctx, control);
    else if (eval_cmd->parsed()) cmd_eval(ctx);
    else if (infer_cmd->parsed())
      cmd_infer(ctx, infer_text, infer_frames, prompt, control, residual, max_new ? max_new : ctx.cfg.eval.max_new);
    else if (report_cmd->parsed()) cmd_report(ctx);
  } catch (const Error& e) {
    err << "error[" << e.category() << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << "\n";
    return exit_code(ErrorKind::kInternal);
  }
  return 0;
}

}  // namespace tesu::cli
