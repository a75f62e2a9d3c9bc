#include "tesu/config.hpp"

#include <cstdio>
#include <nlohmann/json.hpp>
#include <set>

#include "tesu/binio.hpp"
#include "tesu/error.hpp"

namespace tesu {
namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      node_ = &root.at(name_);
      if (!node_->is_object()) fail(ErrorKind::kConfig, "config: '" + name_ + "' must be an object");
    }
  }
  Section(const json& node, std::string name, bool) : node_(&node), name_(std::move(name)) {
    if (!node_->is_object()) fail(ErrorKind::kConfig, "config: '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::kConfig, "config: bad value for " + name_ + "." + key);
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    if (!node_ || !node_->contains(key)) return Section(empty, name_ + "." + key, true);
    return Section(node_->at(key), name_ + "." + key, true);
  }

  void finish() const {
    if (!node_) return;
    for (const auto& item : node_->items()) {
      if (!seen_.count(item.key())) fail(ErrorKind::kConfig, "config: unknown key " + name_ + "." + item.key());
    }
  }

 private:
  const json* node_ = nullptr;
  std::string name_;
  std::set<std::string> seen_;
};

void read_schedule(Section& s, ScheduleCfg& c) {
  s.get("base_lr", c.base_lr);
  s.get("warmup_frac", c.warmup_frac);
  s.get("batch_size", c.batch_size);
  s.get("epochs", c.epochs);
}

json schedule_json(const ScheduleCfg& c) {
  return {{"base_lr", c.base_lr}, {"warmup_frac", c.warmup_frac}, {"batch_size", c.batch_size}, {"epochs", c.epochs}};
}

void read_stage(Section& s, StageConfig& c) {
  read_schedule(s, c.schedule);
  s.get("clip", c.clip);
  s.get("seed", c.seed);
  Section sp = s.child("spans");
  sp.get("min_length", c.spans.min_length);
  sp.get("max_length", c.spans.max_length);
  sp.get("max_spans", c.spans.max_spans);
  sp.get("min_gap", c.spans.min_gap);
  sp.get("attempts", c.spans.attempts);
  sp.finish();
}

json stage_json(const StageConfig& c) {
  json j = schedule_json(c.schedule);
  j["clip"] = c.clip;
  j["seed"] = c.seed;
  j["spans"] = {{"min_length", c.spans.min_length},
                {"max_length", c.spans.max_length},
                {"max_spans", c.spans.max_spans},
                {"min_gap", c.spans.min_gap},
                {"attempts", c.spans.attempts}};
  return j;
}

json to_json(const RunConfig& c, bool with_paths) {
  json j;
  if (with_paths) j["work_dir"] = c.work_dir;
  j["corpus"] = {{"seed", c.corpus.seed},
                 {"documents", c.corpus.documents},
                 {"doc_sentences_min", c.corpus.doc_sentences_min},
                 {"doc_sentences_max", c.corpus.doc_sentences_max},
                 {"align_sentences", c.corpus.align_sentences},
                 {"heldout_sentences", c.corpus.heldout_sentences},
                 {"repetition_sentences", c.corpus.repetition_sentences},
                 {"lm_repetition_dialogs", c.corpus.lm_repetition_dialogs},
                 {"lm_instruction_dialogs", c.corpus.lm_instruction_dialogs},
                 {"vocab_max", c.vocab_max}};
  j["synth"] = {{"feature_dim", c.synth.feature_dim},
                {"frames_per_token", c.synth.frames_per_token},
                {"sigma", c.synth.sigma},
                {"position_scale", c.synth.position_scale},
                {"pattern_seed", c.synth.pattern_seed}};
  j["encoder"] = {{"text_dim", c.encoder.text_dim},       {"latent_dim", c.encoder.latent_dim},
                  {"encoder_blocks", c.encoder.encoder_blocks}, {"mapper_blocks", c.encoder.mapper_blocks},
                  {"heads", c.encoder.heads},             {"mlp_ratio", c.encoder.mlp_ratio},
                  {"seed", c.encoder_seed}};
  j["align"] = {{"epochs", c.align.epochs},
                {"batch_size", c.align.batch_size},
                {"lr", c.align.lr},
                {"warmup_frac", c.align.warmup_frac},
                {"mse_weight", c.align.mse_weight},
                {"contrastive_weight", c.align.contrastive_weight},
                {"temperature", c.align.temperature},
                {"sigma", c.align.sigma},
                {"seed", c.align.seed}};
  json lm_train = schedule_json(c.lm_train.schedule);
  lm_train["clip"] = c.lm_train.clip;
  lm_train["seed"] = c.lm_train.seed;
  j["lm"] = {{"model_dim", c.lm.model_dim}, {"blocks", c.lm.blocks},       {"heads", c.lm.heads},
             {"context", c.lm.context},     {"mlp_ratio", c.lm.mlp_ratio}, {"seed", c.lm_seed},
             {"train", lm_train}};
  j["projector"] = {{"hidden_dim", c.projector.hidden_dim}, {"seed", c.projector_seed}};
  j["pretrain"] = stage_json(c.pretrain);
  json sft = stage_json(c.sft.stage);
  sft["mix_ratio"] = c.sft.mix_ratio;
  sft["examples"] = c.sft.examples;
  sft["data_seed"] = c.sft.data_seed;
  j["sft"] = sft;
  j["eval"] = {{"sigmas", c.eval.sigmas},
               {"noise_seed", c.eval.noise_seed},
               {"heldout_count", c.eval.heldout_count},
               {"train_count", c.eval.train_count},
               {"max_new", c.eval.max_new}};
  return j;
}

}  // namespace

void validate(const RunConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::kConfig, "config: " + what);
  };
  need(c.vocab_max > static_cast<std::size_t>(kNumReserved), "corpus.vocab_max must exceed the reserved ids");
  need(c.corpus.align_sentences > 0, "corpus.align_sentences must be positive");
  need(c.corpus.heldout_sentences > 0, "corpus.heldout_sentences must be positive");
  need(c.corpus.documents > 0, "corpus.documents must be positive");
  need(c.corpus.doc_sentences_min > 0 && c.corpus.doc_sentences_min <= c.corpus.doc_sentences_max,
       "corpus document sentence range is invalid");
  need(c.synth.feature_dim > 0 && c.synth.frames_per_token > 0, "synth dimensions must be positive");
  need(c.synth.sigma >= 0.0 && c.align.sigma >= 0.0, "sigma must be non-negative");
  need(c.encoder.text_dim % c.encoder.heads == 0, "encoder.text_dim must be divisible by encoder.heads");
  need(c.lm.model_dim % c.lm.heads == 0, "lm.model_dim must be divisible by lm.heads");
  need(c.lm.context >= 32, "lm.context must be at least 32");
  need(c.align.epochs > 0 && c.align.batch_size > 0 && c.align.lr > 0.0, "align schedule must be positive");
  need(c.align.temperature > 0.0, "align.temperature must be positive");
  validate(c.lm_train.schedule);
  validate(c.pretrain.schedule);
  validate(c.sft.stage.schedule);
  need(c.pretrain.spans.min_length > 0 && c.pretrain.spans.min_length <= c.pretrain.spans.max_length,
       "pretrain.spans lengths are invalid");
  need(c.sft.mix_ratio >= 0.0 && c.sft.mix_ratio <= 1.0, "sft.mix_ratio must lie in [0, 1]");
  need(c.sft.examples > 0, "sft.examples must be positive");
  need(!c.eval.sigmas.empty(), "eval.sigmas must not be empty");
  for (double s : c.eval.sigmas) need(s >= 0.0, "eval.sigmas must be non-negative");
  need(c.eval.heldout_count > 0 && c.eval.heldout_count <= c.corpus.heldout_sentences,
       "eval.heldout_count must lie in [1, corpus.heldout_sentences]");
  need(c.eval.train_count > 0 && c.eval.train_count <= c.corpus.repetition_sentences,
       "eval.train_count must lie in [1, corpus.repetition_sentences]");
}

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
  if (!root.is_object()) fail(ErrorKind::kConfig, "config: top level must be an object");
  RunConfig c;
  static const std::set<std::string> known = {"work_dir", "corpus", "synth",    "encoder", "align",
                                              "lm",       "projector", "pretrain", "sft",     "eval"};
  for (const auto& item : root.items()) {
    if (!known.count(item.key())) fail(ErrorKind::kConfig, "config: unknown key " + item.key());
  }
  if (root.contains("work_dir")) c.work_dir = root.at("work_dir").get<std::string>();

  Section corpus(root, "corpus");
  corpus.get("seed", c.corpus.seed);
  corpus.get("documents", c.corpus.documents);
  corpus.get("doc_sentences_min", c.corpus.doc_sentences_min);
  corpus.get("doc_sentences_max", c.corpus.doc_sentences_max);
  corpus.get("align_sentences", c.corpus.align_sentences);
  corpus.get("heldout_sentences", c.corpus.heldout_sentences);
  corpus.get("repetition_sentences", c.corpus.repetition_sentences);
  corpus.get("lm_repetition_dialogs", c.corpus.lm_repetition_dialogs);
  corpus.get("lm_instruction_dialogs", c.corpus.lm_instruction_dialogs);
  corpus.get("vocab_max", c.vocab_max);
  corpus.finish();

  Section synth(root, "synth");
  synth.get("feature_dim", c.synth.feature_dim);
  synth.get("frames_per_token", c.synth.frames_per_token);
  synth.get("sigma", c.synth.sigma);
  synth.get("position_scale", c.synth.position_scale);
  synth.get("pattern_seed", c.synth.pattern_seed);
  synth.finish();

  Section enc(root, "encoder");
  enc.get("text_dim", c.encoder.text_dim);
  enc.get("latent_dim", c.encoder.latent_dim);
  enc.get("encoder_blocks", c.encoder.encoder_blocks);
  enc.get("mapper_blocks", c.encoder.mapper_blocks);
  enc.get("heads", c.encoder.heads);
  enc.get("mlp_ratio", c.encoder.mlp_ratio);
  enc.get("seed", c.encoder_seed);
  enc.finish();

  Section align(root, "align");
  align.get("epochs", c.align.epochs);
  align.get("batch_size", c.align.batch_size);
  align.get("lr", c.align.lr);
  align.get("warmup_frac", c.align.warmup_frac);
  align.get("mse_weight", c.align.mse_weight);
  align.get("contrastive_weight", c.align.contrastive_weight);
  align.get("temperature", c.align.temperature);
  align.get("sigma", c.align.sigma);
  align.get("seed", c.align.seed);
  align.finish();

  Section lm(root, "lm");
  lm.get("model_dim", c.lm.model_dim);
  lm.get("blocks", c.lm.blocks);
  lm.get("heads", c.lm.heads);
  lm.get("context", c.lm.context);
  lm.get("mlp_ratio", c.lm.mlp_ratio);
  lm.get("seed", c.lm_seed);
  Section lm_train = lm.child("train");
  read_schedule(lm_train, c.lm_train.schedule);
  lm_train.get("clip", c.lm_train.clip);
  lm_train.get("seed", c.lm_train.seed);
  lm_train.finish();
  lm.finish();

  Section proj(root, "projector");
  proj.get("hidden_dim", c.projector.hidden_dim);
  proj.get("seed", c.projector_seed);
  proj.finish();

  Section pretrain(root, "pretrain");
  read_stage(pretrain, c.pretrain);
  pretrain.finish();

  Section sft(root, "sft");
  read_stage(sft, c.sft.stage);
  sft.get("mix_ratio", c.sft.mix_ratio);
  sft.get("examples", c.sft.examples);
  sft.get("data_seed", c.sft.data_seed);
  sft.finish();

  Section ev(root, "eval");
  ev.get("sigmas", c.eval.sigmas);
  ev.get("noise_seed", c.eval.noise_seed);
  ev.get("heldout_count", c.eval.heldout_count);
  ev.get("train_count", c.eval.train_count);
  ev.get("max_new", c.eval.max_new);
  ev.finish();

  // derived widths
  c.encoder.feature_dim = c.synth.feature_dim;
  c.encoder.frames_per_token = c.synth.frames_per_token;
  c.projector.latent_dim = c.encoder.latent_dim;
  c.projector.model_dim = c.lm.model_dim;
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = binio::read_file(path);
  } catch (const Error&) {
    fail(ErrorKind::kConfig, "config: cannot read " + path.string());
  }
  return parse_run_config(text);
}

std::string dump_run_config(const RunConfig& cfg) { return to_json(cfg, true).dump(2) + "\n"; }

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string canonical = to_json(cfg, false).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace tesu
