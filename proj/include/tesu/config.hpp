#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tesu/corpus.hpp"
#include "tesu/lm.hpp"
#include "tesu/pipeline.hpp"
#include "tesu/projector.hpp"
#include "tesu/synthspeech.hpp"
#include "tesu/unified_encoder.hpp"

namespace tesu {

struct SftStageConfig {
  StageConfig stage;
  double mix_ratio = 0.8;
  std::size_t examples = 6000;
  std::uint64_t data_seed = 21;
};

struct EvalConfig {
  std::vector<double> sigmas{0.0, 0.1};
  std::uint64_t noise_seed = 0xe7a1;
  std::size_t heldout_count = 200;
  std::size_t train_count = 100;
  std::size_t max_new = 32;
};

// Every hyperparameter of a run. work_dir is the only path and is excluded
// from the hash, so the same settings hash equally wherever they run.
struct RunConfig {
  std::string work_dir = "runs/reference";
  CorpusConfig corpus;
  std::size_t vocab_max = 200;
  SynthConfig synth;
  EncoderConfig encoder;
  std::uint64_t encoder_seed = 3;
  AlignConfig align;
  LmConfig lm;
  std::uint64_t lm_seed = 7;
  LmTrainConfig lm_train;
  ProjectorConfig projector;
  std::uint64_t projector_seed = 13;
  StageConfig pretrain;
  SftStageConfig sft;
  EvalConfig eval;
};

void validate(const RunConfig& cfg);

// Missing keys keep their defaults; unknown keys are rejected.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& cfg);

// FNV-1a over the canonical JSON of everything except work_dir.
std::uint64_t config_hash(const RunConfig& cfg);
std::string hash_hex(std::uint64_t hash);

}  // namespace tesu
