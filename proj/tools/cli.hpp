#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tesu/config.hpp"
#include "tesu/error.hpp"

namespace tesu::cli {

// Artifact layout under a run's work_dir.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path corpus_dir() const { return root / "corpus"; }
  std::filesystem::path corpus_manifest() const { return root / "corpus" / "manifest.json"; }
  std::filesystem::path vocab() const { return root / "vocab.txt"; }
  std::filesystem::path unified(bool control) const;
  std::filesystem::path lm() const { return root / "checkpoints" / "lm.ckpt"; }
  std::filesystem::path projector_pretrain(bool control) const;
  std::filesystem::path projector(bool control) const;
  std::filesystem::path sft_data() const { return root / "sft_dataset.jsonl"; }
  std::filesystem::path curve(const std::string& stage) const { return root / "curves" / (stage + ".csv"); }
  std::filesystem::path report(const std::string& name, const char* ext) const;
};

// Exit status for a categorized error.
int exit_code(ErrorKind kind);

// Full command line (without the program name). Output goes to out, the
// categorized error line to err. Returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tesu::cli
