#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tesu/pipeline.hpp"

namespace tesu {

// (S + D + I) / |reference| under unit-cost word edit distance.
double wer(std::span<const std::string> reference, std::span<const std::string> hypothesis);
// Normalizes both sides with the tokenizer rule first.
double wer(std::string_view reference, std::string_view hypothesis);
std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);

enum class InputPath { kText, kSpeech };
const char* path_name(InputPath path);

struct RepetitionScore {
  double wer = 0.0;
  double exact_match = 0.0;
  double align_cosine = 1.0;
  double ce = 0.0;
  std::size_t count = 0;
};

struct EvalOptions {
  InputPath path = InputPath::kText;
  double sigma = 0.1;
  std::uint64_t noise_seed = 0xe7a1;  // speech sentence i uses derive(noise_seed, i)
  std::size_t max_new = 32;
  SynthConfig synth;
};

RepetitionScore repetition_eval(const Stack& stack, std::span<const std::string> sentences,
                                const EvalOptions& opts);

struct EvalRow {
  std::string path;
  double sigma = 0.0;
  std::string split;
  double wer = 0.0;
  double exact_match = 0.0;
  double align_cosine = 0.0;
  double ce = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const EvalRow&) const = default;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::map<std::string, std::string> metadata;  // config hash, seeds, stack name
  std::string timestamp;
};

EvalRow make_row(InputPath path, double sigma, const std::string& split, const RepetitionScore& s,
                 std::uint64_t seed);

struct AblationResult {
  std::vector<EvalRow> aligned;
  std::vector<EvalRow> control;
};

// Text and speech repetition scores for an aligned stack and a control
// stack whose encoder never saw a cross-modal objective.
AblationResult ablation_misaligned(const Stack& aligned, const Stack& control,
                                   std::span<const std::string> sentences, const std::string& split,
                                   double sigma, std::uint64_t noise_seed);

inline constexpr const char* kReportCsvHeader = "path,sigma,split,wer,exact_match,align_cosine,ce,seed";

std::string report_csv(const EvalReport& report);
std::vector<EvalRow> parse_report_csv(const std::string& text);
// Same rows plus metadata and the timestamp.
std::string report_json(const EvalReport& report);
EvalReport parse_report_json(const std::string& text);

enum class ReportFormat { kCsv, kJson };
void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path);

}  // namespace tesu
