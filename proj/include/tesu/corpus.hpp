#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tesu/rng.hpp"

namespace tesu {

inline constexpr const char* kRepetitionPrompt =
    "Reproduce the user's exact query or statement without any interpretation or modification.";
inline constexpr const char* kInstructionPrompt = "Answer the question in a short sentence.";
inline constexpr const char* kUserMarker = "user";
inline constexpr const char* kAssistantMarker = "assistant";

struct CorpusConfig {
  std::uint64_t seed = 2024;
  std::size_t documents = 3000;
  std::size_t doc_sentences_min = 4;
  std::size_t doc_sentences_max = 8;
  std::size_t align_sentences = 2400;
  std::size_t heldout_sentences = 200;
  std::size_t repetition_sentences = 6000;
  std::size_t lm_repetition_dialogs = 12000;
  std::size_t lm_instruction_dialogs = 4000;
};

struct InstructionPair {
  std::string query;
  std::string response;
};

// Everything derived from one seed. Sentences are normalized (lowercase,
// no punctuation). heldout shares no sentence with any other split.
struct Corpus {
  std::vector<std::string> documents;
  std::vector<std::string> align;
  std::vector<std::string> heldout;
  std::vector<std::string> repetition;
  std::vector<std::string> lm_repetition;
  std::vector<InstructionPair> instructions;
  std::vector<std::string> vocabulary_text;  // every string the vocab must cover
};

// Seeded sentence grammar: S -> NP VP [PP] [ADV], 3 to 12 words.
class Grammar {
 public:
  explicit Grammar(std::uint64_t seed);

  std::string sentence(Rng& rng) const;

  InstructionPair color_question(std::size_t noun) const;
  InstructionPair place_question(std::size_t noun) const;
  std::size_t noun_count() const;
  std::vector<std::string> all_words() const;

 private:
  std::vector<std::size_t> color_of_;
  std::vector<std::size_t> place_of_;
};

Corpus generate_corpus(const CorpusConfig& cfg);

// Dialog text in the shared template: <prompt> user <query> assistant <response>.
std::string dialog_text(const std::string& prompt, const std::string& query,
                        const std::string& response);

// Line-oriented files under dir: documents.txt, align.txt, heldout.txt,
// repetition.txt, lm_repetition.txt, instructions.jsonl.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

}  // namespace tesu
