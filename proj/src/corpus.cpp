#include "tesu/corpus.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <unordered_set>

#include "tesu/binio.hpp"
#include "tesu/error.hpp"
#include "tesu/tokenizer.hpp"

namespace tesu {
namespace {

const std::vector<std::string> kDeterminers = {"the", "a", "every", "some", "this", "that", "my", "our"};
const std::vector<std::string> kColors = {"red", "blue", "green", "yellow", "black", "white"};
const std::vector<std::string> kAdjectives = {"small", "big", "old", "new", "quiet",
                                              "bright", "soft", "heavy", "warm", "cold"};
const std::vector<std::string> kNouns = {
    "cat",    "dog",    "bird",  "horse", "child",  "teacher", "farmer",  "doctor", "lamp",    "door",
    "window", "table",  "chair", "book",  "letter", "cup",     "box",     "key",    "ball",    "coat",
    "hat",    "bag",    "boat",  "car",   "train",  "river",   "tree",    "flower", "apple",   "bread",
    "kitchen", "garden", "office", "park", "hall",  "yard",    "library", "market", "station", "bridge"};
const std::vector<std::string> kPlaces = {"kitchen", "garden", "office", "park",
                                          "hall",    "library", "market", "station"};
const std::vector<std::string> kTransitive = {"sees",  "finds",   "holds",   "moves",  "opens",
                                              "likes", "carries", "takes",   "watches", "follows",
                                              "pushes", "pulls",  "cleans",  "builds", "paints",
                                              "fixes", "drops",   "lifts",   "buys",   "sells"};
const std::vector<std::string> kIntransitive = {"sleeps", "runs",  "waits", "sits", "stands",
                                                "falls",  "sings", "walks", "rests", "smiles"};
const std::vector<std::string> kPrepositions = {"on", "in", "near", "under", "behind", "beside", "above", "with"};
const std::vector<std::string> kAdverbs = {"slowly", "quickly", "often", "today",
                                           "again",  "quietly", "gladly", "later"};

const std::string& pick(const std::vector<std::string>& words, Rng& rng) {
  return words[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - 1))];
}

void noun_phrase(std::vector<std::string>& out, Rng& rng) {
  out.push_back(pick(kDeterminers, rng));
  if (rng.uniform() < 0.5) out.push_back(pick(rng.uniform() < 0.4 ? kColors : kAdjectives, rng));
  out.push_back(pick(kNouns, rng));
}

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

}  // namespace

Grammar::Grammar(std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x6b));
  for (std::size_t i = 0; i < kNouns.size(); ++i) {
    color_of_.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(kColors.size()) - 1)));
    place_of_.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(kPlaces.size()) - 1)));
  }
}

std::string Grammar::sentence(Rng& rng) const {
  std::vector<std::string> w;
  noun_phrase(w, rng);
  if (rng.uniform() < 0.35) {
    w.push_back(pick(kIntransitive, rng));
  } else {
    w.push_back(pick(kTransitive, rng));
    noun_phrase(w, rng);
  }
  if (rng.uniform() < 0.4) {
    w.push_back(pick(kPrepositions, rng));
    noun_phrase(w, rng);
  }
  if (rng.uniform() < 0.3) w.push_back(pick(kAdverbs, rng));
  return join(w);
}

std::size_t Grammar::noun_count() const { return kNouns.size(); }

InstructionPair Grammar::color_question(std::size_t noun) const {
  const auto& n = kNouns.at(noun);
  return {"what color is the " + n, "the " + n + " is " + kColors[color_of_[noun]]};
}

InstructionPair Grammar::place_question(std::size_t noun) const {
  const auto& n = kNouns.at(noun);
  return {"where is the " + n, "the " + n + " is in the " + kPlaces[place_of_[noun]]};
}

std::vector<std::string> Grammar::all_words() const {
  std::vector<std::string> out;
  for (const auto* list : {&kDeterminers, &kColors, &kAdjectives, &kNouns, &kTransitive, &kIntransitive,
                           &kPrepositions, &kAdverbs}) {
    out.insert(out.end(), list->begin(), list->end());
  }
  return out;
}

std::string dialog_text(const std::string& prompt, const std::string& query, const std::string& response) {
  return normalize_text(prompt) + " " + kUserMarker + " " + query + " " + kAssistantMarker + " " + response;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  if (cfg.doc_sentences_min == 0 || cfg.doc_sentences_min > cfg.doc_sentences_max) {
    fail(ErrorKind::kConfig, "corpus: invalid document sentence range");
  }
  const Grammar grammar(cfg.seed);
  Rng rng(Rng::derive(cfg.seed, 1));
  Corpus c;

  std::unordered_set<std::string> heldout;
  std::size_t guard = 0;
  while (c.heldout.size() < cfg.heldout_sentences) {
    if (++guard > 100 * (cfg.heldout_sentences + 1)) fail(ErrorKind::kInternal, "corpus: grammar too small");
    auto s = grammar.sentence(rng);
    if (heldout.insert(s).second) c.heldout.push_back(s);
  }
  auto train_sentence = [&] {
    for (;;) {
      auto s = grammar.sentence(rng);
      if (!heldout.count(s)) return s;
    }
  };
  auto unique_sentences = [&](std::size_t n) {
    std::unordered_set<std::string> seen;
    std::vector<std::string> out;
    while (out.size() < n) {
      auto s = train_sentence();
      if (seen.insert(s).second) out.push_back(std::move(s));
    }
    return out;
  };

  c.align = unique_sentences(cfg.align_sentences);
  c.repetition = unique_sentences(cfg.repetition_sentences);
  for (std::size_t i = 0; i < cfg.lm_repetition_dialogs; ++i) c.lm_repetition.push_back(train_sentence());
  for (std::size_t d = 0; d < cfg.documents; ++d) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.doc_sentences_min),
                                                            static_cast<std::int64_t>(cfg.doc_sentences_max)));
    std::string doc;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) doc += ' ';
      doc += train_sentence();
    }
    c.documents.push_back(std::move(doc));
  }
  for (std::size_t i = 0; i < grammar.noun_count(); ++i) {
    c.instructions.push_back(grammar.color_question(i));
    c.instructions.push_back(grammar.place_question(i));
  }

  c.vocabulary_text = grammar.all_words();
  for (const auto* t : {kRepetitionPrompt, kInstructionPrompt, kUserMarker, kAssistantMarker}) {
    c.vocabulary_text.push_back(normalize_text(t));
  }
  for (const auto& p : c.instructions) {
    c.vocabulary_text.push_back(p.query);
    c.vocabulary_text.push_back(p.response);
  }
  return c;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) {
    text += l;
    text += '\n';
  }
  binio::write_file(path, text);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  write_lines(dir / "documents.txt", corpus.documents);
  write_lines(dir / "align.txt", corpus.align);
  write_lines(dir / "heldout.txt", corpus.heldout);
  write_lines(dir / "repetition.txt", corpus.repetition);
  write_lines(dir / "lm_repetition.txt", corpus.lm_repetition);
  write_lines(dir / "vocabulary_text.txt", corpus.vocabulary_text);
  std::vector<std::string> rows;
  for (const auto& p : corpus.instructions) {
    rows.push_back(nlohmann::json{{"query", p.query}, {"response", p.response}}.dump());
  }
  write_lines(dir / "instructions.jsonl", rows);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.documents = read_lines(dir / "documents.txt");
  c.align = read_lines(dir / "align.txt");
  c.heldout = read_lines(dir / "heldout.txt");
  c.repetition = read_lines(dir / "repetition.txt");
  c.lm_repetition = read_lines(dir / "lm_repetition.txt");
  c.vocabulary_text = read_lines(dir / "vocabulary_text.txt");
  for (const auto& line : read_lines(dir / "instructions.jsonl")) {
    try {
      auto j = nlohmann::json::parse(line);
      c.instructions.push_back({j.at("query").get<std::string>(), j.at("response").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, "instructions.jsonl: " + std::string(e.what()));
    }
  }
  return c;
}

}  // namespace tesu
