#include "tesu/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "tesu/error.hpp"

namespace tesu {
namespace {

const std::vector<std::string>& reserved_words() {
  static const std::vector<std::string> words = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return words;
}

}  // namespace

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else if (!std::ispunct(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& w : normalize_words(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> words) {
  words_ = reserved_words();
  for (auto& w : words) {
    if (w.empty() || index_.count(w) || std::find(words_.begin(), words_.end(), w) != words_.end()) {
      fail(ErrorKind::kFormat, "vocab: empty, duplicate or reserved word '" + w + "'");
    }
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(std::move(w));
  }
}

int Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocab::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    fail(ErrorKind::kInvalidArgument, "vocab: id " + std::to_string(id) + " out of range");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t i = kNumReserved; i < words_.size(); ++i) {
    out += words_[i];
    out.push_back('\n');
  }
  return out;
}

Vocab Vocab::parse(std::string_view text) {
  std::vector<std::string> words;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) fail(ErrorKind::kFormat, "vocab: blank line at entry " + std::to_string(words.size()));
    words.emplace_back(line);
    start = end + 1;
  }
  return Vocab(std::move(words));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write vocab file " + path.string());
  out << serialize();
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read vocab file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Vocab build_vocab(std::span<const std::string> corpus, std::size_t max_size) {
  if (max_size < kNumReserved) {
    fail(ErrorKind::kInvalidArgument, "build_vocab: max_size must be at least 4");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus) {
    for (auto& w : normalize_words(line)) ++counts[w];
  }
  if (counts.empty()) fail(ErrorKind::kInvalidArgument, "build_vocab: empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map order is lexicographic, so a stable sort by count keeps ties sorted
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (std::size_t i = 0; i < ranked.size() && words.size() + kNumReserved < max_size; ++i) {
    words.push_back(ranked[i].first);
  }
  return Vocab(std::move(words));
}

TokenSeq encode(std::string_view text, const Vocab& vocab, bool frame) {
  TokenSeq seq;
  seq.words = normalize_words(text);
  if (frame) seq.ids.push_back(kBosId);
  for (const auto& w : seq.words) seq.ids.push_back(vocab.id(w));
  if (frame) seq.ids.push_back(kEosId);
  return seq;
}

std::string decode(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.word(id);
  }
  return out;
}

std::string decode(const TokenSeq& seq, const Vocab& vocab) { return decode(seq.ids, vocab); }

}  // namespace tesu
