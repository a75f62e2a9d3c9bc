#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tesu {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

// Lowercase, drop punctuation, split on whitespace. Shared by the tokenizer
// and the WER scorer so training and evaluation agree on word identity.
std::vector<std::string> normalize_words(std::string_view text);
std::string normalize_text(std::string_view text);

class Vocab {
 public:
  Vocab();
  explicit Vocab(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(int id) const;
  const std::vector<std::string>& words() const { return words_; }

  // One corpus word per line, line i holding id i + 4.
  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Most frequent (max_size - 4) words, ties broken lexicographically.
Vocab build_vocab(std::span<const std::string> corpus, std::size_t max_size);

struct TokenSeq {
  std::vector<int> ids;
  std::vector<std::string> words;  // normalized words behind the non-special ids

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

TokenSeq encode(std::string_view text, const Vocab& vocab, bool frame = false);
std::string decode(std::span<const int> ids, const Vocab& vocab);
std::string decode(const TokenSeq& seq, const Vocab& vocab);

}  // namespace tesu
