#pragma once

#include <algorithm>
#include <string>
#include <vector>

namespace oracle {

// Plain recursive edit distance: exponential, for tiny inputs only.
inline std::size_t edit_distance(const std::vector<std::string>& a, std::size_t i,
                                 const std::vector<std::string>& b, std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t keep = edit_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  const std::size_t del = edit_distance(a, i + 1, b, j) + 1;
  const std::size_t ins = edit_distance(a, i, b, j + 1) + 1;
  return std::min({keep, del, ins});
}

inline std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return edit_distance(a, 0, b, 0);
}

// Every sequence of length 0..max_len over the alphabet.
inline std::vector<std::vector<std::string>> all_sequences(const std::vector<std::string>& alphabet,
                                                           std::size_t max_len) {
  std::vector<std::vector<std::string>> out = {{}};
  std::size_t begin = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t k = begin; k < end; ++k) {
      if (out[k].size() != len - 1) continue;
      for (const auto& sym : alphabet) {
        auto next = out[k];
        next.push_back(sym);
        out.push_back(std::move(next));
      }
    }
    begin = end;
  }
  return out;
}

}  // namespace oracle
