#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace geneic {

// Lowercase, turn ASCII punctuation into spaces, split on whitespace. Bytes
// outside ASCII are kept as word characters. Every metric and the toy
// vocabulary share this rule.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    const bool word_char = u >= 0x80 || (u >= '0' && u <= '9') ||
                           (u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z');
    if (word_char) {
      cur.push_back(u >= 'A' && u <= 'Z' ? static_cast<char>(u - 'A' + 'a') : ch);
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

}  // namespace geneic
