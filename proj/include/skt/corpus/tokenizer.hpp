#pragma once

#include <string>
#include <string_view>

#include "skt/corpus/types.hpp"

namespace skt::corpus {

// Lowercases ASCII letters, splits on whitespace and emits every ASCII
// punctuation character as its own token. Non-ASCII bytes stay inside words.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v')) {
      flush();
    } else if (c < 0x80 && ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
                            (c >= 123 && c <= 126))) {
      flush();
      out.emplace_back(1, ch);
    } else if (c >= 'A' && c <= 'Z') {
      cur.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (c >= 0x20 || c >= 0x80) {
      cur.push_back(ch);
    }
  }
  flush();
  return out;
}

inline std::string join(const Tokens& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace skt::corpus
