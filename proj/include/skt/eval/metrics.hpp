#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "skt/corpus/types.hpp"

namespace skt::eval {

using corpus::Tokens;

inline bool is_punctuation(const std::string& token) {
  return std::none_of(token.begin(), token.end(), [](unsigned char c) { return std::isalnum(c) != 0; });
}

inline bool is_article(const std::string& token) { return token == "a" || token == "an" || token == "the"; }

// Drops punctuation tokens (no alphanumeric character) and articles.
inline Tokens normalize_text(const Tokens& tokens) {
  Tokens out;
  for (const auto& t : tokens) {
    if (!is_punctuation(t) && !is_article(t)) out.push_back(t);
  }
  return out;
}

inline std::map<Tokens, std::size_t> ngram_bag(const Tokens& tokens, std::size_t n) {
  std::map<Tokens, std::size_t> bag;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++bag[Tokens(tokens.begin() + i, tokens.begin() + i + n)];
  return bag;
}

// F1 between n-gram multisets of raw token lists. Two empty bags score 1,
// one empty bag scores 0.
inline double ngram_f1(const Tokens& pred, const Tokens& ref, std::size_t n) {
  if (n == 0) throw std::invalid_argument("ngram_f1: n must be positive");
  const auto p = ngram_bag(pred, n);
  const auto r = ngram_bag(ref, n);
  std::size_t np = 0, nr = 0, overlap = 0;
  for (const auto& [g, c] : p) np += c;
  for (const auto& [g, c] : r) nr += c;
  if (np == 0 && nr == 0) return 1.0;
  if (np == 0 || nr == 0) return 0.0;
  for (const auto& [g, c] : p) {
    const auto it = r.find(g);
    if (it != r.end()) overlap += std::min(c, it->second);
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(np);
  const double recall = static_cast<double>(overlap) / static_cast<double>(nr);
  return 2.0 * precision * recall / (precision + recall);
}

// Best score over references after normalizing both sides.
inline double best_ngram_f1(const Tokens& pred, const std::vector<Tokens>& refs, std::size_t n) {
  if (refs.empty()) throw std::invalid_argument("F1 needs at least one reference");
  const auto p = normalize_text(pred);
  double best = 0.0;
  for (const auto& r : refs) best = std::max(best, ngram_f1(p, normalize_text(r), n));
  return best;
}

inline double unigram_f1(const Tokens& pred, const std::vector<Tokens>& refs) { return best_ngram_f1(pred, refs, 1); }
inline double bigram_f1(const Tokens& pred, const std::vector<Tokens>& refs) { return best_ngram_f1(pred, refs, 2); }

}  // namespace skt::eval
