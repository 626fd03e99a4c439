#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "skt/corpus/types.hpp"

namespace skt::corpus {

using Ids = std::vector<std::size_t>;

class Vocab {
 public:
  static constexpr std::size_t pad = 0;
  static constexpr std::size_t bos = 1;
  static constexpr std::size_t eos = 2;
  static constexpr std::size_t unk = 3;
  static constexpr std::size_t num_specials = 4;

  Vocab() : tokens_{"<pad>", "<bos>", "<eos>", "<unk>"} { reindex(); }

  // Vocabulary from an explicit id-ordered token list (specials first).
  static Vocab from_tokens(std::vector<std::string> tokens) {
    Vocab v;
    if (tokens.size() < num_specials || tokens[pad] != "<pad>" || tokens[bos] != "<bos>" || tokens[eos] != "<eos>" ||
        tokens[unk] != "<unk>") {
      throw std::invalid_argument("vocabulary must start with <pad> <bos> <eos> <unk>");
    }
    v.tokens_ = std::move(tokens);
    v.reindex();
    if (v.index_.size() != v.tokens_.size()) throw std::invalid_argument("vocabulary contains duplicate tokens");
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::size_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unk : it->second;
  }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  Ids encode(const Tokens& tokens) const {
    Ids out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  Tokens decode(const Ids& ids) const {
    Tokens out;
    for (auto i : ids) out.push_back(token(i));
    return out;
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Frequency-ranked vocabulary (ties broken lexicographically), truncated to
// max_size entries including the four specials.
inline Vocab build_vocab(const std::vector<Tokens>& sentences, std::size_t max_size, std::size_t min_freq = 1) {
  if (max_size < Vocab::num_specials + 1) {
    throw std::invalid_argument("build_vocab: max_size must be at least 5 to fit the special tokens");
  }
  if (sentences.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& t : s) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>", "<unk>"};
  for (const auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    if (n < min_freq) continue;
    if (tok == "<pad>" || tok == "<bos>" || tok == "<eos>" || tok == "<unk>") continue;
    tokens.push_back(tok);
  }
  return Vocab::from_tokens(std::move(tokens));
}

inline Vocab build_vocab(const std::vector<Episode>& episodes, std::size_t max_size, std::size_t min_freq = 1) {
  std::vector<Tokens> sentences;
  for (const auto& e : episodes)
    for (const auto& t : e.turns) {
      sentences.push_back(t.apprentice);
      sentences.push_back(t.wizard);
      for (const auto& s : t.pool.sentences) sentences.push_back(s);
    }
  return build_vocab(sentences, max_size, min_freq);
}

}  // namespace skt::corpus
