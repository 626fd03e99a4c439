#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace skt::corpus {

using Tokens = std::vector<std::string>;

// Literal text of the pool entry meaning "no passage was used".
inline const Tokens& no_passages_used() {
  static const Tokens sentinel{"no", "passages", "used"};
  return sentinel;
}

enum class Split { train, valid, test_seen, test_unseen };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test_seen: return "test-seen";
    case Split::test_unseen: return "test-unseen";
  }
  return "train";
}

inline std::optional<Split> parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test-seen") return Split::test_seen;
  if (s == "test-unseen") return Split::test_unseen;
  return std::nullopt;
}

// Candidate sentences of one turn. Index 0 is always the sentinel.
struct KnowledgePool {
  std::vector<Tokens> sentences;
  std::vector<std::string> source_ids;

  std::size_t size() const { return sentences.size(); }

  // Pool with the sentinel prepended to `listed`.
  static KnowledgePool with_sentinel(std::vector<Tokens> listed, std::vector<std::string> ids = {}) {
    KnowledgePool p;
    p.sentences.reserve(listed.size() + 1);
    p.sentences.push_back(no_passages_used());
    for (auto& s : listed) p.sentences.push_back(std::move(s));
    p.source_ids.push_back("no_passages_used");
    for (std::size_t i = 0; i < listed.size(); ++i) {
      p.source_ids.push_back(i < ids.size() ? ids[i] : std::to_string(i + 1));
    }
    return p;
  }
};

struct Turn {
  Tokens apprentice;  // x^t
  Tokens wizard;      // y^t
  KnowledgePool pool;
  std::optional<std::size_t> gold;     // k_a^t; unset for unlabeled turns
  std::vector<std::size_t> alt_golds;  // further acceptable indices (multi-reference sets)
  std::vector<Tokens> references;      // references[0] == wizard

  std::vector<std::size_t> golds() const {
    std::vector<std::size_t> out;
    if (gold) out.push_back(*gold);
    out.insert(out.end(), alt_golds.begin(), alt_golds.end());
    return out;
  }
};

struct Episode {
  std::string topic;
  Split split = Split::train;
  std::vector<Turn> turns;
};

// Throws std::invalid_argument describing the first violated invariant.
inline void validate(const Episode& e) {
  if (e.turns.empty()) throw std::invalid_argument("episode '" + e.topic + "' has no turns");
  for (std::size_t t = 0; t < e.turns.size(); ++t) {
    const auto& turn = e.turns[t];
    const std::string where = "episode '" + e.topic + "' turn " + std::to_string(t + 1);
    if (turn.pool.sentences.empty() || turn.pool.sentences[0] != no_passages_used()) {
      throw std::invalid_argument(where + ": pool must start with the sentinel");
    }
    for (auto g : turn.golds()) {
      if (g >= turn.pool.size()) throw std::invalid_argument(where + ": gold index out of range");
    }
    if (turn.references.empty() || turn.references[0] != turn.wizard) {
      throw std::invalid_argument(where + ": first reference must equal the wizard utterance");
    }
  }
}

}  // namespace skt::corpus
