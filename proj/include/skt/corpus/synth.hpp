#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "skt/corpus/types.hpp"
#include "skt/nn/rng.hpp"

// Desk-scale dialogue generator with controllable one-to-many structure.
//
// Every pool sentence reads "<topic> <cue> f1 .. f5". Sentences are grouped by
// cue into groups of `multimodality` members; the apprentice names a cue, so
// exactly that many sentences fit the context. The gold sentence is drawn
// among them, and the wizard response copies `copy_rate` of its content words
// from the gold sentence. With `history_dependent`, a sentence chosen earlier
// in the episode is never gold again until its group is exhausted.

namespace skt::corpus {

struct SynthConfig {
  std::size_t episodes = 100;
  std::size_t topics = 20;
  std::size_t turns = 5;
  std::size_t pool_size = 10;     // L, including the sentinel
  std::size_t multimodality = 1;  // m
  double copy_rate = 0.8;         // r
  std::size_t vocab_size = 200;   // content-word inventory
  std::size_t cue_words = 24;
  std::size_t fact_length = 5;
  bool history_dependent = false;
  Split split = Split::train;
  std::uint64_t seed = 0;
};

inline void check(const SynthConfig& cfg) {
  if (cfg.pool_size < 2) throw std::invalid_argument("synth: pool_size must be at least 2");
  const std::size_t listed = cfg.pool_size - 1;
  if (cfg.multimodality < 1 || cfg.multimodality > listed) {
    throw std::invalid_argument("synth: multimodality must lie in [1, pool_size - 1]");
  }
  if (cfg.copy_rate < 0.0 || cfg.copy_rate > 1.0) throw std::invalid_argument("synth: copy_rate must lie in [0, 1]");
  if (cfg.turns < 1 || cfg.topics < 1 || cfg.episodes < 1) throw std::invalid_argument("synth: empty configuration");
  if (cfg.cue_words < (listed + cfg.multimodality - 1) / cfg.multimodality) {
    throw std::invalid_argument("synth: not enough cue words for the pool's groups");
  }
  if (cfg.vocab_size < 2 * cfg.fact_length) throw std::invalid_argument("synth: vocab_size too small");
}

// Words used by the generator that carry no knowledge content.
inline bool is_synthetic_content_word(const std::string& w) {
  return w.size() > 1 && w[0] == 'w' && std::all_of(w.begin() + 1, w.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline std::size_t copied_word_count(const SynthConfig& cfg) {
  return static_cast<std::size_t>(std::ceil(cfg.copy_rate * static_cast<double>(cfg.fact_length) - 1e-9));
}

inline std::vector<Episode> generate_synthetic(const SynthConfig& cfg) {
  check(cfg);
  nn::Rng rng(cfg.seed);
  const std::size_t listed = cfg.pool_size - 1;
  const std::size_t groups = (listed + cfg.multimodality - 1) / cfg.multimodality;
  const std::size_t copied = copied_word_count(cfg);

  static const std::vector<Tokens> questions{
      {"tell", "me", "about", "{topic}", "{cue}", "?"},
      {"what", "do", "you", "know", "about", "{cue}", "?"},
      {"i", "wonder", "about", "the", "{cue}", "of", "{topic}", "."},
      {"any", "facts", "on", "{cue}", "?"},
  };
  static const std::vector<Tokens> openers{{"well", ","}, {"i", "know", "that"}, {"actually", ","}, {"so", ","}};

  auto content_word = [&](std::size_t i) { return "w" + std::to_string(i); };

  std::vector<Episode> out;
  out.reserve(cfg.episodes);
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    Episode ep;
    const std::string topic = "t" + std::to_string(rng.below(cfg.topics));
    ep.topic = topic;
    ep.split = cfg.split;

    // Cues: one per group, distinct within the episode.
    std::vector<std::size_t> cue_pick(cfg.cue_words);
    for (std::size_t i = 0; i < cue_pick.size(); ++i) cue_pick[i] = i;
    rng.shuffle(cue_pick);

    // Sentences; group g owns listed positions [g*m, min((g+1)*m, listed)).
    std::vector<Tokens> sentences(listed);
    std::vector<std::vector<std::string>> facts(listed);
    std::vector<std::size_t> group_of(listed);
    for (std::size_t s = 0; s < listed; ++s) {
      group_of[s] = s / cfg.multimodality;
      std::set<std::size_t> words;
      while (words.size() < cfg.fact_length) words.insert(rng.below(cfg.vocab_size));
      std::vector<std::size_t> ordered(words.begin(), words.end());
      rng.shuffle(ordered);
      sentences[s] = {topic, "c" + std::to_string(cue_pick[group_of[s]])};
      for (auto w : ordered) {
        facts[s].push_back(content_word(w));
        sentences[s].push_back(content_word(w));
      }
    }
    // Present the pool in shuffled order; pool_pos[s] is s's listed slot.
    std::vector<std::size_t> order(listed);
    for (std::size_t i = 0; i < listed; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::size_t> pool_pos(listed);
    std::vector<Tokens> listed_sentences(listed);
    for (std::size_t slot = 0; slot < listed; ++slot) {
      pool_pos[order[slot]] = slot;
      listed_sentences[slot] = sentences[order[slot]];
    }
    const KnowledgePool pool = KnowledgePool::with_sentinel(listed_sentences);

    std::vector<bool> used(listed, false);
    for (std::size_t t = 0; t < cfg.turns; ++t) {
      // Pick the group the apprentice asks about.
      std::vector<std::size_t> open_groups;
      for (std::size_t g = 0; g < groups; ++g) {
        bool any = false;
        for (std::size_t s = 0; s < listed; ++s) any = any || (group_of[s] == g && !(cfg.history_dependent && used[s]));
        if (any) open_groups.push_back(g);
      }
      if (open_groups.empty()) {
        std::fill(used.begin(), used.end(), false);
        for (std::size_t g = 0; g < groups; ++g) open_groups.push_back(g);
      }
      const std::size_t g = open_groups[rng.below(open_groups.size())];
      std::vector<std::size_t> candidates;
      for (std::size_t s = 0; s < listed; ++s) {
        if (group_of[s] == g && !(cfg.history_dependent && used[s])) candidates.push_back(s);
      }
      const std::size_t gold = candidates[rng.below(candidates.size())];
      used[gold] = true;
      const std::string& cue = sentences[gold][1];

      Turn turn;
      for (const auto& w : questions[rng.below(questions.size())]) {
        turn.apprentice.push_back(w == "{topic}" ? topic : w == "{cue}" ? cue : w);
      }
      turn.wizard = openers[rng.below(openers.size())];
      std::vector<std::size_t> pick(cfg.fact_length);
      for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
      rng.shuffle(pick);
      std::sort(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(copied));
      std::set<std::string> gold_words(facts[gold].begin(), facts[gold].end());
      for (std::size_t i = 0; i < cfg.fact_length; ++i) {
        if (i < copied) {
          turn.wizard.push_back(facts[gold][pick[i]]);
        } else {
          std::string w;
          do {
            w = content_word(rng.below(cfg.vocab_size));
          } while (gold_words.count(w));
          turn.wizard.push_back(w);
        }
      }
      turn.wizard.push_back(".");
      turn.pool = pool;
      turn.gold = pool_pos[gold] + 1;
      turn.references = {turn.wizard};
      ep.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(ep));
  }
  return out;
}

}  // namespace skt::corpus
