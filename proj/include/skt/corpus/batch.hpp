#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "skt/corpus/types.hpp"
#include "skt/corpus/vocab.hpp"
#include "skt/nn/rng.hpp"

namespace skt::corpus {

struct EncodedTurn {
  Ids x;
  Ids y;
  std::vector<Ids> pool;
  std::optional<std::size_t> gold;
  std::vector<std::size_t> golds;  // every acceptable index (empty when unlabeled)
};

struct EncodedEpisode {
  std::vector<EncodedTurn> turns;
};

inline EncodedEpisode encode(const Episode& e, const Vocab& vocab) {
  EncodedEpisode out;
  for (const auto& t : e.turns) {
    EncodedTurn et;
    et.x = vocab.encode(t.apprentice);
    et.y = vocab.encode(t.wizard);
    for (const auto& s : t.pool.sentences) et.pool.push_back(vocab.encode(s));
    et.gold = t.gold;
    et.golds = t.golds();
    out.turns.push_back(std::move(et));
  }
  return out;
}

// Dialogues padded to common extents. Layouts (row-major):
//   x, y:       [B x turns x max_{x,y}_len]      lengths in x_len / y_len [B x turns]
//   pool:       [B x turns x max_pool x max_sent] lengths in sent_len      [B x turns x max_pool]
//   pool_size:  [B x turns]; turn_mask, labeled, gold: [B x turns]
struct Batch {
  std::vector<std::size_t> episode_index;
  std::size_t max_turns = 0;
  std::size_t max_x = 0;
  std::size_t max_y = 0;
  std::size_t max_pool = 0;
  std::size_t max_sent = 0;
  std::vector<std::int32_t> x, y, pool;
  std::vector<std::int32_t> x_len, y_len, sent_len, pool_size;
  std::vector<std::uint8_t> turn_mask, labeled;
  std::vector<std::int32_t> gold;
  std::vector<std::vector<std::vector<std::size_t>>> golds;  // [B][turns]

  std::size_t size() const { return episode_index.size(); }
};

inline Batch make_batch(const std::vector<EncodedEpisode>& data, const std::vector<std::size_t>& members) {
  Batch b;
  b.episode_index = members;
  for (auto i : members) {
    const auto& e = data[i];
    b.max_turns = std::max(b.max_turns, e.turns.size());
    for (const auto& t : e.turns) {
      b.max_x = std::max(b.max_x, t.x.size());
      b.max_y = std::max(b.max_y, t.y.size());
      b.max_pool = std::max(b.max_pool, t.pool.size());
      for (const auto& s : t.pool) b.max_sent = std::max(b.max_sent, s.size());
    }
  }
  const std::size_t B = members.size();
  const std::size_t T = b.max_turns;
  const auto pad = static_cast<std::int32_t>(Vocab::pad);
  b.x.assign(B * T * b.max_x, pad);
  b.y.assign(B * T * b.max_y, pad);
  b.pool.assign(B * T * b.max_pool * b.max_sent, pad);
  b.x_len.assign(B * T, 0);
  b.y_len.assign(B * T, 0);
  b.sent_len.assign(B * T * b.max_pool, 0);
  b.pool_size.assign(B * T, 0);
  b.turn_mask.assign(B * T, 0);
  b.labeled.assign(B * T, 0);
  b.gold.assign(B * T, -1);
  b.golds.assign(B, std::vector<std::vector<std::size_t>>(T));
  for (std::size_t bi = 0; bi < B; ++bi) {
    const auto& e = data[members[bi]];
    for (std::size_t t = 0; t < e.turns.size(); ++t) {
      const auto& turn = e.turns[t];
      const std::size_t bt = bi * T + t;
      b.turn_mask[bt] = 1;
      b.x_len[bt] = static_cast<std::int32_t>(turn.x.size());
      b.y_len[bt] = static_cast<std::int32_t>(turn.y.size());
      for (std::size_t k = 0; k < turn.x.size(); ++k) b.x[bt * b.max_x + k] = static_cast<std::int32_t>(turn.x[k]);
      for (std::size_t k = 0; k < turn.y.size(); ++k) b.y[bt * b.max_y + k] = static_cast<std::int32_t>(turn.y[k]);
      b.pool_size[bt] = static_cast<std::int32_t>(turn.pool.size());
      for (std::size_t l = 0; l < turn.pool.size(); ++l) {
        const std::size_t btl = bt * b.max_pool + l;
        b.sent_len[btl] = static_cast<std::int32_t>(turn.pool[l].size());
        for (std::size_t k = 0; k < turn.pool[l].size(); ++k) {
          b.pool[btl * b.max_sent + k] = static_cast<std::int32_t>(turn.pool[l][k]);
        }
      }
      if (turn.gold) {
        b.labeled[bt] = 1;
        b.gold[bt] = static_cast<std::int32_t>(*turn.gold);
      }
      b.golds[bi][t] = turn.golds;
    }
  }
  return b;
}

// Groups whole dialogues into batches after a seeded shuffle.
inline std::vector<Batch> make_batches(const std::vector<EncodedEpisode>& data, std::size_t batch_size,
                                       std::uint64_t seed, bool shuffle = true) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be positive");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    nn::Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(data, {order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end)}));
  }
  return out;
}

// Recovers the unpadded episode stored at position `bi` of a batch.
inline EncodedEpisode unbatch(const Batch& b, std::size_t bi) {
  EncodedEpisode e;
  const std::size_t T = b.max_turns;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t bt = bi * T + t;
    if (!b.turn_mask[bt]) break;
    EncodedTurn turn;
    for (std::int32_t k = 0; k < b.x_len[bt]; ++k) turn.x.push_back(static_cast<std::size_t>(b.x[bt * b.max_x + k]));
    for (std::int32_t k = 0; k < b.y_len[bt]; ++k) turn.y.push_back(static_cast<std::size_t>(b.y[bt * b.max_y + k]));
    for (std::int32_t l = 0; l < b.pool_size[bt]; ++l) {
      const std::size_t btl = bt * b.max_pool + static_cast<std::size_t>(l);
      Ids s;
      for (std::int32_t k = 0; k < b.sent_len[btl]; ++k) s.push_back(static_cast<std::size_t>(b.pool[btl * b.max_sent + k]));
      turn.pool.push_back(std::move(s));
    }
    if (b.labeled[bt]) turn.gold = static_cast<std::size_t>(b.gold[bt]);
    turn.golds = b.golds[bi][t];
    e.turns.push_back(std::move(turn));
  }
  return e;
}

}  // namespace skt::corpus
