#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "skt/corpus/batch.hpp"
#include "skt/eval/metrics.hpp"
#include "skt/model/model.hpp"

namespace skt::eval {

inline constexpr std::size_t turn_buckets = 5;  // 1st .. 4th, 5th and later

// Knowledge the decoder conditions on while scoring gold responses.
enum class PplKnowledge { prior, gold };

struct EvalOptions {
  PplKnowledge ppl_knowledge = PplKnowledge::prior;
  bool generate = true;
  std::size_t max_len = 40;
  model::DecodeOverrides overrides;
};

struct TurnRecord {
  std::size_t turn = 0;  // 1-based
  std::size_t predicted = 0;
  std::vector<std::size_t> golds;
  std::vector<double> prior;
  double nll = 0.0;  // summed over response tokens plus EOS
  std::size_t tokens = 0;
  Tokens generated;
  double r1 = 0.0;
  double r2 = 0.0;

  bool labeled() const { return !golds.empty(); }
  bool correct() const { return std::find(golds.begin(), golds.end(), predicted) != golds.end(); }
};

// Runs the test-time pipeline over one dialogue: prior-argmax selection with
// the selected history, gold responses folded into the dialogue state.
template <typename T>
std::vector<TurnRecord> score_episode(const model::SktModel<T>& m, const corpus::Episode& ep,
                                      const corpus::Vocab& vocab, const EvalOptions& opt = {}) {
  nn::NoGradGuard no_grad;
  const auto enc = corpus::encode(ep, vocab);
  auto state = model::InferenceState<T>::initial(m.d_model());
  std::vector<TurnRecord> out;
  for (std::size_t t = 0; t < enc.turns.size(); ++t) {
    const auto& turn = enc.turns[t];
    auto pt = model::prior_turn(m, state, turn.x, turn.pool);
    TurnRecord rec;
    rec.turn = t + 1;
    rec.predicted = pt.selected;
    rec.golds = turn.golds;
    rec.prior.assign(pt.prior.probs.data().begin(), pt.prior.probs.data().end());

    std::size_t conditioned = pt.selected;
    if (opt.ppl_knowledge == PplKnowledge::gold && turn.gold) conditioned = *turn.gold;
    const auto target = model::with_eos(turn.y);
    const auto scored = model::fixed_selection_memory(m, pt.encoding, conditioned);
    const auto nll = model::sequence_nll(scored, target, m.encoder.embedding, m.decoder, T(0), opt.overrides);
    for (T v : nll.data()) rec.nll += static_cast<double>(v);
    rec.tokens = target.size();

    if (opt.generate) {
      const auto memory = conditioned == pt.selected ? scored : model::fixed_selection_memory(m, pt.encoding, pt.selected);
      const auto g = model::generate(memory, m.encoder.embedding, m.decoder, opt.max_len, opt.overrides);
      rec.generated = vocab.decode(g.tokens);
      const auto& refs = ep.turns[t].references;
      const std::vector<Tokens> r = refs.empty() ? std::vector<Tokens>{ep.turns[t].wizard} : refs;
      rec.r1 = unigram_f1(rec.generated, r);
      rec.r2 = bigram_f1(rec.generated, r);
    }
    state = model::advance(m, state, pt, turn.x, turn.y);
    out.push_back(std::move(rec));
  }
  return out;
}

template <typename T>
std::vector<TurnRecord> score_episodes(const model::SktModel<T>& m, const std::vector<corpus::Episode>& episodes,
                                       const corpus::Vocab& vocab, const EvalOptions& opt = {}) {
  std::vector<TurnRecord> all;
  for (const auto& ep : episodes) {
    auto recs = score_episode(m, ep, vocab, opt);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  return all;
}

inline double perplexity_of(const std::vector<TurnRecord>& records) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& r : records) {
    nll += r.nll;
    tokens += r.tokens;
  }
  if (tokens == 0) throw std::invalid_argument("perplexity: no tokens to evaluate");
  return std::exp(nll / static_cast<double>(tokens));
}

struct Accuracy {
  double overall = 0.0;
  std::vector<double> per_turn;  // NaN where a bucket has no labeled turns
  std::vector<std::size_t> per_turn_count;
  std::size_t labeled = 0;
};

inline Accuracy accuracy_of(const std::vector<TurnRecord>& records) {
  Accuracy a;
  a.per_turn.assign(turn_buckets, 0.0);
  a.per_turn_count.assign(turn_buckets, 0);
  std::size_t correct = 0;
  for (const auto& r : records) {
    if (!r.labeled()) continue;
    const std::size_t b = std::min(r.turn, turn_buckets) - 1;
    ++a.labeled;
    ++a.per_turn_count[b];
    if (r.correct()) {
      ++correct;
      a.per_turn[b] += 1.0;
    }
  }
  if (a.labeled == 0) throw std::invalid_argument("selection accuracy: no labeled turns");
  a.overall = static_cast<double>(correct) / static_cast<double>(a.labeled);
  for (std::size_t b = 0; b < turn_buckets; ++b) {
    a.per_turn[b] = a.per_turn_count[b] ? a.per_turn[b] / static_cast<double>(a.per_turn_count[b])
                                        : std::numeric_limits<double>::quiet_NaN();
  }
  return a;
}

template <typename T>
double perplexity(const model::SktModel<T>& m, const std::vector<corpus::Episode>& episodes,
                  const corpus::Vocab& vocab, EvalOptions opt = {}) {
  opt.generate = false;
  return perplexity_of(score_episodes(m, episodes, vocab, opt));
}

template <typename T>
Accuracy selection_accuracy(const model::SktModel<T>& m, const std::vector<corpus::Episode>& episodes,
                            const corpus::Vocab& vocab) {
  EvalOptions opt;
  opt.generate = false;
  return accuracy_of(score_episodes(m, episodes, vocab, opt));
}

struct EvalReport {
  std::string split;
  std::size_t episodes = 0;
  std::size_t turns = 0;
  double ppl = 0.0;
  double r1 = 0.0;  // fractions in [0, 1]; rendered as percentages
  double r2 = 0.0;
  Accuracy accuracy;

  nlohmann::json to_json() const {
    nlohmann::json per_turn = nlohmann::json::array();
    for (double v : accuracy.per_turn) per_turn.push_back(std::isnan(v) ? nlohmann::json() : nlohmann::json(100.0 * v));
    return {{"split", split},
            {"episodes", episodes},
            {"turns", turns},
            {"labeled_turns", accuracy.labeled},
            {"ppl", ppl},
            {"r1", 100.0 * r1},
            {"r2", 100.0 * r2},
            {"accuracy", 100.0 * accuracy.overall},
            {"per_turn_accuracy", per_turn},
            {"per_turn_count", accuracy.per_turn_count}};
  }

  std::string to_table() const {
    std::ostringstream os;
    auto line = [&](const std::string& key, const std::string& value) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%-14s %s\n", key.c_str(), value.c_str());
      os << buf;
    };
    auto num = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f", v);
      return std::string(buf);
    };
    line("split", split);
    line("episodes", std::to_string(episodes));
    line("turns", std::to_string(turns));
    line("ppl", num(ppl));
    line("r1", num(100.0 * r1));
    line("r2", num(100.0 * r2));
    line("accuracy", num(100.0 * accuracy.overall));
    for (std::size_t b = 0; b < turn_buckets; ++b) {
      const std::string key = "acc_turn_" + std::to_string(b + 1) + (b + 1 == turn_buckets ? "+" : "");
      line(key, std::isnan(accuracy.per_turn[b]) ? "-" : num(100.0 * accuracy.per_turn[b]));
    }
    return os.str();
  }
};

template <typename T>
EvalReport evaluate_split(const model::SktModel<T>& m, const std::vector<corpus::Episode>& episodes,
                          const corpus::Vocab& vocab, const EvalOptions& opt = {}) {
  EvalOptions o = opt;
  o.generate = true;
  const auto records = score_episodes(m, episodes, vocab, o);
  EvalReport r;
  r.split = episodes.empty() ? "" : corpus::to_string(episodes.front().split);
  r.episodes = episodes.size();
  r.turns = records.size();
  r.ppl = perplexity_of(records);
  for (const auto& rec : records) {
    r.r1 += rec.r1;
    r.r2 += rec.r2;
  }
  r.r1 /= static_cast<double>(records.size());
  r.r2 /= static_cast<double>(records.size());
  r.accuracy = accuracy_of(records);
  return r;
}

}  // namespace skt::eval
