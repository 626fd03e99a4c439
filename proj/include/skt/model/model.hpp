#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skt/corpus/batch.hpp"
#include "skt/model/config.hpp"
#include "skt/model/decoder.hpp"
#include "skt/model/encoder.hpp"
#include "skt/model/selector.hpp"

namespace skt::model {

// All trainable parameters of the knowledge-grounded dialogue model.
template <typename T>
class SktModel {
 public:
  using Scalar = T;

  SktModel() = default;
  SktModel(const ModelConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.check();
    nn::Rng rng(seed);
    encoder = EncoderParams<T>(cfg, rng);
    selector = SelectorParams<T>(cfg, rng);
    decoder = DecoderParams<T>(cfg, rng);
  }

  const ModelConfig& config() const { return config_; }
  std::size_t d_model() const { return config_.d_model; }

  void visit(const nn::ParamVisitor<T>& f) {
    encoder.visit("encoder", f);
    selector.visit("selector", f);
    decoder.visit("decoder", f);
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
    return out;
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    visit([&](const std::string&, Tensor<T>& t) { out.push_back(t); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  // Same architecture in another scalar type with converted values.
  template <typename U>
  SktModel<U> cast() {
    SktModel<U> other(config_, 0);
    std::map<std::string, Tensor<T>> mine;
    visit([&](const std::string& name, Tensor<T>& t) { mine.emplace(name, t); });
    other.visit([&](const std::string& name, Tensor<U>& t) {
      const auto src = mine.at(name).data();
      auto dst = t.mutable_data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<U>(src[i]);
    });
    return other;
  }

  EncoderParams<T> encoder;
  SelectorParams<T> selector;
  DecoderParams<T> decoder;

 private:
  ModelConfig config_;
};

// Empty utterances (e.g. a wizard-first opening) are read as a lone EOS.
inline corpus::Ids nonempty(const corpus::Ids& ids) {
  return ids.empty() ? corpus::Ids{corpus::Vocab::eos} : ids;
}

// Encodings needed at one turn: context, optional response, and the pool.
template <typename T>
struct TurnEncoding {
  EncodedSentences<T> sentences;  // order: x, [y], pool...
  corpus::Ids x_ids;
  std::vector<corpus::Ids> pool_ids;
  std::size_t pool_offset = 1;
  bool has_response = false;

  Tensor<T> context_states() const { return sentences.tokens(0); }
  Tensor<T> h_x() const { return sentences.embedding(0); }
  Tensor<T> h_y() const { return sentences.embedding(1); }
  Tensor<T> pool() const { return nn::slice_rows(sentences.pooled, pool_offset, pool_ids.size()); }
  std::size_t pool_size() const { return pool_ids.size(); }
};

template <typename T>
TurnEncoding<T> encode_turn(const SktModel<T>& m, const corpus::Ids& x, const corpus::Ids* y,
                            const std::vector<corpus::Ids>& pool) {
  if (pool.empty()) throw std::invalid_argument("encode_turn: empty knowledge pool");
  TurnEncoding<T> te;
  te.x_ids = nonempty(x);
  te.has_response = y != nullptr;
  te.pool_offset = y ? 2 : 1;
  std::vector<corpus::Ids> all{te.x_ids};
  if (y) all.push_back(nonempty(*y));
  for (const auto& s : pool) {
    te.pool_ids.push_back(nonempty(s));
    all.push_back(te.pool_ids.back());
  }
  te.sentences = encode_sentences(all, m.encoder);
  return te;
}

// Decoder source for the selection `weights` (one-hot forward value) whose
// argmax is `selected`. Knowledge token rows are blended by the weights so
// that a straight-through gradient reaches the selection.
template <typename T>
SourceMemory<T> selection_memory(const SktModel<T>& m, const TurnEncoding<T>& te, const Tensor<T>& weights,
                                 std::size_t selected) {
  const std::size_t L = te.pool_size();
  const std::size_t len = te.pool_ids.at(selected).size();
  std::vector<std::ptrdiff_t> table(len * L, -1);
  for (std::size_t p = 0; p < len; ++p)
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t s = te.pool_offset + l;
      if (p < te.sentences.length[s]) table[p * L + l] = static_cast<std::ptrdiff_t>(te.sentences.offset[s] + p);
    }
  const auto knowledge = nn::weighted_row_mix(te.sentences.rows, weights, table, len);
  return make_memory(te.context_states(), te.x_ids, knowledge, te.pool_ids[selected], m.decoder);
}

template <typename T>
SourceMemory<T> fixed_selection_memory(const SktModel<T>& m, const TurnEncoding<T>& te, std::size_t selected) {
  std::vector<T> onehot(te.pool_size(), T(0));
  onehot.at(selected) = T(1);
  return selection_memory(m, te, Tensor<T>::vector(std::move(onehot)), selected);
}

// Test-time pipeline state carried across turns.
template <typename T>
struct InferenceState {
  DialogState<T> dialog;
  HistoryState<T> history;
  Tensor<T> last_selected;  // embedding of the previous turn's selection

  static InferenceState initial(std::size_t d) {
    return {DialogState<T>::initial(d), HistoryState<T>::initial(d), Tensor<T>::zeros({d})};
  }
};

template <typename T>
struct PriorTurn {
  KnowledgeDistribution<T> prior;
  std::size_t selected = 0;
  TurnEncoding<T> encoding;
  HistoryState<T> history;  // history state used for this turn's query
};

// Prior over the pool for the next turn given the carried state.
template <typename T>
PriorTurn<T> prior_turn(const SktModel<T>& m, const InferenceState<T>& st, const corpus::Ids& x,
                        const std::vector<corpus::Ids>& pool) {
  PriorTurn<T> out;
  out.encoding = encode_turn(m, x, nullptr, pool);
  const auto input = m.config().use_history ? st.last_selected : Tensor<T>::zeros({m.d_model()});
  out.history = history_step(st.history, input, m.selector);
  out.prior = prior_distribution(st.dialog.d_xy, out.encoding.h_x(), out.history.d_k, out.encoding.pool(), {},
                                 m.selector, st.dialog.turn + 1);
  out.selected = nn::argmax_masked<T>(out.prior.probs.data(), out.prior.mask);
  return out;
}

// Folds the observed response and the chosen knowledge into the state.
template <typename T>
InferenceState<T> advance(const SktModel<T>& m, const InferenceState<T>& st, const PriorTurn<T>& turn,
                          const corpus::Ids& x, const corpus::Ids& y) {
  const auto xy = encode_sentences<T>({nonempty(x), nonempty(y)}, m.encoder);
  InferenceState<T> next;
  next.dialog = dialog_step(st.dialog, xy.embedding(0), xy.embedding(1), m.encoder);
  next.history = turn.history;
  next.last_selected = nn::row(turn.encoding.pool(), turn.selected);
  return next;
}

}  // namespace skt::model
