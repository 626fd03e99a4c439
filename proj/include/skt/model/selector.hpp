#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "skt/model/config.hpp"
#include "skt/nn/categorical.hpp"
#include "skt/nn/layers.hpp"

namespace skt::model {

using nn::Tensor;

template <typename T>
struct SelectorParams {
  std::size_t d_model = 0;
  bool scaled_scores = false;
  Tensor<T> w_prior;  // [d x 3d]: acts on [d_xy^{t-1}; h_x^t; d_k]
  Tensor<T> w_post;   // [d x 2d]: acts on [d_xy^t; d_k]
  nn::GruParams<T> history;

  SelectorParams() = default;
  SelectorParams(const ModelConfig& cfg, nn::Rng& rng)
      : d_model(cfg.d_model),
        scaled_scores(cfg.scaled_scores),
        w_prior(nn::xavier<T>(cfg.d_model, 3 * cfg.d_model, rng)),
        w_post(nn::xavier<T>(cfg.d_model, 2 * cfg.d_model, rng)),
        history(cfg.d_model, cfg.d_model, rng) {}

  void visit(const std::string& prefix, const nn::ParamVisitor<T>& f) {
    f(prefix + ".w_prior", w_prior);
    f(prefix + ".w_post", w_post);
    history.visit(prefix + ".gru_hist", f);
  }
};

template <typename T>
struct HistoryState {
  Tensor<T> d_k;  // hidden state of the knowledge-history GRU
  std::size_t turn = 0;

  static HistoryState initial(std::size_t d) { return {Tensor<T>::zeros({d}), 0}; }
};

// Consumes the embedding of the knowledge selected at the previous turn (the
// zero vector before the first turn).
template <typename T>
HistoryState<T> history_step(const HistoryState<T>& state, const Tensor<T>& selected, const SelectorParams<T>& p) {
  return {nn::gru_cell_step(selected, state.d_k, p.history), state.turn + 1};
}

enum class DistributionKind { prior, posterior };

template <typename T>
struct KnowledgeDistribution {
  Tensor<T> logits;
  Tensor<T> probs;
  nn::Mask mask;
  DistributionKind kind = DistributionKind::prior;
  std::size_t turn = 0;
};

namespace detail {

template <typename T>
KnowledgeDistribution<T> attend(const Tensor<T>& query, const Tensor<T>& pool, const nn::Mask& mask,
                                const SelectorParams<T>& p, DistributionKind kind, std::size_t turn) {
  if (pool.rank() != 2 || pool.dim(0) == 0 || pool.dim(1) != p.d_model) {
    throw std::invalid_argument("knowledge attention: pool embeddings must be [L x d_model]");
  }
  nn::Mask m = mask.empty() ? nn::Mask(pool.dim(0), 1) : mask;
  if (m.size() != pool.dim(0)) throw std::invalid_argument("knowledge attention: mask length mismatch");
  bool any = false;
  for (auto b : m) any = any || b;
  if (!any) throw std::invalid_argument("knowledge attention: every pool entry is masked");
  auto logits = nn::matvec(pool, query);
  if (p.scaled_scores) logits = nn::scale(logits, T(1) / std::sqrt(static_cast<T>(p.d_model)));
  auto probs = nn::softmax_masked(logits, m);
  return {logits, probs, std::move(m), kind, turn};
}

}  // namespace detail

// pi(k^t) = softmax(q_prior . h_k^{t,l}), q_prior = W_prior [d_xy^{t-1}; h_x^t; d_k]
template <typename T>
KnowledgeDistribution<T> prior_distribution(const Tensor<T>& d_xy_prev, const Tensor<T>& h_x, const Tensor<T>& d_k,
                                            const Tensor<T>& pool, const nn::Mask& mask, const SelectorParams<T>& p,
                                            std::size_t turn = 0) {
  const auto query = nn::matvec(p.w_prior, nn::hcat<T>({d_xy_prev, h_x, d_k}));
  return detail::attend(query, pool, mask, p, DistributionKind::prior, turn);
}

// q(k^t) = softmax(q_post . h_k^{t,l}), q_post = W_post [d_xy^t; d_k]
template <typename T>
KnowledgeDistribution<T> posterior_distribution(const Tensor<T>& d_xy, const Tensor<T>& d_k, const Tensor<T>& pool,
                                                const nn::Mask& mask, const SelectorParams<T>& p,
                                                std::size_t turn = 0) {
  const auto query = nn::matvec(p.w_post, nn::hcat<T>({d_xy, d_k}));
  return detail::attend(query, pool, mask, p, DistributionKind::posterior, turn);
}

enum class SelectMode { argmax, gumbel };

template <typename T>
struct SelectionResult {
  std::size_t index = 0;
  Tensor<T> weights;   // one-hot forward value; carries gradient in gumbel mode
  Tensor<T> soft;      // relaxed sample (gumbel) or the distribution (argmax)
  Tensor<T> embedding; // weights^T * pool == pool row `index`
};

// Argmax (ties -> lowest index) or a straight-through Gumbel-Softmax sample.
// `noise`, when given, replaces the Gumbel draws.
template <typename T>
SelectionResult<T> select_knowledge(const KnowledgeDistribution<T>& dist, const Tensor<T>& pool, SelectMode mode,
                                    T tau, nn::Rng* rng, const std::vector<T>* noise = nullptr, bool hard = true) {
  SelectionResult<T> out;
  if (mode == SelectMode::argmax) {
    out.index = nn::argmax_masked<T>(dist.probs.data(), dist.mask);
    std::vector<T> onehot(dist.probs.numel(), T(0));
    onehot[out.index] = T(1);
    out.weights = Tensor<T>::vector(std::move(onehot));
    out.soft = dist.probs;
  } else {
    nn::GumbelSample<T> s;
    if (noise) {
      s = nn::gumbel_softmax_with_noise(dist.logits, dist.mask, tau, hard, *noise);
    } else {
      if (!rng) throw std::invalid_argument("select_knowledge: gumbel mode needs a generator or fixed noise");
      s = nn::gumbel_softmax_sample(dist.logits, dist.mask, tau, hard, *rng);
    }
    out.index = s.index;
    out.weights = s.weights;
    out.soft = s.soft;
  }
  out.embedding = nn::reshape(nn::matmul(nn::reshape(out.weights, {1, out.weights.numel()}), pool), {pool.dim(1)});
  return out;
}

}  // namespace skt::model
