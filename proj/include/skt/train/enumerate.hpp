#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "skt/corpus/batch.hpp"
#include "skt/model/model.hpp"

// Exact quantities over every knowledge sequence of an episode:
//
//   log p(y | x) = log sum_{k^1..k^T} prod_t pi(k^t | k^<t) p(y^t | x^t, k^t)
//
//   ELBO = E_{q(k^1..k^T)} [ sum_t log p(y^t | x^t, k^t) ] - sum_t E_{q(k^<t)} KL(q^t || pi^t)
//
// where q and pi at turn t depend on the earlier selections through the
// knowledge-history recurrence. Both are computed by recursion over the
// selection tree, so no sampling is involved.

namespace skt::train {

inline constexpr double max_enumerated_sequences = 1e4;

namespace detail {

template <typename T>
struct EnumTurn {
  model::TurnEncoding<T> encoding;
  Tensor<T> pool;
  Tensor<T> d_xy_prev;
  Tensor<T> d_xy;
  std::vector<double> log_lik;  // log p(y^t | x^t, k) for each pool entry k
};

inline double log_sum_exp(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
  const double z = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - z;
  return out;
}

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename T>
std::vector<EnumTurn<T>> prepare(const model::SktModel<T>& m, const corpus::EncodedEpisode& ep) {
  if (ep.turns.empty()) throw std::invalid_argument("enumerate: episode has no turns");
  double count = 1.0;
  for (const auto& t : ep.turns) count *= static_cast<double>(t.pool.size());
  if (count > max_enumerated_sequences) {
    throw std::invalid_argument("enumerate: " + std::to_string(static_cast<long long>(count)) +
                                " knowledge sequences exceed the limit of 10000");
  }
  std::vector<EnumTurn<T>> turns;
  auto dialog = model::DialogState<T>::initial(m.d_model());
  for (const auto& turn : ep.turns) {
    EnumTurn<T> et;
    et.encoding = model::encode_turn(m, turn.x, &turn.y, turn.pool);
    et.pool = et.encoding.pool();
    et.d_xy_prev = dialog.d_xy;
    dialog = model::dialog_step(dialog, et.encoding.h_x(), et.encoding.h_y(), m.encoder);
    et.d_xy = dialog.d_xy;
    const auto target = model::with_eos(turn.y);
    for (std::size_t k = 0; k < et.encoding.pool_size(); ++k) {
      const auto memory = model::fixed_selection_memory(m, et.encoding, k);
      const auto nll = model::sequence_nll(memory, target, m.encoder.embedding, m.decoder, T(0));
      et.log_lik.push_back(-static_cast<double>(nn::sum(nll).item()));
    }
    turns.push_back(std::move(et));
  }
  return turns;
}

template <typename T>
struct Recursion {
  const model::SktModel<T>& m;
  const std::vector<EnumTurn<T>>& turns;

  // d_k after consuming the previous selection, plus both log-distributions.
  struct Step {
    Tensor<T> d_k;
    std::vector<double> log_prior;
    std::vector<double> log_post;
  };

  Step step(std::size_t t, const Tensor<T>& d_k_prev, const Tensor<T>& last) const {
    const auto input = m.config().use_history ? last : Tensor<T>::zeros({m.d_model()});
    const auto d_k = nn::gru_cell_step(input, d_k_prev, m.selector.history);
    const auto& et = turns[t];
    const auto prior = model::prior_distribution(et.d_xy_prev, et.encoding.h_x(), d_k, et.pool, {}, m.selector);
    const auto post = model::posterior_distribution(et.d_xy, d_k, et.pool, {}, m.selector);
    return {d_k, log_softmax(to_doubles(prior.logits)), log_softmax(to_doubles(post.logits))};
  }

  double marginal(std::size_t t, const Tensor<T>& d_k_prev, const Tensor<T>& last) const {
    if (t == turns.size()) return 0.0;
    const auto s = step(t, d_k_prev, last);
    std::vector<double> terms;
    for (std::size_t k = 0; k < s.log_prior.size(); ++k) {
      terms.push_back(s.log_prior[k] + turns[t].log_lik[k] + marginal(t + 1, s.d_k, nn::row(turns[t].pool, k)));
    }
    return log_sum_exp(terms);
  }

  double elbo(std::size_t t, const Tensor<T>& d_k_prev, const Tensor<T>& last) const {
    if (t == turns.size()) return 0.0;
    const auto s = step(t, d_k_prev, last);
    double value = 0.0;
    for (std::size_t k = 0; k < s.log_post.size(); ++k) {
      const double q = std::exp(s.log_post[k]);
      if (q == 0.0) continue;
      value += q * (turns[t].log_lik[k] - (s.log_post[k] - s.log_prior[k]) +
                    elbo(t + 1, s.d_k, nn::row(turns[t].pool, k)));
    }
    return value;
  }
};

}  // namespace detail

// log p(y | x) summed exactly over all knowledge sequences under the prior.
template <typename T>
double enumerate_marginal(const model::SktModel<T>& m, const corpus::EncodedEpisode& ep) {
  nn::NoGradGuard no_grad;
  const auto turns = detail::prepare(m, ep);
  const auto zero = Tensor<T>::zeros({m.d_model()});
  return detail::Recursion<T>{m, turns}.marginal(0, zero, zero);
}

// Evidence lower bound with every expectation over q evaluated exactly.
template <typename T>
double exact_elbo(const model::SktModel<T>& m, const corpus::EncodedEpisode& ep) {
  nn::NoGradGuard no_grad;
  const auto turns = detail::prepare(m, ep);
  const auto zero = Tensor<T>::zeros({m.d_model()});
  return detail::Recursion<T>{m, turns}.elbo(0, zero, zero);
}

}  // namespace skt::train
