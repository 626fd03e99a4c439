#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "skt/nn/ops.hpp"
#include "skt/nn/rng.hpp"

// Masked categorical distributions over a single axis: normalization,
// divergences, smoothed targets and Gumbel-Softmax sampling.

namespace skt::nn {

template <typename T>
Tensor<T> softmax_masked(const Tensor<T>& logits, const Mask& mask) {
  detail::require(logits.rank() == 1, "softmax_masked", "expected a vector");
  detail::require(mask.size() == logits.numel(), "softmax_masked", "mask size mismatch");
  return softmax_rows(logits, mask);
}

// Row-wise log-softmax. Masked entries are reported as exactly 0 (they carry
// no probability mass and are skipped by every consumer below).
template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits, const Mask& mask = {}) {
  const auto [r, c] = detail::matrix_dims(logits);
  detail::require(mask.empty() || mask.size() == logits.numel(), "log_softmax", "mask size mismatch");
  std::vector<T> out(r * c, T(0));
  std::vector<T> probs(r * c, T(0));
  const auto x = logits.data();
  for (std::size_t i = 0; i < r; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask.empty() || mask[i * c + j]) {
        mx = std::max(mx, x[i * c + j]);
        any = true;
      }
    }
    detail::require(any, "log_softmax", "row " + std::to_string(i) + " has no unmasked entry");
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask.empty() || mask[i * c + j]) z += std::exp(x[i * c + j] - mx);
    }
    const T lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      if (mask.empty() || mask[i * c + j]) {
        out[i * c + j] = x[i * c + j] - lz;
        probs[i * c + j] = std::exp(out[i * c + j]);
      }
    }
  }
  return detail::record<T>(logits.shape(), std::move(out), {logits},
                           [r, c, mask, probs = std::move(probs)](Node<T>& self) {
                             T* g = detail::grad_of(self, 0);
                             if (!g) return;
                             for (std::size_t i = 0; i < r; ++i) {
                               T s = 0;
                               for (std::size_t j = 0; j < c; ++j) {
                                 if (mask.empty() || mask[i * c + j]) s += self.grad[i * c + j];
                               }
                               for (std::size_t j = 0; j < c; ++j) {
                                 if (mask.empty() || mask[i * c + j]) {
                                   g[i * c + j] += self.grad[i * c + j] - probs[i * c + j] * s;
                                 }
                               }
                             }
                           });
}

// KL(q || p) for probability vectors over the unmasked support.
template <typename T>
Tensor<T> kl_categorical(const Tensor<T>& q, const Tensor<T>& p, const Mask& mask) {
  detail::require_same_shape(q, p, "kl_categorical");
  detail::require(mask.size() == q.numel(), "kl_categorical", "mask size mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < q.numel(); ++i) {
    if (!mask[i] || q.data()[i] <= T(0)) continue;
    detail::require(p.data()[i] > T(0), "kl_categorical",
                    "support violation at index " + std::to_string(i) + " (q > 0, p = 0)");
    acc += q.data()[i] * (std::log(q.data()[i]) - std::log(p.data()[i]));
  }
  return detail::record<T>({}, {acc}, {q, p}, [mask](Node<T>& self) {
    const auto& qv = self.inputs[0]->value;
    const auto& pv = self.inputs[1]->value;
    T* gq = detail::grad_of(self, 0);
    T* gp = detail::grad_of(self, 1);
    for (std::size_t i = 0; i < qv.size(); ++i) {
      if (!mask[i] || qv[i] <= T(0)) continue;
      if (gq) gq[i] += self.grad[0] * (std::log(qv[i]) - std::log(pv[i]) + T(1));
      if (gp) gp[i] -= self.grad[0] * qv[i] / pv[i];
    }
  });
}

// exp() restricted to the mask; masked outputs are exactly zero.
template <typename T>
Tensor<T> exp_masked(const Tensor<T>& a, const Mask& mask) {
  detail::require(mask.empty() || mask.size() == a.numel(), "exp_masked", "mask size mismatch");
  std::vector<T> out(a.numel(), T(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask.empty() || mask[i]) out[i] = std::exp(a.data()[i]);
  }
  return detail::record<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i] * self.value[i];
    }
  });
}

// KL between the distributions defined by two logit vectors; stable under
// extreme logits because it stays in the log domain.
template <typename T>
Tensor<T> kl_categorical_logits(const Tensor<T>& q_logits, const Tensor<T>& p_logits, const Mask& mask) {
  const auto log_q = log_softmax_rows(q_logits, mask);
  const auto log_p = log_softmax_rows(p_logits, mask);
  return sum(mul(exp_masked(log_q, mask), sub(log_q, log_p)));
}

// Smoothed-target negative log-likelihood for each row of `log_probs` [n x C].
// The gold class gets 1 - eps and the remaining eps is spread evenly over the
// other unmasked classes. Returns per-row losses [n].
template <typename T>
Tensor<T> smoothed_nll_rows(const Tensor<T>& log_probs, const std::vector<std::size_t>& gold, T eps,
                            const Mask& mask = {}) {
  const auto [r, c] = detail::matrix_dims(log_probs);
  detail::require(gold.size() == r, "smoothed_nll", "one gold index per row required");
  detail::require(eps >= T(0) && eps < T(1), "smoothed_nll", "smoothing must lie in [0, 1)");
  std::vector<T> target(r * c, T(0));
  for (std::size_t i = 0; i < r; ++i) {
    detail::require(gold[i] < c, "smoothed_nll", "gold index " + std::to_string(gold[i]) + " out of range");
    detail::require(mask.empty() || mask[i * c + gold[i]], "smoothed_nll", "gold index is masked");
    std::size_t classes = 0;
    for (std::size_t j = 0; j < c; ++j) classes += (mask.empty() || mask[i * c + j]) ? 1 : 0;
    const T spread = classes > 1 ? eps / static_cast<T>(classes - 1) : T(0);
    for (std::size_t j = 0; j < c; ++j) {
      if (!(mask.empty() || mask[i * c + j])) continue;
      target[i * c + j] = j == gold[i] ? (classes > 1 ? T(1) - eps : T(1)) : spread;
    }
  }
  std::vector<T> out(r, T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      if (target[i * c + j] != T(0)) out[i] -= target[i * c + j] * log_probs.data()[i * c + j];
    }
  return detail::record<T>({r}, std::move(out), {log_probs}, [r, c, target = std::move(target)](Node<T>& self) {
    if (T* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] -= self.grad[i] * target[i * c + j];
    }
  });
}

// Cross entropy of a probability vector against the smoothed one-hot target.
template <typename T>
Tensor<T> smoothed_cross_entropy(const Tensor<T>& probs, std::size_t gold, T eps) {
  detail::require(probs.rank() == 1, "smoothed_cross_entropy", "expected a vector");
  detail::require(gold < probs.numel(), "smoothed_cross_entropy",
                  "gold index " + std::to_string(gold) + " out of range " + std::to_string(probs.numel()));
  return sum(smoothed_nll_rows(log(probs), {gold}, eps));
}

template <typename T>
std::size_t argmax_masked(std::span<const T> values, const Mask& mask) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (!best || values[i] > values[*best]) best = i;
  }
  detail::require(best.has_value(), "argmax", "no unmasked entry");
  return *best;
}

template <typename T>
struct GumbelSample {
  Tensor<T> soft;     // softmax((logits + g) / tau) over the unmasked entries
  Tensor<T> weights;  // value fed forward: one-hot (straight-through) or soft
  std::size_t index;  // argmax of the perturbed logits
};

// Gumbel-Softmax with caller-provided noise g (one value per entry).
template <typename T>
GumbelSample<T> gumbel_softmax_with_noise(const Tensor<T>& logits, const Mask& mask, T tau, bool hard,
                                          const std::vector<T>& noise) {
  detail::require(tau > T(0), "gumbel_softmax", "temperature must be positive");
  detail::require(noise.size() == logits.numel(), "gumbel_softmax", "noise size mismatch");
  const auto perturbed = add(logits, Tensor<T>::from(logits.shape(), noise));
  const auto soft = softmax_masked(scale(perturbed, T(1) / tau), mask);
  const std::size_t index = argmax_masked<T>(perturbed.data(), mask);
  if (!hard) {
    return {soft, soft, index};
  }
  std::vector<T> onehot(logits.numel(), T(0));
  onehot[index] = T(1);
  return {soft, straight_through(std::move(onehot), soft), index};
}

template <typename T>
GumbelSample<T> gumbel_softmax_sample(const Tensor<T>& logits, const Mask& mask, T tau, bool hard, Rng& rng) {
  detail::require(tau > T(0), "gumbel_softmax", "temperature must be positive");
  std::vector<T> noise(logits.numel());
  for (auto& g : noise) g = static_cast<T>(rng.gumbel());
  return gumbel_softmax_with_noise(logits, mask, tau, hard, noise);
}

}  // namespace skt::nn
