#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "skt/corpus/batch.hpp"
#include "skt/model/model.hpp"
#include "skt/nn/rng.hpp"
#include "skt/nn/tensor.hpp"

namespace skt::testing {

using nn::Tensor;

// |a - n| / max(|a|, |n|, floor): relative error that degrades to an absolute
// one for gradients near zero.
inline double rel_error(double analytic, double numeric, double floor = 1e-2) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

// Compares analytic gradients of `loss` with central differences for the
// given tensors. When `per_tensor` is nonzero only that many randomly chosen
// entries of each tensor are probed.
inline GradReport gradcheck(std::vector<std::pair<std::string, Tensor<double>>> inputs,
                            const std::function<Tensor<double>()>& loss, double h = 1e-3,
                            std::size_t per_tensor = 0, std::uint64_t seed = 0) {
  for (auto& [_, t] : inputs) t.zero_grad();
  nn::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (auto& [_, t] : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }
  GradReport r;
  nn::Rng rng(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k].second;
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (per_tensor && idx.size() > per_tensor) {
      rng.shuffle(idx);
      idx.resize(per_tensor);
    }
    for (auto i : idx) {
      auto v = t.mutable_data();
      const double orig = v[i];
      double plus, minus;
      {
        nn::NoGradGuard ng;
        v[i] = orig + h;
        plus = loss().item();
        v[i] = orig - h;
        minus = loss().item();
        v[i] = orig;
      }
      const double numeric = (plus - minus) / (2 * h);
      const double e = rel_error(analytic[k][i], numeric);
      ++r.checked;
      if (e > r.max_rel) {
        r.max_rel = e;
        r.worst = inputs[k].first + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[k][i]) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> random_tensor(nn::Shape shape, nn::Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<T> v(nn::numel_of(shape));
  for (auto& x : v) x = static_cast<T>(scale * rng.normal());
  return Tensor<T>::from(std::move(shape), std::move(v), requires_grad);
}

inline model::ModelConfig tiny_config(std::size_t vocab = 20, std::size_t d = 8) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d;
  c.heads = 2;
  c.decoder_blocks = 1;
  c.ffn_mult = 2;
  c.max_len = 8;
  return c;
}

// Random episode over ids [4, vocab): T turns with pools of L sentences.
inline corpus::EncodedEpisode random_episode(nn::Rng& rng, std::size_t turns, std::size_t pool, std::size_t vocab,
                                             bool labeled = true) {
  auto sentence = [&](std::size_t lo, std::size_t hi) {
    corpus::Ids s(lo + rng.below(hi - lo + 1));
    for (auto& id : s) id = 4 + rng.below(vocab - 4);
    return s;
  };
  corpus::EncodedEpisode ep;
  for (std::size_t t = 0; t < turns; ++t) {
    corpus::EncodedTurn et;
    et.x = sentence(1, 4);
    et.y = sentence(1, 4);
    for (std::size_t l = 0; l < pool; ++l) et.pool.push_back(sentence(1, 4));
    if (labeled) {
      et.gold = rng.below(pool);
      et.golds = {*et.gold};
    }
    ep.turns.push_back(std::move(et));
  }
  return ep;
}

}  // namespace skt::testing
