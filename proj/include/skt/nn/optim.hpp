#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "skt/nn/tensor.hpp"

namespace skt::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

template <typename T>
AdamState<T> make_adam_state(const std::vector<Tensor<T>>& params, AdamConfig config = {}) {
  AdamState<T> st;
  st.config = config;
  for (const auto& p : params) {
    st.m.emplace_back(p.numel(), T(0));
    st.v.emplace_back(p.numel(), T(0));
  }
  return st;
}

// One bias-corrected Adam update using each parameter's accumulated gradient
// (a parameter without a gradient buffer is treated as having zero gradient).
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& st) {
  if (st.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state holds " + std::to_string(st.m.size()) +
                                " buffers for " + std::to_string(params.size()) + " parameters");
  }
  ++st.step;
  const auto& c = st.config;
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T corr1 = static_cast<T>(1.0 - std::pow(c.beta1, static_cast<double>(st.step)));
  const T corr2 = static_cast<T>(1.0 - std::pow(c.beta2, static_cast<double>(st.step)));
  const T lr = static_cast<T>(c.lr);
  const T eps = static_cast<T>(c.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (st.m[k].size() != p.numel()) {
      throw std::invalid_argument("adam_step: moment buffer " + std::to_string(k) + " does not match parameter shape");
    }
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = st.m[k];
    auto& v = st.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / corr1;
      const T vhat = v[i] / corr2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g *= f;
    }
  }
  return norm;
}

template <typename T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace skt::nn
