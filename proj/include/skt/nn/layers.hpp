#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "skt/nn/categorical.hpp"
#include "skt/nn/ops.hpp"
#include "skt/nn/rng.hpp"

namespace skt::nn {

// Parameter visitors receive (qualified name, tensor handle).
template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

// Xavier/Glorot uniform for a [fan_out x fan_in] matrix.
template <typename T>
Tensor<T> xavier(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> v(fan_out * fan_in);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-a, a));
  return Tensor<T>::from({fan_out, fan_in}, std::move(v), true);
}

// N(0, 1/cols) for an embedding table [rows x cols].
template <typename T>
Tensor<T> embedding_init(std::size_t rows, std::size_t cols, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(cols));
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = static_cast<T>(sd * rng.normal());
  return Tensor<T>::from({rows, cols}, std::move(v), true);
}

template <typename T>
Tensor<T> zeros_param(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

template <typename T>
Tensor<T> ones_param(std::size_t n) {
  return Tensor<T>::from({n}, std::vector<T>(n, T(1)), true);
}

// y = x W^T + b, with W stored as [out x in].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;  // may be undefined

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
      : weight(xavier<T>(out, in, rng)), bias(with_bias ? zeros_param<T>({out}) : Tensor<T>()) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul_nt(x, weight);
    if (bias.defined()) y = add_row(y, bias);
    return x.rank() == 1 ? reshape(y, {weight.dim(0)}) : y;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(prefix + ".weight", weight);
    if (bias.defined()) f(prefix + ".bias", bias);
  }
};

// Gated recurrent unit. Gate blocks are stacked in the order
// update (z), reset (r), candidate (n):
//   z = sigmoid(W_z x + U_z h + b_z)
//   r = sigmoid(W_r x + U_r h + b_r)
//   n = tanh(W_n x + r * (U_n h) + b_n)
//   h' = (1 - z) * n + z * h
template <typename T>
struct GruParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor<T> w;  // [3H x in]
  Tensor<T> u;  // [3H x H]
  Tensor<T> b;  // [3H]

  GruParams() = default;
  GruParams(std::size_t in, std::size_t hidden, Rng& rng) : input_dim(in), hidden_dim(hidden) {
    // Each gate block gets its own Xavier draw.
    std::vector<Tensor<T>> ws;
    std::vector<Tensor<T>> us;
    for (int g = 0; g < 3; ++g) ws.push_back(xavier<T>(hidden, in, rng));
    for (int g = 0; g < 3; ++g) us.push_back(xavier<T>(hidden, hidden, rng));
    w = stack_blocks(ws);
    u = stack_blocks(us);
    b = zeros_param<T>({3 * hidden});
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(prefix + ".w", w);
    f(prefix + ".u", u);
    f(prefix + ".b", b);
  }

 private:
  static Tensor<T> stack_blocks(const std::vector<Tensor<T>>& blocks) {
    std::vector<T> v;
    for (const auto& blk : blocks) v.insert(v.end(), blk.data().begin(), blk.data().end());
    return Tensor<T>::from({blocks.size() * blocks[0].dim(0), blocks[0].dim(1)}, std::move(v), true);
  }
};

// One GRU step. x is [in] or [B x in]; h matches x's batch layout.
template <typename T>
Tensor<T> gru_cell_step(const Tensor<T>& x, const Tensor<T>& h, const GruParams<T>& p) {
  const std::size_t H = p.hidden_dim;
  detail::require(x.cols() == p.input_dim, "gru_cell_step",
                  "input width " + std::to_string(x.cols()) + " != " + std::to_string(p.input_dim));
  detail::require(h.cols() == H, "gru_cell_step",
                  "hidden width " + std::to_string(h.cols()) + " != " + std::to_string(H));
  detail::require(x.rows() == h.rows() && x.rank() == h.rank(), "gru_cell_step", "batch layout mismatch");
  const auto gx = add_row(matmul_nt(x, p.w), p.b);
  const auto gh = matmul_nt(h, p.u);
  const auto hm = h.rank() == 1 ? reshape(h, {1, H}) : h;
  const auto z = sigmoid(add(slice_cols(gx, 0, H), slice_cols(gh, 0, H)));
  const auto r = sigmoid(add(slice_cols(gx, H, H), slice_cols(gh, H, H)));
  const auto n = tanh(add(slice_cols(gx, 2 * H, H), mul(r, slice_cols(gh, 2 * H, H))));
  const auto out = add(n, mul(z, sub(hm, n)));
  return h.rank() == 1 ? reshape(out, {H}) : out;
}

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gain(ones_param<T>(d)), bias(zeros_param<T>({d})) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_rows(x, gain, bias); }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
struct AttentionParams {
  std::size_t heads = 1;
  Tensor<T> w_q;  // [d x d]
  Tensor<T> w_k;
  Tensor<T> w_v;
  Tensor<T> w_o;

  AttentionParams() = default;
  AttentionParams(std::size_t d, std::size_t num_heads, Rng& rng)
      : heads(num_heads),
        w_q(xavier<T>(d, d, rng)),
        w_k(xavier<T>(d, d, rng)),
        w_v(xavier<T>(d, d, rng)),
        w_o(xavier<T>(d, d, rng)) {}

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(prefix + ".w_q", w_q);
    f(prefix + ".w_k", w_k);
    f(prefix + ".w_v", w_v);
    f(prefix + ".w_o", w_o);
  }
};

// Causal mask for n positions attending over themselves.
inline Mask causal_mask(std::size_t n) {
  Mask m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
  return m;
}

// Scaled dot-product attention with `heads` heads. `mask` is [n x m] (empty
// means all keys visible) and every query row must see at least one key.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& queries, const Tensor<T>& keys_values, const Mask& mask,
                               const AttentionParams<T>& p) {
  const auto [n, d] = detail::matrix_dims(queries);
  const auto [m, d2] = detail::matrix_dims(keys_values);
  detail::require(d == d2, "attention", "query/key width mismatch");
  detail::require(p.heads > 0 && d % p.heads == 0, "attention", "width not divisible by head count");
  detail::require(mask.empty() || mask.size() == n * m, "attention", "mask must be [n x m]");
  if (!mask.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < m; ++j) any = any || mask[i * m + j];
      detail::require(any, "attention", "query row " + std::to_string(i) + " has no visible key");
    }
  }
  const std::size_t dh = d / p.heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const auto q = matmul_nt(queries, p.w_q);
  const auto k = matmul_nt(keys_values, p.w_k);
  const auto v = matmul_nt(keys_values, p.w_v);
  std::vector<Tensor<T>> outs;
  outs.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const auto qh = slice_cols(q, h * dh, dh);
    const auto kh = slice_cols(k, h * dh, dh);
    const auto vh = slice_cols(v, h * dh, dh);
    const auto weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    outs.push_back(matmul(weights, vh));
  }
  const auto merged = p.heads == 1 ? outs[0] : hcat(outs);
  return matmul_nt(merged, p.w_o);
}

template <typename T>
struct FeedForward {
  Linear<T> in;
  Linear<T> out;

  FeedForward() = default;
  FeedForward(std::size_t d, std::size_t hidden, Rng& rng) : in(d, hidden, rng), out(hidden, d, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return out(gelu(in(x))); }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    in.visit(prefix + ".in", f);
    out.visit(prefix + ".out", f);
  }
};

}  // namespace skt::nn
