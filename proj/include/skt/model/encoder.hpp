#pragma once

#include <cmath>
#include <vector>

#include "skt/corpus/vocab.hpp"
#include "skt/model/config.hpp"
#include "skt/nn/layers.hpp"

namespace skt::model {

using nn::Tensor;

// Fixed sinusoidal position codes [n x d].
template <typename T>
Tensor<T> positional_encoding(std::size_t n, std::size_t d, std::size_t offset = 0) {
  std::vector<T> v(n * d);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double a = static_cast<double>(p + offset) * rate;
      v[p * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  return Tensor<T>::from({n, d}, std::move(v));
}

// Token embeddings scaled by sqrt(d) plus position codes, as input to an attention stack.
template <typename T>
Tensor<T> embed_positions(const Tensor<T>& embedding, const std::vector<std::ptrdiff_t>& ids, std::size_t d) {
  const auto rows = nn::scale(nn::gather_rows(embedding, ids), static_cast<T>(std::sqrt(static_cast<double>(d))));
  return nn::add(rows, positional_encoding<T>(ids.size(), d));
}

template <typename T>
struct EncoderBlock {
  nn::LayerNorm<T> ln1;
  nn::AttentionParams<T> attn;
  nn::LayerNorm<T> ln2;
  nn::FeedForward<T> ffn;

  EncoderBlock() = default;
  EncoderBlock(std::size_t d, std::size_t heads, std::size_t hidden, nn::Rng& rng)
      : ln1(d), attn(d, heads, rng), ln2(d), ffn(d, hidden, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    const auto h = nn::add(x, nn::multi_head_attention(ln1(x), ln1(x), {}, attn));
    return nn::add(h, ffn(ln2(h)));
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<T>& f) {
    ln1.visit(prefix + ".ln1", f);
    attn.visit(prefix + ".attn", f);
    ln2.visit(prefix + ".ln2", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

template <typename T>
struct EncoderParams {
  EncoderKind kind = EncoderKind::bigru;
  std::size_t d_model = 0;
  Tensor<T> embedding;  // [V x d]
  nn::GruParams<T> forward;
  nn::GruParams<T> backward;
  std::vector<EncoderBlock<T>> blocks;
  nn::LayerNorm<T> final_norm;
  nn::GruParams<T> dialog;  // GRU over [h_x; h_y] -> d

  EncoderParams() = default;
  EncoderParams(const ModelConfig& cfg, nn::Rng& rng)
      : kind(cfg.encoder), d_model(cfg.d_model), embedding(nn::embedding_init<T>(cfg.vocab_size, cfg.d_model, rng)) {
    if (kind == EncoderKind::bigru) {
      forward = nn::GruParams<T>(d_model, d_model / 2, rng);
      backward = nn::GruParams<T>(d_model, d_model / 2, rng);
    } else {
      for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
        blocks.emplace_back(d_model, cfg.heads, cfg.ffn_mult * d_model, rng);
      }
      final_norm = nn::LayerNorm<T>(d_model);
    }
    dialog = nn::GruParams<T>(2 * d_model, d_model, rng);
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<T>& f) {
    f(prefix + ".embedding", embedding);
    if (kind == EncoderKind::bigru) {
      forward.visit(prefix + ".gru_fwd", f);
      backward.visit(prefix + ".gru_bwd", f);
    } else {
      for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), f);
      final_norm.visit(prefix + ".final_norm", f);
    }
    dialog.visit(prefix + ".gru_dialog", f);
  }
};

// Token states of several sentences stored back to back, plus their pooled
// (mean over real tokens) embeddings.
template <typename T>
struct EncodedSentences {
  Tensor<T> rows;    // [total x d]
  Tensor<T> pooled;  // [count x d]
  std::vector<std::size_t> offset;
  std::vector<std::size_t> length;

  std::size_t count() const { return length.size(); }
  Tensor<T> tokens(std::size_t i) const { return nn::slice_rows(rows, offset.at(i), length.at(i)); }
  Tensor<T> embedding(std::size_t i) const { return nn::row(pooled, i); }
};

namespace detail {

// Averaging matrix A [count x total] with A[i][offset_i + p] = 1 / len_i.
template <typename T>
Tensor<T> averaging_matrix(const std::vector<std::size_t>& offset, const std::vector<std::size_t>& length,
                           std::size_t total) {
  std::vector<T> a(length.size() * total, T(0));
  for (std::size_t i = 0; i < length.size(); ++i) {
    const T inv = T(1) / static_cast<T>(length[i]);
    for (std::size_t p = 0; p < length[i]; ++p) a[i * total + offset[i] + p] = inv;
  }
  return Tensor<T>::from({length.size(), total}, std::move(a));
}

// Runs one GRU direction over all sentences at once. Step j reads position
// pos(i, j) of sentence i; rows whose sentence is exhausted keep their state.
// Returns the per-step states stacked as [steps * B x H] (row j * B + i).
template <typename T, typename Pos>
Tensor<T> run_direction(const std::vector<corpus::Ids>& sentences, std::size_t steps, const Tensor<T>& embedding,
                        const nn::GruParams<T>& gru, Pos pos) {
  const std::size_t B = sentences.size();
  auto h = Tensor<T>::zeros({B, gru.hidden_dim});
  std::vector<Tensor<T>> states;
  states.reserve(steps);
  for (std::size_t j = 0; j < steps; ++j) {
    std::vector<std::ptrdiff_t> ids(B);
    std::vector<T> active(B);
    bool all_active = true;
    for (std::size_t i = 0; i < B; ++i) {
      const bool on = j < sentences[i].size();
      active[i] = on ? T(1) : T(0);
      all_active = all_active && on;
      ids[i] = on ? static_cast<std::ptrdiff_t>(sentences[i][pos(i, j)]) : static_cast<std::ptrdiff_t>(corpus::Vocab::pad);
    }
    const auto x = nn::gather_rows(embedding, ids);
    const auto next = nn::gru_cell_step(x, h, gru);
    if (all_active) {
      h = next;
    } else {
      std::vector<T> inactive(B);
      for (std::size_t i = 0; i < B; ++i) inactive[i] = T(1) - active[i];
      h = nn::add(nn::mul_col(next, Tensor<T>::vector(active)), nn::mul_col(h, Tensor<T>::vector(inactive)));
    }
    states.push_back(h);
  }
  return nn::vcat(states);
}

}  // namespace detail

// Encodes a set of token-id sentences. Every sentence must contain at least
// one token; padding never enters the computation.
template <typename T>
EncodedSentences<T> encode_sentences(const std::vector<corpus::Ids>& sentences, const EncoderParams<T>& p) {
  EncodedSentences<T> out;
  std::size_t total = 0;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (sentences[i].empty()) {
      throw std::invalid_argument("encode_sentence: sentence " + std::to_string(i) + " has no tokens");
    }
    out.offset.push_back(total);
    out.length.push_back(sentences[i].size());
    total += sentences[i].size();
    steps = std::max(steps, sentences[i].size());
  }
  if (sentences.empty()) throw std::invalid_argument("encode_sentences: nothing to encode");
  const std::size_t B = sentences.size();

  if (p.kind == EncoderKind::bigru) {
    const auto fwd = detail::run_direction<T>(sentences, steps, p.embedding, p.forward,
                                              [](std::size_t, std::size_t j) { return j; });
    const auto bwd = detail::run_direction<T>(sentences, steps, p.embedding, p.backward,
                                              [&](std::size_t i, std::size_t j) { return sentences[i].size() - 1 - j; });
    std::vector<std::ptrdiff_t> fwd_idx;
    std::vector<std::ptrdiff_t> bwd_idx;
    fwd_idx.reserve(total);
    bwd_idx.reserve(total);
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t n = sentences[i].size();
      for (std::size_t q = 0; q < n; ++q) {
        fwd_idx.push_back(static_cast<std::ptrdiff_t>(q * B + i));
        bwd_idx.push_back(static_cast<std::ptrdiff_t>((n - 1 - q) * B + i));
      }
    }
    out.rows = nn::hcat<T>({nn::gather_rows(fwd, fwd_idx), nn::gather_rows(bwd, bwd_idx)});
  } else {
    std::vector<Tensor<T>> parts;
    for (const auto& s : sentences) {
      std::vector<std::ptrdiff_t> ids(s.begin(), s.end());
      auto h = embed_positions(p.embedding, ids, p.d_model);
      for (const auto& blk : p.blocks) h = blk(h);
      parts.push_back(p.final_norm(h));
    }
    out.rows = parts.size() == 1 ? parts[0] : nn::vcat(parts);
  }
  out.pooled = nn::matmul(detail::averaging_matrix<T>(out.offset, out.length, total), out.rows);
  return out;
}

// Single-sentence view: H = token states, h = their mean.
template <typename T>
struct Encoding {
  Tensor<T> H;
  Tensor<T> h;
};

template <typename T>
Encoding<T> encode_sentence(const corpus::Ids& tokens, const EncoderParams<T>& p) {
  const auto enc = encode_sentences<T>({tokens}, p);
  return {enc.rows, enc.embedding(0)};
}

// Pooled embedding of every pool sentence, in pool order.
template <typename T>
std::vector<Tensor<T>> encode_pool(const std::vector<corpus::Ids>& pool, const EncoderParams<T>& p) {
  if (pool.empty()) throw std::invalid_argument("encode_pool: empty pool");
  const auto enc = encode_sentences(pool, p);
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < enc.count(); ++i) out.push_back(enc.embedding(i));
  return out;
}

// d_xy^t = GRU_dialog(d_xy^{t-1}, [h_x^t; h_y^t])
template <typename T>
Tensor<T> dialog_step(const Tensor<T>& d_xy, const Tensor<T>& h_x, const Tensor<T>& h_y, const EncoderParams<T>& p) {
  if (h_x.numel() != p.d_model || h_y.numel() != p.d_model || d_xy.numel() != p.d_model) {
    throw std::invalid_argument("dialog_step: expected vectors of width " + std::to_string(p.d_model));
  }
  return nn::gru_cell_step(nn::hcat<T>({h_x, h_y}), d_xy, p.dialog);
}

template <typename T>
struct DialogState {
  Tensor<T> d_xy;
  std::size_t turn = 0;

  static DialogState initial(std::size_t d) { return {Tensor<T>::zeros({d}), 0}; }
};

template <typename T>
DialogState<T> dialog_step(const DialogState<T>& state, const Tensor<T>& h_x, const Tensor<T>& h_y,
                           const EncoderParams<T>& p) {
  return {dialog_step(state.d_xy, h_x, h_y, p), state.turn + 1};
}

}  // namespace skt::model
