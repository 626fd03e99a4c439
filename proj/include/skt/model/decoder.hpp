#pragma once

#include <vector>

#include "skt/corpus/vocab.hpp"
#include "skt/model/config.hpp"
#include "skt/model/encoder.hpp"
#include "skt/nn/categorical.hpp"
#include "skt/nn/layers.hpp"

namespace skt::model {

using nn::Tensor;

template <typename T>
struct DecoderBlock {
  nn::LayerNorm<T> ln_self;
  nn::AttentionParams<T> self_attn;
  nn::LayerNorm<T> ln_cross;
  nn::AttentionParams<T> cross_attn;
  nn::LayerNorm<T> ln_ffn;
  nn::FeedForward<T> ffn;

  DecoderBlock() = default;
  DecoderBlock(std::size_t d, std::size_t heads, std::size_t hidden, nn::Rng& rng)
      : ln_self(d),
        self_attn(d, heads, rng),
        ln_cross(d),
        cross_attn(d, heads, rng),
        ln_ffn(d),
        ffn(d, hidden, rng) {}

  void visit(const std::string& prefix, const nn::ParamVisitor<T>& f) {
    ln_self.visit(prefix + ".ln_self", f);
    self_attn.visit(prefix + ".self_attn", f);
    ln_cross.visit(prefix + ".ln_cross", f);
    cross_attn.visit(prefix + ".cross_attn", f);
    ln_ffn.visit(prefix + ".ln_ffn", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

template <typename T>
struct DecoderParams {
  std::size_t d_model = 0;
  std::size_t vocab_size = 0;
  std::vector<DecoderBlock<T>> blocks;
  nn::LayerNorm<T> final_norm;
  Tensor<T> segment;  // [2 x d]: context rows, knowledge rows
  Tensor<T> w_q;      // copy attention projections, [d x d]
  Tensor<T> w_k;
  Tensor<T> w_v;
  Tensor<T> w_copy;   // [d]
  Tensor<T> b_copy;   // scalar gate bias
  nn::Linear<T> out;  // d -> V

  DecoderParams() = default;
  DecoderParams(const ModelConfig& cfg, nn::Rng& rng)
      : d_model(cfg.d_model), vocab_size(cfg.vocab_size) {
    for (std::size_t i = 0; i < cfg.decoder_blocks; ++i) {
      blocks.emplace_back(d_model, cfg.heads, cfg.ffn_mult * d_model, rng);
    }
    final_norm = nn::LayerNorm<T>(d_model);
    segment = nn::xavier<T>(2, d_model, rng);
    w_q = nn::xavier<T>(d_model, d_model, rng);
    w_k = nn::xavier<T>(d_model, d_model, rng);
    w_v = nn::xavier<T>(d_model, d_model, rng);
    w_copy = nn::Tensor<T>::from({d_model}, nn::xavier<T>(1, d_model, rng).to_vector(), true);
    b_copy = nn::zeros_param<T>({1});
    out = nn::Linear<T>(d_model, cfg.vocab_size, rng);
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<T>& f) {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), f);
    final_norm.visit(prefix + ".final_norm", f);
    f(prefix + ".segment", segment);
    f(prefix + ".w_q", w_q);
    f(prefix + ".w_k", w_k);
    f(prefix + ".w_v", w_v);
    f(prefix + ".w_copy", w_copy);
    f(prefix + ".b_copy", b_copy);
    out.visit(prefix + ".out", f);
  }
};

// Concatenated context and selected-knowledge token states with their ids.
template <typename T>
struct SourceMemory {
  Tensor<T> states;  // [S x d], segment embedding already added
  corpus::Ids ids;   // [S]

  std::size_t size() const { return ids.size(); }
};

// [H_x; H_k] plus a learned segment row per part.
template <typename T>
SourceMemory<T> make_memory(const Tensor<T>& context, const corpus::Ids& context_ids, const Tensor<T>& knowledge,
                            const corpus::Ids& knowledge_ids, const DecoderParams<T>& p) {
  if (context.rows() != context_ids.size() || knowledge.rows() != knowledge_ids.size()) {
    throw std::invalid_argument("make_memory: state rows do not match token ids");
  }
  std::vector<std::ptrdiff_t> seg(context_ids.size(), 0);
  seg.resize(context_ids.size() + knowledge_ids.size(), 1);
  SourceMemory<T> m;
  m.states = nn::add(nn::vcat<T>({context, knowledge}), nn::gather_rows(p.segment, seg));
  m.ids = context_ids;
  m.ids.insert(m.ids.end(), knowledge_ids.begin(), knowledge_ids.end());
  return m;
}

// Per-position outputs for a teacher-forced input prefix of length N.
template <typename T>
struct DecoderOutput {
  Tensor<T> hidden;     // [N x d]
  Tensor<T> p_gen;      // [N x V]
  Tensor<T> p_copy;     // [N x S] over source positions
  Tensor<T> alpha;      // [N] copy gate
  Tensor<T> p_mixed;    // [N x V]
};

struct DecodeOverrides {
  // Replaces the learned gate with a constant in (0, 1) or exactly 0 / 1.
  std::optional<double> alpha;
};

// Runs the decoder over `inputs` (BOS-prefixed ids) attending to `memory`.
template <typename T>
DecoderOutput<T> decode(const SourceMemory<T>& memory, const corpus::Ids& inputs, const Tensor<T>& embedding,
                        const DecoderParams<T>& p, const DecodeOverrides& ov = {}) {
  if (memory.size() == 0) throw std::invalid_argument("decode: empty source memory");
  if (inputs.empty()) throw std::invalid_argument("decode: empty input prefix");
  const std::size_t n = inputs.size();
  std::vector<std::ptrdiff_t> ids(inputs.begin(), inputs.end());
  auto h = embed_positions(embedding, ids, p.d_model);
  const auto causal = nn::causal_mask(n);
  for (const auto& blk : p.blocks) {
    const auto a = blk.ln_self(h);
    h = nn::add(h, nn::multi_head_attention(a, a, causal, blk.self_attn));
    h = nn::add(h, nn::multi_head_attention(blk.ln_cross(h), memory.states, {}, blk.cross_attn));
    h = nn::add(h, blk.ffn(blk.ln_ffn(h)));
  }
  h = p.final_norm(h);

  DecoderOutput<T> o;
  o.hidden = h;
  o.p_gen = nn::softmax_rows(p.out(h));
  const auto q = nn::matmul_nt(h, p.w_q);
  const auto k = nn::matmul_nt(memory.states, p.w_k);
  const auto v = nn::matmul_nt(memory.states, p.w_v);
  o.p_copy = nn::softmax_rows(nn::matmul_nt(q, k));
  const auto context = nn::matmul(o.p_copy, v);  // [N x d]
  if (ov.alpha) {
    o.alpha = Tensor<T>::vector(std::vector<T>(n, static_cast<T>(*ov.alpha)));
  } else {
    const auto logit = nn::add_row(nn::reshape(nn::matvec(context, p.w_copy), {n, 1}), p.b_copy);
    o.alpha = nn::sigmoid(nn::reshape(logit, {n}));
  }
  const auto copy_vocab = nn::scatter_cols(o.p_copy, memory.ids, p.vocab_size);
  const auto one_minus = nn::affine(o.alpha, T(-1), T(1));
  o.p_mixed = nn::add(nn::mul_col(o.p_gen, one_minus), nn::mul_col(copy_vocab, o.alpha));
  return o;
}

// Distribution over the next token after `prefix` (which starts with BOS).
template <typename T>
struct DecodeStepOutput {
  Tensor<T> hidden;
  Tensor<T> p_gen;
  Tensor<T> p_copy;
  T alpha;
  Tensor<T> p_mixed;
};

template <typename T>
DecodeStepOutput<T> decode_step(const SourceMemory<T>& memory, const corpus::Ids& prefix, const Tensor<T>& embedding,
                                const DecoderParams<T>& p, const DecodeOverrides& ov = {}) {
  if (prefix.empty() || prefix.front() != corpus::Vocab::bos) {
    throw std::invalid_argument("decode_step: prefix must begin with BOS");
  }
  const auto o = decode(memory, prefix, embedding, p, ov);
  const std::size_t last = prefix.size() - 1;
  return {nn::row(o.hidden, last), nn::row(o.p_gen, last), nn::row(o.p_copy, last), o.alpha.at(last),
          nn::row(o.p_mixed, last)};
}

// out[v] = sum of copy probability over source positions holding id v.
template <typename T>
Tensor<T> scatter_copy(const Tensor<T>& p_copy_positions, const corpus::Ids& source_ids, std::size_t vocab_size) {
  return nn::scatter_cols(p_copy_positions, source_ids, vocab_size);
}

// Teacher-forced per-token losses for `target` (which must end with EOS),
// using label smoothing `eps` over the vocabulary.
template <typename T>
Tensor<T> sequence_nll(const SourceMemory<T>& memory, const corpus::Ids& target, const Tensor<T>& embedding,
                       const DecoderParams<T>& p, T eps, const DecodeOverrides& ov = {}) {
  if (target.empty() || target.back() != corpus::Vocab::eos) {
    throw std::invalid_argument("sequence_nll: target must end with EOS");
  }
  corpus::Ids inputs{corpus::Vocab::bos};
  inputs.insert(inputs.end(), target.begin(), target.end() - 1);
  const auto o = decode(memory, inputs, embedding, p, ov);
  return nn::smoothed_nll_rows(nn::log(o.p_mixed), target, eps);
}

inline corpus::Ids with_eos(corpus::Ids ids) {
  ids.push_back(corpus::Vocab::eos);
  return ids;
}

struct Generation {
  corpus::Ids tokens;  // without BOS/EOS
  bool truncated = false;
};

// Greedy decoding until EOS or max_len tokens.
template <typename T>
Generation generate(const SourceMemory<T>& memory, const Tensor<T>& embedding, const DecoderParams<T>& p,
                    std::size_t max_len, const DecodeOverrides& ov = {}) {
  if (max_len == 0) throw std::invalid_argument("generate: max_len must be at least 1");
  nn::NoGradGuard no_grad;
  Generation g;
  corpus::Ids prefix{corpus::Vocab::bos};
  while (true) {
    const auto step = decode_step(memory, prefix, embedding, p, ov);
    const std::size_t next = nn::argmax_masked<T>(step.p_mixed.data(), {});
    if (next == corpus::Vocab::eos) break;
    if (g.tokens.size() == max_len) {
      g.truncated = true;
      break;
    }
    g.tokens.push_back(next);
    prefix.push_back(next);
  }
  return g;
}

}  // namespace skt::model
