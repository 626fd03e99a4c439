#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace skt::model {

enum class EncoderKind { bigru, attention };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  EncoderKind encoder = EncoderKind::bigru;
  std::size_t encoder_layers = 2;  // self-attention encoder only
  std::size_t heads = 4;
  std::size_t decoder_blocks = 2;
  std::size_t ffn_mult = 4;
  std::size_t max_len = 40;      // generation cap
  bool scaled_scores = false;    // divide knowledge scores by sqrt(d_model)
  bool use_history = true;       // false zeroes the knowledge-history input

  void check() const {
    if (vocab_size < 5) throw std::invalid_argument("model: vocab_size must be at least 5");
    if (d_model == 0 || d_model % 2 != 0) throw std::invalid_argument("model: d_model must be a positive even number");
    if (heads == 0 || d_model % heads != 0) throw std::invalid_argument("model: d_model must be divisible by heads");
    if (decoder_blocks == 0) throw std::invalid_argument("model: decoder needs at least one block");
    if (max_len == 0) throw std::invalid_argument("model: max_len must be positive");
  }
};

inline std::string to_string(EncoderKind k) { return k == EncoderKind::bigru ? "bigru" : "attention"; }

inline EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "bigru") return EncoderKind::bigru;
  if (s == "attention") return EncoderKind::attention;
  throw std::invalid_argument("unknown encoder kind '" + s + "'");
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},         {"d_model", c.d_model},
          {"encoder", to_string(c.encoder)},    {"encoder_layers", c.encoder_layers},
          {"heads", c.heads},                   {"decoder_blocks", c.decoder_blocks},
          {"ffn_mult", c.ffn_mult},             {"max_len", c.max_len},
          {"scaled_scores", c.scaled_scores},   {"use_history", c.use_history}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.encoder = parse_encoder_kind(j.value("encoder", to_string(c.encoder)));
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.heads = j.value("heads", c.heads);
  c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.max_len = j.value("max_len", c.max_len);
  c.scaled_scores = j.value("scaled_scores", c.scaled_scores);
  c.use_history = j.value("use_history", c.use_history);
  return c;
}

}  // namespace skt::model
