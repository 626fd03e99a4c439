#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "skt/corpus/vocab.hpp"
#include "skt/model/model.hpp"
#include "skt/train/trainer.hpp"

// Binary layout, all integers little-endian:
//
//   header  "SKTCKPT1" u32 version  u64 fnv1a64(config json)
//   config  u64 length, UTF-8 JSON of the training configuration
//   vocab   "VOCB" u64 count, then per token: u32 length, bytes
//   params  "PARM" u64 count, then per tensor:
//             u32 name length, name, u32 rank, u64 dims[rank], f32 values
//   trailer "END."

namespace skt::train {

inline constexpr std::uint32_t checkpoint_version = 1;

struct CheckpointError : std::runtime_error {
  CheckpointError(const std::string& section, const std::string& what)
      : std::runtime_error("corrupt checkpoint (" + section + "): " + what), section(section) {}
  std::string section;
};

struct Checkpoint {
  TrainConfig config;
  corpus::Vocab vocab;
  model::SktModel<float> model;
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void tag(const char (&t)[5]) { bytes(t, 4); }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float f) { uint(std::bit_cast<std::uint32_t>(f)); }
  void str32(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}
  void section(std::string name) { section_ = std::move(name); }

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CheckpointError(section_, "unexpected end of file");
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect_tag(const char (&t)[5]) {
    if (bytes(4) != std::string(t, 4)) throw CheckpointError(section_, "missing '" + std::string(t, 4) + "' marker");
  }
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  std::string str32() { return bytes(uint<std::uint32_t>()); }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
  std::string section_ = "header";
};

}  // namespace detail

inline std::string serialize_checkpoint(model::SktModel<float>& m, const TrainConfig& cfg, const corpus::Vocab& vocab) {
  auto cj = to_json(cfg);
  cj["model"] = model::to_json(m.config());
  const std::string config = cj.dump();
  detail::Writer w;
  w.bytes("SKTCKPT1", 8);
  w.uint(checkpoint_version);
  w.uint(fnv1a64(config));
  w.uint(static_cast<std::uint64_t>(config.size()));
  w.bytes(config.data(), config.size());

  w.tag("VOCB");
  w.uint(static_cast<std::uint64_t>(vocab.size()));
  for (const auto& t : vocab.tokens()) w.str32(t);

  const auto params = m.named_parameters();
  w.tag("PARM");
  w.uint(static_cast<std::uint64_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str32(name);
    w.uint(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.uint(static_cast<std::uint64_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  w.tag("END.");
  return w.data();
}

inline Checkpoint deserialize_checkpoint(const std::string& data) {
  detail::Reader r(data);
  if (r.bytes(8) != "SKTCKPT1") throw CheckpointError("header", "bad magic");
  const auto version = r.uint<std::uint32_t>();
  if (version != checkpoint_version) {
    throw CheckpointError("header", "unsupported version " + std::to_string(version) + " (expected " +
                                        std::to_string(checkpoint_version) + ")");
  }
  const auto digest = r.uint<std::uint64_t>();

  r.section("config");
  const auto config = r.bytes(r.uint<std::uint64_t>());
  if (fnv1a64(config) != digest) throw CheckpointError("config", "digest mismatch");
  Checkpoint ck;
  try {
    ck.config = train_config_from_json(nlohmann::json::parse(config));
  } catch (const std::exception& e) {
    throw CheckpointError("config", e.what());
  }

  r.section("vocab");
  r.expect_tag("VOCB");
  const auto vcount = r.uint<std::uint64_t>();
  if (vcount > data.size()) throw CheckpointError("vocab", "implausible token count");
  std::vector<std::string> tokens;
  for (std::uint64_t i = 0; i < vcount; ++i) tokens.push_back(r.str32());
  try {
    ck.vocab = corpus::Vocab::from_tokens(std::move(tokens));
  } catch (const std::exception& e) {
    throw CheckpointError("vocab", e.what());
  }
  if (ck.vocab.size() != ck.config.model.vocab_size) throw CheckpointError("vocab", "size disagrees with config");

  r.section("parameters");
  r.expect_tag("PARM");
  const auto pcount = r.uint<std::uint64_t>();
  std::map<std::string, std::pair<nn::Shape, std::vector<float>>> blocks;
  for (std::uint64_t i = 0; i < pcount; ++i) {
    const auto name = r.str32();
    r.section("parameters '" + name + "'");
    const auto rank = r.uint<std::uint32_t>();
    if (rank > 4) throw CheckpointError("parameters '" + name + "'", "implausible rank");
    nn::Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.uint<std::uint64_t>()));
    const std::size_t n = nn::numel_of(shape);
    r.need(4 * n);
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32();
    blocks.emplace(name, std::make_pair(std::move(shape), std::move(values)));
    r.section("parameters");
  }
  r.section("trailer");
  r.expect_tag("END.");
  if (!r.at_end()) throw CheckpointError("trailer", "trailing bytes after end marker");

  try {
    ck.model = model::SktModel<float>(ck.config.model, 0);
  } catch (const std::exception& e) {
    throw CheckpointError("config", e.what());
  }
  std::size_t matched = 0;
  ck.model.visit([&](const std::string& name, Tensor<float>& t) {
    const auto it = blocks.find(name);
    if (it == blocks.end()) throw CheckpointError("parameters '" + name + "'", "missing");
    if (it->second.first != t.shape()) {
      throw CheckpointError("parameters '" + name + "'",
                            "shape " + nn::to_string(it->second.first) + " expected " + nn::to_string(t.shape()));
    }
    std::copy(it->second.second.begin(), it->second.second.end(), t.mutable_data().begin());
    ++matched;
  });
  if (matched != blocks.size()) throw CheckpointError("parameters", "unexpected extra tensors");
  return ck;
}

inline void save_checkpoint(model::SktModel<float>& m, const TrainConfig& cfg, const corpus::Vocab& vocab,
                            const std::string& path) {
  const auto bytes = serialize_checkpoint(m, cfg, vocab);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace skt::train
