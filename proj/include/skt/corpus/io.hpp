#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "skt/corpus/tokenizer.hpp"
#include "skt/corpus/types.hpp"

// JSON-lines episode files, one episode per line:
//   {"topic": str, "split": str,
//    "turns": [{"x": str, "y": str, "pool": [str], "gold": int|null, "refs": [str]}]}
// Pools are listed without the sentinel; `gold` indexes the listed pool and
// the string "no_passages_used" selects the sentinel. Holl-E files may also
// give `gold` as a list of acceptable indices.

namespace skt::corpus {

enum class Format { wow_jsonl, holle_jsonl };

inline std::optional<Format> parse_format(const std::string& s) {
  if (s == "wow-jsonl" || s == "wow") return Format::wow_jsonl;
  if (s == "holle-jsonl" || s == "holle") return Format::holle_jsonl;
  return std::nullopt;
}

class CorpusError : public std::runtime_error {
 public:
  CorpusError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

using nlohmann::json;

inline const json& field(const json& obj, const char* name, std::size_t line, const std::string& where) {
  if (!obj.is_object() || !obj.contains(name)) {
    throw CorpusError(line, "missing field '" + where + name + "'");
  }
  return obj.at(name);
}

inline std::string string_field(const json& obj, const char* name, std::size_t line, const std::string& where) {
  const auto& v = field(obj, name, line, where);
  if (!v.is_string()) throw CorpusError(line, "field '" + where + name + "' must be a string");
  return v.get<std::string>();
}

// Resolves one raw gold value to a pool index (sentinel-shifted).
inline std::size_t gold_index(const json& v, std::size_t listed, std::size_t line, const std::string& where) {
  if (v.is_string()) {
    if (v.get<std::string>() == "no_passages_used") return 0;
    throw CorpusError(line, "field '" + where + "gold' has unknown tag '" + v.get<std::string>() + "'");
  }
  if (!v.is_number_integer()) throw CorpusError(line, "field '" + where + "gold' must be an integer or null");
  const auto g = v.get<long long>();
  if (g < 0 || static_cast<std::size_t>(g) >= listed) {
    throw CorpusError(line, "field '" + where + "gold' index " + std::to_string(g) + " out of range for pool of " +
                                std::to_string(listed));
  }
  return static_cast<std::size_t>(g) + 1;
}

inline Turn parse_turn(const json& j, Format format, std::size_t line, const std::string& where) {
  Turn t;
  t.apprentice = tokenize(string_field(j, "x", line, where));
  t.wizard = tokenize(string_field(j, "y", line, where));
  const auto& pool = field(j, "pool", line, where);
  if (!pool.is_array()) throw CorpusError(line, "field '" + where + "pool' must be an array");
  std::vector<Tokens> listed;
  for (const auto& s : pool) {
    if (!s.is_string()) throw CorpusError(line, "field '" + where + "pool' must contain strings");
    listed.push_back(tokenize(s.get<std::string>()));
  }
  const std::size_t n = listed.size();
  t.pool = KnowledgePool::with_sentinel(std::move(listed));
  if (j.contains("gold") && !j.at("gold").is_null()) {
    const auto& g = j.at("gold");
    if (g.is_array()) {
      if (format != Format::holle_jsonl) {
        throw CorpusError(line, "field '" + where + "gold' lists are only allowed in holle-jsonl");
      }
      for (const auto& v : g) {
        const auto idx = gold_index(v, n, line, where);
        if (!t.gold) {
          t.gold = idx;
        } else if (idx != *t.gold && std::find(t.alt_golds.begin(), t.alt_golds.end(), idx) == t.alt_golds.end()) {
          t.alt_golds.push_back(idx);
        }
      }
    } else {
      t.gold = gold_index(g, n, line, where);
    }
  }
  t.references.push_back(t.wizard);
  if (j.contains("refs")) {
    const auto& refs = j.at("refs");
    if (!refs.is_array()) throw CorpusError(line, "field '" + where + "refs' must be an array");
    for (const auto& r : refs) {
      if (!r.is_string()) throw CorpusError(line, "field '" + where + "refs' must contain strings");
      auto toks = tokenize(r.get<std::string>());
      if (toks != t.wizard) t.references.push_back(std::move(toks));
    }
  }
  return t;
}

}  // namespace detail

inline Episode parse_episode(const std::string& text, Format format, std::size_t line) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error&) {
    throw CorpusError(line, "parse failure at line " + std::to_string(line));
  }
  if (!j.is_object()) throw CorpusError(line, "record must be a JSON object");
  Episode e;
  e.topic = detail::string_field(j, "topic", line, "");
  if (j.contains("split")) {
    const auto s = detail::string_field(j, "split", line, "");
    const auto parsed = parse_split(s);
    if (!parsed) throw CorpusError(line, "field 'split' has unknown value '" + s + "'");
    e.split = *parsed;
  }
  const auto& turns = detail::field(j, "turns", line, "");
  if (!turns.is_array() || turns.empty()) throw CorpusError(line, "field 'turns' must be a non-empty array");
  for (std::size_t i = 0; i < turns.size(); ++i) {
    e.turns.push_back(detail::parse_turn(turns[i], format, line, "turns[" + std::to_string(i) + "]."));
  }
  return e;
}

inline std::vector<Episode> read_episodes(std::istream& in, Format format) {
  std::vector<Episode> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_episode(text, format, line));
  }
  return out;
}

inline std::vector<Episode> load_episodes(const std::string& path, Format format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file '" + path + "'");
  return read_episodes(in, format);
}

inline nlohmann::json to_json(const Episode& e) {
  using detail::json;
  json turns = json::array();
  for (const auto& t : e.turns) {
    json pool = json::array();
    for (std::size_t i = 1; i < t.pool.size(); ++i) pool.push_back(join(t.pool.sentences[i]));
    json gold = nullptr;
    auto raw = [](std::size_t g) -> json { return g == 0 ? json("no_passages_used") : json(g - 1); };
    if (t.gold && t.alt_golds.empty()) {
      gold = raw(*t.gold);
    } else if (t.gold) {
      gold = json::array();
      for (auto g : t.golds()) gold.push_back(raw(g));
    }
    json refs = json::array();
    for (const auto& r : t.references) refs.push_back(join(r));
    turns.push_back({{"x", join(t.apprentice)}, {"y", join(t.wizard)}, {"pool", pool}, {"gold", gold}, {"refs", refs}});
  }
  return {{"topic", e.topic}, {"split", to_string(e.split)}, {"turns", turns}};
}

inline void write_episodes(std::ostream& out, const std::vector<Episode>& episodes) {
  for (const auto& e : episodes) out << to_json(e).dump() << '\n';
}

inline void save_episodes(const std::string& path, const std::vector<Episode>& episodes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file '" + path + "'");
  write_episodes(out, episodes);
}

}  // namespace skt::corpus
