#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "skt/corpus/tokenizer.hpp"
#include "skt/corpus/types.hpp"
#include "skt/corpus/vocab.hpp"
#include "skt/model/model.hpp"

namespace skt::service {

struct ServiceError : std::runtime_error {
  ServiceError(int status, std::string code, const std::string& detail)
      : std::runtime_error(detail), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

inline ServiceError not_found(const std::string& detail) { return {404, "not_found", detail}; }
inline ServiceError invalid_input(const std::string& detail) { return {400, "invalid_input", detail}; }

struct MessageResult {
  std::string apprentice;
  std::string response;
  std::size_t knowledge_index = 0;
  std::string knowledge_sentence;
  std::vector<double> prior;
  std::size_t turn = 0;
  bool truncated = false;

  nlohmann::json to_json() const {
    return {{"apprentice", apprentice},         {"response", response},
            {"knowledge_index", knowledge_index}, {"knowledge_sentence", knowledge_sentence},
            {"prior", prior},                   {"turn", turn},
            {"truncated", truncated}};
  }
};

struct SessionInfo {
  std::string id;
  std::string topic;
  std::vector<std::string> pool;  // sentinel first

  nlohmann::json to_json() const { return {{"id", id}, {"topic", topic}, {"pool", pool}}; }
};

struct Transcript {
  SessionInfo info;
  std::vector<MessageResult> turns;

  nlohmann::json to_json() const {
    auto j = info.to_json();
    j["turns"] = nlohmann::json::array();
    for (const auto& t : turns) j["turns"].push_back(t.to_json());
    return j;
  }
};

using Clock = std::chrono::steady_clock;

// In-memory dialogue sessions over a read-only model. Requests for one
// session are serialized by that session's mutex; different sessions run
// concurrently.
class ChatEngine {
 public:
  struct Options {
    std::size_t max_len = 40;
    std::uint64_t seed = 0;
    std::chrono::seconds idle_timeout{30 * 60};
    std::function<Clock::time_point()> clock = [] { return Clock::now(); };
  };

  ChatEngine(model::SktModel<float> m, corpus::Vocab vocab, Options opt)
      : model_(std::move(m)), vocab_(std::move(vocab)), opt_(std::move(opt)), ids_(opt_.seed) {}

  ChatEngine(model::SktModel<float> m, corpus::Vocab vocab) : ChatEngine(std::move(m), std::move(vocab), Options{}) {}

  // Topic pools from an ingested corpus: the first turn's pool of the first
  // episode with that topic.
  void add_topics(const std::vector<corpus::Episode>& episodes) {
    std::lock_guard lock(mu_);
    for (const auto& e : episodes) {
      if (e.turns.empty() || topics_.count(e.topic)) continue;
      const auto& s = e.turns.front().pool.sentences;
      topics_.emplace(e.topic, std::vector<corpus::Tokens>(s.begin() + 1, s.end()));
    }
  }

  std::vector<std::string> topics() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [k, _] : topics_) out.push_back(k);
    return out;
  }

  SessionInfo create_session(const std::optional<std::string>& topic,
                             const std::optional<std::vector<std::string>>& pool_text) {
    std::vector<corpus::Tokens> listed;
    if (pool_text) {
      for (const auto& s : *pool_text) {
        auto toks = corpus::tokenize(s);
        if (toks.empty()) throw invalid_input("pool sentences must contain at least one token");
        listed.push_back(std::move(toks));
      }
    }
    expire_idle();
    std::lock_guard lock(mu_);
    if (!pool_text) {
      if (!topic) throw invalid_input("provide a topic or an inline pool");
      const auto it = topics_.find(*topic);
      if (it == topics_.end()) throw not_found("unknown topic '" + *topic + "' and no inline pool");
      listed = it->second;
    }
    auto s = std::make_shared<Session>();
    s->pool = corpus::KnowledgePool::with_sentinel(std::move(listed));
    for (const auto& sent : s->pool.sentences) s->pool_ids.push_back(model::nonempty(vocab_.encode(sent)));
    s->state = model::InferenceState<float>::initial(model_.d_model());
    s->last_used = opt_.clock();
    s->info.topic = topic.value_or("");
    for (const auto& sent : s->pool.sentences) s->info.pool.push_back(corpus::join(sent));
    do {
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(ids_.next_u64()));
      s->info.id = buf;
    } while (sessions_.count(s->info.id));
    sessions_.emplace(s->info.id, s);
    return s->info;
  }

  MessageResult post_message(const std::string& id, const std::string& text) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->deleted) throw not_found("unknown session '" + id + "'");
    const auto tokens = corpus::tokenize(text);
    if (tokens.empty()) throw invalid_input("message text is empty");

    nn::NoGradGuard no_grad;
    const auto x = vocab_.encode(tokens);
    const auto pt = model::prior_turn(model_, s->state, x, s->pool_ids);
    const auto memory = model::fixed_selection_memory(model_, pt.encoding, pt.selected);
    const auto g = model::generate(memory, model_.encoder.embedding, model_.decoder, opt_.max_len);
    s->state = model::advance(model_, s->state, pt, x, g.tokens);

    MessageResult r;
    r.apprentice = corpus::join(tokens);
    r.response = corpus::join(vocab_.decode(g.tokens));
    r.knowledge_index = pt.selected;
    r.knowledge_sentence = s->info.pool.at(pt.selected);
    r.prior.assign(pt.prior.probs.data().begin(), pt.prior.probs.data().end());
    r.turn = s->turns.size() + 1;
    r.truncated = g.truncated;
    s->turns.push_back(r);
    s->last_used = opt_.clock();
    return r;
  }

  Transcript get_transcript(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    s->last_used = opt_.clock();
    return {s->info, s->turns};
  }

  void delete_session(const std::string& id) {
    std::shared_ptr<Session> s;
    {
      std::lock_guard lock(mu_);
      const auto it = sessions_.find(id);
      if (it == sessions_.end()) throw not_found("unknown session '" + id + "'");
      s = it->second;
      sessions_.erase(it);
    }
    std::lock_guard lock(s->mu);
    s->deleted = true;
  }

  // Drops sessions idle for longer than the timeout; returns how many.
  std::size_t expire_idle() {
    const auto now = opt_.clock();
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      std::unique_lock slock(it->second->mu, std::try_to_lock);
      if (slock.owns_lock() && now - it->second->last_used > opt_.idle_timeout) {
        it->second->deleted = true;
        it = sessions_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    return n;
  }

  std::size_t session_count() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

  const model::SktModel<float>& model() const { return model_; }

 private:
  struct Session {
    std::mutex mu;
    SessionInfo info;
    corpus::KnowledgePool pool;
    std::vector<corpus::Ids> pool_ids;
    model::InferenceState<float> state;
    std::vector<MessageResult> turns;
    Clock::time_point last_used;
    bool deleted = false;
  };

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw not_found("unknown session '" + id + "'");
    return it->second;
  }

  const model::SktModel<float> model_;
  const corpus::Vocab vocab_;
  Options opt_;
  mutable std::mutex mu_;
  nn::Rng ids_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::vector<corpus::Tokens>> topics_;
};

}  // namespace skt::service
