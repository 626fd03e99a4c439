#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "skt/corpus/batch.hpp"
#include "skt/model/model.hpp"
#include "skt/nn/optim.hpp"

namespace skt::train {

using nn::Tensor;

// How a turn's response likelihood enters the objective.
enum class NllReduction { token_mean, sum };

inline std::string to_string(NllReduction r) { return r == NllReduction::sum ? "sum" : "token_mean"; }

inline NllReduction parse_nll_reduction(const std::string& s) {
  if (s == "token_mean") return NllReduction::token_mean;
  if (s == "sum") return NllReduction::sum;
  throw std::invalid_argument("train config: unknown nll_reduction '" + s + "'");
}

struct TrainConfig {
  double lr = 1e-3;
  double lambda = 1.0;        // knowledge-loss weight
  double tau = 0.1;           // Gumbel-Softmax temperature
  double eps_knowledge = 0.1; // label smoothing for selection
  double eps_gen = 0.05;      // label smoothing for generation
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double labeled_fraction = 1.0;
  double clip_norm = 1.0;
  NllReduction nll_reduction = NllReduction::token_mean;
  std::size_t vocab_max = 10000;
  std::size_t vocab_min_freq = 1;
  model::ModelConfig model;

  void check() const {
    if (!(tau > 0.0)) throw std::invalid_argument("train config: tau must be positive");
    if (lambda < 0.0) throw std::invalid_argument("train config: lambda must be non-negative");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
    if (eps_knowledge < 0.0 || eps_knowledge >= 1.0 || eps_gen < 0.0 || eps_gen >= 1.0) {
      throw std::invalid_argument("train config: smoothing must lie in [0, 1)");
    }
    if (labeled_fraction < 0.0 || labeled_fraction > 1.0) {
      throw std::invalid_argument("train config: labeled_fraction must lie in [0, 1]");
    }
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"lambda", c.lambda},
          {"tau", c.tau},
          {"eps_knowledge", c.eps_knowledge},
          {"eps_gen", c.eps_gen},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"labeled_fraction", c.labeled_fraction},
          {"clip_norm", c.clip_norm},
          {"nll_reduction", to_string(c.nll_reduction)},
          {"vocab_max", c.vocab_max},
          {"vocab_min_freq", c.vocab_min_freq},
          {"model", model::to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  static const std::vector<std::string> known{"lr",         "lambda",           "tau",       "eps_knowledge",
                                              "eps_gen",    "epochs",           "batch_size", "seed",
                                              "labeled_fraction", "clip_norm",  "vocab_max", "vocab_min_freq",
                                              "nll_reduction",    "model"};
  if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw std::invalid_argument("train config: unknown key '" + k + "'");
    }
  }
  c.lr = j.value("lr", c.lr);
  c.lambda = j.value("lambda", c.lambda);
  c.tau = j.value("tau", c.tau);
  c.eps_knowledge = j.value("eps_knowledge", c.eps_knowledge);
  c.eps_gen = j.value("eps_gen", c.eps_gen);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.labeled_fraction = j.value("labeled_fraction", c.labeled_fraction);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  if (j.contains("nll_reduction")) c.nll_reduction = parse_nll_reduction(j.at("nll_reduction").get<std::string>());
  c.vocab_max = j.value("vocab_max", c.vocab_max);
  c.vocab_min_freq = j.value("vocab_min_freq", c.vocab_min_freq);
  if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"), c.model);
  c.check();
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config file '" + path + "': " + e.what());
  }
  return train_config_from_json(j);
}

struct TurnLoss {
  double nll = 0.0;  // reconstruction term as it enters the loss
  std::size_t tokens = 0;
  double kl = 0.0;
  double knowledge = 0.0;
  double total = 0.0;
  std::size_t selected = 0;
  std::vector<double> prior;
  std::vector<double> posterior;
};

template <typename T>
struct TurnLossBreakdown {
  Tensor<T> loss;  // scalar: mean over turns of nll + kl + lambda * knowledge
  std::vector<TurnLoss> turns;
  double nll = 0.0;
  double kl = 0.0;
  double knowledge = 0.0;
  double total = 0.0;
};

// Replaces sampling for gradient checks: fixed Gumbel noise per turn, and
// optionally the relaxed (soft) sample in place of the straight-through one.
template <typename T>
struct LossOptions {
  const std::vector<std::vector<T>>* noise = nullptr;
  bool hard = true;
};

template <typename T>
TurnLossBreakdown<T> episode_loss(const model::SktModel<T>& m, const corpus::EncodedEpisode& ep, const TrainConfig& cfg,
                                  nn::Rng& rng, const LossOptions<T>& opt = {}) {
  if (ep.turns.empty()) throw std::invalid_argument("episode_loss: episode has no turns");
  const std::size_t d = m.d_model();
  auto dialog = model::DialogState<T>::initial(d);
  auto history = model::HistoryState<T>::initial(d);
  auto last = Tensor<T>::zeros({d});
  const T tau = static_cast<T>(cfg.tau);
  const T lambda = static_cast<T>(cfg.lambda);

  TurnLossBreakdown<T> out;
  std::vector<Tensor<T>> terms;
  for (std::size_t t = 0; t < ep.turns.size(); ++t) {
    const auto& turn = ep.turns[t];
    const auto te = model::encode_turn(m, turn.x, &turn.y, turn.pool);
    history = model::history_step(history, m.config().use_history ? last : Tensor<T>::zeros({d}), m.selector);
    const auto next = model::dialog_step(dialog, te.h_x(), te.h_y(), m.encoder);
    const auto pool = te.pool();
    const auto prior = model::prior_distribution(dialog.d_xy, te.h_x(), history.d_k, pool, {}, m.selector, t + 1);
    const auto post = model::posterior_distribution(next.d_xy, history.d_k, pool, {}, m.selector, t + 1);
    const std::vector<T>* noise = opt.noise ? &opt.noise->at(t) : nullptr;
    const auto sel = model::select_knowledge(post, pool, model::SelectMode::gumbel, tau, &rng, noise, opt.hard);
    const auto memory = model::selection_memory(m, te, sel.weights, sel.index);

    const auto target = model::with_eos(turn.y);
    auto nll = nn::sum(model::sequence_nll(memory, target, m.encoder.embedding, m.decoder, static_cast<T>(cfg.eps_gen)));
    if (cfg.nll_reduction == NllReduction::token_mean) nll = nn::scale(nll, T(1) / static_cast<T>(target.size()));
    const auto kl = nn::kl_categorical_logits(post.logits, prior.logits, post.mask);
    auto term = nn::add(nll, kl);
    TurnLoss tl;
    tl.nll = static_cast<double>(nll.item());
    tl.tokens = target.size();
    tl.kl = static_cast<double>(kl.item());
    tl.selected = sel.index;
    tl.prior.assign(prior.probs.data().begin(), prior.probs.data().end());
    tl.posterior.assign(post.probs.data().begin(), post.probs.data().end());
    if (turn.gold && lambda > T(0)) {
      const std::size_t L = te.pool_size();
      const auto log_q = nn::reshape(nn::log_softmax_rows(post.logits, post.mask), {1, L});
      const auto kn = nn::sum(nn::smoothed_nll_rows(log_q, {*turn.gold}, static_cast<T>(cfg.eps_knowledge)));
      tl.knowledge = static_cast<double>(kn.item());
      term = nn::add(term, nn::scale(kn, lambda));
    }
    tl.total = static_cast<double>(term.item());
    terms.push_back(term);
    out.turns.push_back(tl);

    dialog = next;
    last = sel.embedding;
  }
  const T inv = T(1) / static_cast<T>(terms.size());
  out.loss = nn::scale(nn::sum(terms.size() == 1 ? terms[0] : nn::hcat(terms)), inv);
  for (const auto& tl : out.turns) {
    out.nll += tl.nll / static_cast<double>(terms.size());
    out.kl += tl.kl / static_cast<double>(terms.size());
    out.knowledge += tl.knowledge / static_cast<double>(terms.size());
  }
  out.total = static_cast<double>(out.loss.item());
  return out;
}

// Keeps exactly floor(rho * labeled) gold labels, chosen uniformly without
// replacement; every other turn becomes unlabeled.
inline std::vector<corpus::Episode> mask_labels(std::vector<corpus::Episode> episodes, double rho, std::uint64_t seed) {
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("mask_labels: rho must lie in [0, 1]");
  std::vector<std::pair<std::size_t, std::size_t>> labeled;
  for (std::size_t e = 0; e < episodes.size(); ++e)
    for (std::size_t t = 0; t < episodes[e].turns.size(); ++t)
      if (episodes[e].turns[t].gold) labeled.emplace_back(e, t);
  const auto keep = static_cast<std::size_t>(std::floor(rho * static_cast<double>(labeled.size()) + 1e-9));
  nn::Rng rng(seed);
  rng.shuffle(labeled);
  for (std::size_t i = keep; i < labeled.size(); ++i) {
    auto& turn = episodes[labeled[i].first].turns[labeled[i].second];
    turn.gold.reset();
    turn.alt_golds.clear();
  }
  return episodes;
}

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double loss = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  double knowledge = 0.0;
  double grad_norm = 0.0;  // mean pre-clipping norm
};

template <typename T>
struct Trainer {
  model::SktModel<T>& model;
  TrainConfig cfg;
  std::vector<Tensor<T>> params;
  nn::AdamState<T> adam;
  std::size_t epoch = 0;

  Trainer(model::SktModel<T>& m, TrainConfig c) : model(m), cfg(std::move(c)), params(m.parameters()) {
    cfg.check();
    nn::AdamConfig ac;
    ac.lr = cfg.lr;
    adam = nn::make_adam_state(params, ac);
  }

  // One Adam update on the mean episode loss of a batch of dialogues.
  EpochMetrics step(const std::vector<corpus::EncodedEpisode>& episodes, nn::Rng& rng) {
    nn::zero_grads(params);
    std::vector<Tensor<T>> losses;
    EpochMetrics mtr;
    for (const auto& ep : episodes) {
      const auto b = episode_loss(model, ep, cfg, rng);
      if (!std::isfinite(b.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch + 1 << " step " << adam.step + 1 << ": nll=" << b.nll
            << " kl=" << b.kl << " knowledge=" << b.knowledge;
        throw TrainingError(msg.str());
      }
      losses.push_back(b.loss);
      mtr.nll += b.nll;
      mtr.kl += b.kl;
      mtr.knowledge += b.knowledge;
      mtr.loss += b.total;
    }
    const auto total = nn::scale(nn::sum(losses.size() == 1 ? losses[0] : nn::hcat(losses)),
                                 T(1) / static_cast<T>(losses.size()));
    nn::backward(total);
    mtr.grad_norm = cfg.clip_norm > 0.0 ? nn::clip_grad_norm(params, cfg.clip_norm) : nn::global_grad_norm(params);
    if (!std::isfinite(mtr.grad_norm)) {
      throw TrainingError("non-finite gradient norm at epoch " + std::to_string(epoch + 1) + " step " +
                          std::to_string(adam.step + 1));
    }
    nn::adam_step(params, adam);
    const double n = static_cast<double>(episodes.size());
    mtr.loss /= n;
    mtr.nll /= n;
    mtr.kl /= n;
    mtr.knowledge /= n;
    mtr.steps = 1;
    return mtr;
  }

  EpochMetrics train_epoch(const std::vector<corpus::EncodedEpisode>& data) {
    if (data.empty()) throw std::invalid_argument("train_epoch: no training episodes");
    const nn::Rng root(cfg.seed);
    const auto batches = corpus::make_batches(data, cfg.batch_size, root.fork(1000 + epoch).next_u64());
    nn::Rng sampler = root.fork(2000 + epoch);
    EpochMetrics sum;
    sum.epoch = epoch + 1;
    for (const auto& b : batches) {
      std::vector<corpus::EncodedEpisode> eps;
      for (std::size_t i = 0; i < b.size(); ++i) eps.push_back(corpus::unbatch(b, i));
      const auto s = step(eps, sampler);
      sum.loss += s.loss;
      sum.nll += s.nll;
      sum.kl += s.kl;
      sum.knowledge += s.knowledge;
      sum.grad_norm += s.grad_norm;
      ++sum.steps;
    }
    const double n = static_cast<double>(sum.steps);
    sum.loss /= n;
    sum.nll /= n;
    sum.kl /= n;
    sum.knowledge /= n;
    sum.grad_norm /= n;
    ++epoch;
    return sum;
  }

  std::vector<EpochMetrics> train(const std::vector<corpus::EncodedEpisode>& data,
                                  const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    std::vector<EpochMetrics> out;
    while (epoch < cfg.epochs) {
      out.push_back(train_epoch(data));
      if (on_epoch) on_epoch(out.back());
    }
    return out;
  }
};

}  // namespace skt::train
