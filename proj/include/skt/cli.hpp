#pragma once

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "skt/corpus/io.hpp"
#include "skt/corpus/synth.hpp"
#include "skt/corpus/vocab.hpp"
#include "skt/eval/evaluator.hpp"
#include "skt/service/chat.hpp"
#include "skt/service/http.hpp"
#include "skt/train/checkpoint.hpp"
#include "skt/train/trainer.hpp"

namespace skt {

struct CliStreams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
  std::istream& in = std::cin;
};

namespace cli_detail {

inline corpus::Format format_or_throw(const std::string& s) {
  const auto f = corpus::parse_format(s);
  if (!f) throw std::invalid_argument("unknown corpus format '" + s + "' (expected wow-jsonl or holle-jsonl)");
  return *f;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  }
  return out;
}

}  // namespace cli_detail

// Subcommands: synth | prepare | train | eval | chat | serve.
// Returns 0 on success, 2 on usage errors and 1 on any other failure.
inline int run_cli(const std::vector<std::string>& args, CliStreams io = {}) {
  CLI::App app{"Sequential knowledge selection for grounded dialogue", "skt"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string data, ckpt, config, format = "wow-jsonl", out_path;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dialogue corpus");
  corpus::SynthConfig sc;
  std::string split = "train";
  synth->add_option("--episodes", sc.episodes, "number of dialogues")->capture_default_str();
  synth->add_option("--topics", sc.topics)->capture_default_str();
  synth->add_option("--turns", sc.turns)->capture_default_str();
  synth->add_option("--pool-size", sc.pool_size, "pool size including the sentinel")->capture_default_str();
  synth->add_option("--multimodality", sc.multimodality)->capture_default_str();
  synth->add_option("--copy-rate", sc.copy_rate)->capture_default_str();
  synth->add_flag("--history-dependent", sc.history_dependent);
  synth->add_option("--split", split)->capture_default_str();
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("--out", out_path, "output JSONL (stdout when omitted)");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "validate a corpus and write it in canonical form");
  std::size_t vocab_max = 10000, min_freq = 1;
  std::string vocab_out;
  prepare->add_option("--data", data, "input JSONL")->required();
  prepare->add_option("--format", format)->capture_default_str();
  prepare->add_option("--out", out_path, "canonical JSONL output");
  prepare->add_option("--vocab-out", vocab_out, "write the vocabulary, one token per line");
  prepare->add_option("--vocab-max", vocab_max)->capture_default_str();
  prepare->add_option("--min-freq", min_freq)->capture_default_str();
  prepare->add_option("--seed", seed)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  std::optional<double> rho;
  std::optional<std::size_t> epochs;
  train->add_option("--config", config, "JSON training configuration");
  train->add_option("--data", data, "training JSONL")->required();
  train->add_option("--format", format)->capture_default_str();
  train->add_option("--ckpt", ckpt, "checkpoint output path")->required();
  train->add_option("--seed", seed);
  train->add_option("--labeled-fraction", rho);
  train->add_option("--epochs", epochs);

  // eval
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  std::string json_out, ppl_knowledge = "prior";
  std::size_t max_len = 40;
  evalc->add_option("--ckpt", ckpt)->required();
  evalc->add_option("--data", data)->required();
  evalc->add_option("--format", format)->capture_default_str();
  evalc->add_option("--json", json_out, "also write the report as JSON");
  evalc->add_option("--ppl-knowledge", ppl_knowledge, "prior | gold")->capture_default_str();
  evalc->add_option("--max-len", max_len)->capture_default_str();
  evalc->add_option("--seed", seed);

  // chat
  auto* chat = app.add_subcommand("chat", "converse in the terminal");
  std::string topic, pool_file;
  chat->add_option("--ckpt", ckpt)->required();
  chat->add_option("--data", data, "corpus providing topic pools");
  chat->add_option("--format", format)->capture_default_str();
  chat->add_option("--topic", topic);
  chat->add_option("--pool", pool_file, "file with one knowledge sentence per line");
  chat->add_option("--max-len", max_len)->capture_default_str();
  chat->add_option("--seed", seed);

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP inference service");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--ckpt", ckpt)->required();
  serve->add_option("--data", data, "corpus providing topic pools");
  serve->add_option("--format", format)->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--max-len", max_len)->capture_default_str();
  serve->add_option("--seed", seed);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*synth) {
      const auto s = corpus::parse_split(split);
      if (!s) throw std::invalid_argument("unknown split '" + split + "'");
      sc.split = *s;
      sc.seed = seed;
      const auto eps = corpus::generate_synthetic(sc);
      if (out_path.empty()) {
        corpus::write_episodes(io.out, eps);
      } else {
        corpus::save_episodes(out_path, eps);
        io.out << "wrote " << eps.size() << " episodes to " << out_path << "\n";
      }
      return 0;
    }

    if (*prepare) {
      const auto eps = corpus::load_episodes(data, cli_detail::format_or_throw(format));
      std::size_t turns = 0, labeled = 0, pool = 0;
      for (const auto& e : eps) {
        corpus::validate(e);
        for (const auto& t : e.turns) {
          ++turns;
          labeled += t.gold ? 1 : 0;
          pool += t.pool.size();
        }
      }
      io.out << "episodes " << eps.size() << "\nturns " << turns << "\nlabeled_turns " << labeled << "\n";
      if (turns) io.out << "mean_pool_size " << static_cast<double>(pool) / static_cast<double>(turns) << "\n";
      if (!out_path.empty()) corpus::save_episodes(out_path, eps);
      if (!vocab_out.empty()) {
        const auto v = corpus::build_vocab(eps, vocab_max, min_freq);
        std::ofstream vo(vocab_out);
        if (!vo) throw std::runtime_error("cannot write '" + vocab_out + "'");
        for (const auto& t : v.tokens()) vo << t << "\n";
        io.out << "vocab " << v.size() << "\n";
      }
      return 0;
    }

    if (*train) {
      train::TrainConfig cfg = config.empty() ? train::TrainConfig{} : train::load_train_config(config);
      if (train->count("--seed")) cfg.seed = seed;
      if (rho) cfg.labeled_fraction = *rho;
      if (epochs) cfg.epochs = *epochs;
      cfg.check();
      auto eps = corpus::load_episodes(data, cli_detail::format_or_throw(format));
      if (eps.empty()) throw std::runtime_error("no training episodes in '" + data + "'");
      eps = train::mask_labels(std::move(eps), cfg.labeled_fraction, cfg.seed);
      const auto vocab = corpus::build_vocab(eps, cfg.vocab_max, cfg.vocab_min_freq);
      cfg.model.vocab_size = vocab.size();
      std::vector<corpus::EncodedEpisode> enc;
      for (const auto& e : eps) enc.push_back(corpus::encode(e, vocab));
      model::SktModel<float> m(cfg.model, cfg.seed);
      train::Trainer<float> trainer(m, cfg);
      trainer.train(enc, [&](const train::EpochMetrics& em) {
        io.out << "epoch " << em.epoch << " loss " << em.loss << " nll " << em.nll << " kl " << em.kl
               << " knowledge " << em.knowledge << "\n";
      });
      train::save_checkpoint(m, cfg, vocab, ckpt);
      io.out << "saved " << ckpt << "\n";
      return 0;
    }

    if (*evalc) {
      const auto ck = train::load_checkpoint(ckpt);
      const auto eps = corpus::load_episodes(data, cli_detail::format_or_throw(format));
      eval::EvalOptions opt;
      if (ppl_knowledge == "gold") {
        opt.ppl_knowledge = eval::PplKnowledge::gold;
      } else if (ppl_knowledge != "prior") {
        throw std::invalid_argument("--ppl-knowledge must be 'prior' or 'gold'");
      }
      opt.max_len = max_len;
      const auto report = eval::evaluate_split(ck.model, eps, ck.vocab, opt);
      io.out << report.to_table();
      if (!json_out.empty()) {
        std::ofstream jo(json_out);
        if (!jo) throw std::runtime_error("cannot write '" + json_out + "'");
        jo << report.to_json().dump(2) << "\n";
      }
      return 0;
    }

    if (*chat || *serve) {
      auto ck = train::load_checkpoint(ckpt);
      service::ChatEngine::Options opt;
      opt.max_len = max_len;
      opt.seed = seed;
      service::ChatEngine engine(std::move(ck.model), ck.vocab, opt);
      if (!data.empty()) engine.add_topics(corpus::load_episodes(data, cli_detail::format_or_throw(format)));

      if (*serve) {
        auto srv = service::make_server(engine);
        io.out << "listening on " << host << ":" << port << "\n" << std::flush;
        if (!srv->listen(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
        return 0;
      }

      std::optional<std::string> t;
      std::optional<std::vector<std::string>> pool;
      if (!topic.empty()) t = topic;
      if (!pool_file.empty()) pool = cli_detail::read_lines(pool_file);
      const auto info = engine.create_session(t, pool);
      io.out << "knowledge pool:\n";
      for (std::size_t i = 0; i < info.pool.size(); ++i) io.out << "  [" << i << "] " << info.pool[i] << "\n";
      io.out << "> " << std::flush;
      for (std::string line; std::getline(io.in, line);) {
        if (line == "/quit") break;
        try {
          const auto r = engine.post_message(info.id, line);
          io.out << "[" << r.knowledge_index << "] " << r.knowledge_sentence << "\n" << "wizard: " << r.response << "\n";
        } catch (const service::ServiceError& e) {
          io.err << e.what() << "\n";
        }
        io.out << "> " << std::flush;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int run_cli(int argc, char** argv, CliStreams io = {}) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, io);
}

}  // namespace skt
