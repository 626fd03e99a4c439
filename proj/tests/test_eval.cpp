#include <gtest/gtest.h>

#include "metric_cases.hpp"
#include "skt/corpus/synth.hpp"
#include "skt/eval/evaluator.hpp"
#include "support.hpp"

using namespace skt;
using corpus::Tokens;
using skt::testing::record;
using skt::testing::toks;

class MetricOracle : public ::testing::TestWithParam<skt::testing::MetricCase> {};

TEST_P(MetricOracle, MatchesHandCount) {
  EXPECT_NEAR(GetParam().compute(), GetParam().expected, 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Cases, MetricOracle, ::testing::ValuesIn(skt::testing::metric_cases()),
                         [](const auto& info) {
                           std::string s;
                           for (char c : info.param.name) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
                           return s;
                         });

TEST(Metrics, SuiteHasTwentyCases) { EXPECT_EQ(skt::testing::metric_cases().size(), 20u); }

TEST(Metrics, EmptyReferenceListRejected) {
  EXPECT_THROW(eval::unigram_f1(toks("a"), {}), std::invalid_argument);
  EXPECT_THROW(eval::ngram_f1(toks("a"), toks("a"), 0), std::invalid_argument);
}

namespace {

Tokens random_tokens(nn::Rng& rng, std::size_t max_len) {
  static const std::vector<std::string> pool{"the", "a", "an", "cat", "dog", "sat", ",", ".", "?", "ran", "it's", "x"};
  Tokens t(rng.below(max_len + 1));
  for (auto& s : t) s = pool[rng.below(pool.size())];
  return t;
}

}  // namespace

TEST(Metrics, NormalizationIdempotentAndBounded) {
  nn::Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto t = random_tokens(rng, 10);
    const auto n = eval::normalize_text(t);
    EXPECT_EQ(eval::normalize_text(n), n);
    for (const auto& w : n) EXPECT_FALSE(eval::is_article(w) || eval::is_punctuation(w));
  }
}

TEST(Metrics, ScoresBoundedAndSymmetricSelfMatch) {
  nn::Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const auto p = random_tokens(rng, 8);
    const auto r = random_tokens(rng, 8);
    for (std::size_t n : {1, 2}) {
      const double f = eval::best_ngram_f1(p, {r}, n);
      EXPECT_GE(f, 0.0);
      EXPECT_LE(f, 1.0);
      EXPECT_NEAR(f, eval::best_ngram_f1(r, {p}, n), 1e-12);
      EXPECT_EQ(eval::best_ngram_f1(p, {p}, n), 1.0);
    }
  }
}

TEST(Metrics, AddingReferenceNeverLowersScore) {
  nn::Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto p = random_tokens(rng, 8);
    std::vector<Tokens> refs{random_tokens(rng, 8)};
    for (int k = 0; k < 3; ++k) {
      const double before1 = eval::unigram_f1(p, refs);
      const double before2 = eval::bigram_f1(p, refs);
      refs.push_back(random_tokens(rng, 8));
      EXPECT_GE(eval::unigram_f1(p, refs), before1);
      EXPECT_GE(eval::bigram_f1(p, refs), before2);
    }
  }
}

TEST(Accuracy, DenominatorCountsLabeledTurnsOnly) {
  const auto a = eval::accuracy_of(
      {record(1, 0, {0}), record(2, 1, {}), record(3, 2, {5}), record(6, 1, {1, 4}), record(9, 3, {})});
  EXPECT_EQ(a.labeled, 3u);
  EXPECT_NEAR(a.overall, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(a.per_turn_count, (std::vector<std::size_t>{1, 0, 1, 0, 1}));
  EXPECT_EQ(a.per_turn[0], 1.0);
  EXPECT_TRUE(std::isnan(a.per_turn[1]));
  EXPECT_EQ(a.per_turn[2], 0.0);
  EXPECT_EQ(a.per_turn[4], 1.0);
}

TEST(Accuracy, NoLabeledTurnsIsAnError) {
  EXPECT_THROW(eval::accuracy_of({record(1, 0, {})}), std::invalid_argument);
  EXPECT_THROW(eval::accuracy_of({}), std::invalid_argument);
}

TEST(Perplexity, NoTokensIsAnError) { EXPECT_THROW(eval::perplexity_of({}), std::invalid_argument); }

TEST(Perplexity, OrderInsensitive) {
  std::vector<eval::TurnRecord> r{record(1, 0, {}, 2.5, 3), record(2, 0, {}, 0.5, 1), record(3, 0, {}, 7.0, 4)};
  const double a = eval::perplexity_of(r);
  std::reverse(r.begin(), r.end());
  EXPECT_NEAR(eval::perplexity_of(r), a, 1e-12);
  EXPECT_NEAR(a, std::exp(10.0 / 8.0), 1e-12);
}

// ---- model-backed metrics --------------------------------------------------------

namespace {

struct Fixture {
  std::vector<corpus::Episode> episodes;
  corpus::Vocab vocab;
  model::ModelConfig config;

  Fixture() {
    corpus::SynthConfig sc;
    sc.episodes = 6;
    sc.turns = 6;
    sc.pool_size = 4;
    sc.vocab_size = 40;
    sc.topics = 4;
    sc.split = corpus::Split::test_seen;
    episodes = corpus::generate_synthetic(sc);
    vocab = corpus::build_vocab(episodes, 10000);
    config = skt::testing::tiny_config(vocab.size(), 16);
    config.max_len = 12;
  }
};

}  // namespace

TEST(Perplexity, UniformOutputModelGivesVocabularySize) {
  Fixture f;
  model::SktModel<double> m(f.config, 1);
  for (auto& v : m.decoder.out.weight.mutable_data()) v = 0.0;
  for (auto& v : m.decoder.out.bias.mutable_data()) v = 0.0;
  eval::EvalOptions opt;
  opt.overrides.alpha = 0.0;
  EXPECT_NEAR(eval::perplexity(m, f.episodes, f.vocab, opt), static_cast<double>(f.vocab.size()), 1e-6);
}

TEST(Perplexity, EqualsIndependentlyAccumulatedLikelihood) {
  Fixture f;
  model::SktModel<double> m(f.config, 2);
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& ep : f.episodes) {
    const auto enc = corpus::encode(ep, f.vocab);
    auto state = model::InferenceState<double>::initial(m.d_model());
    for (const auto& turn : enc.turns) {
      const auto pt = model::prior_turn(m, state, turn.x, turn.pool);
      const auto target = model::with_eos(turn.y);
      const auto memory = model::fixed_selection_memory(m, pt.encoding, pt.selected);
      const auto out = model::decode(memory, [&] {
        corpus::Ids in{corpus::Vocab::bos};
        in.insert(in.end(), target.begin(), target.end() - 1);
        return in;
      }(), m.encoder.embedding, m.decoder);
      for (std::size_t i = 0; i < target.size(); ++i) nll -= std::log(out.p_mixed.at(i, target[i]));
      count += target.size();
      state = model::advance(m, state, pt, turn.x, turn.y);
    }
  }
  EXPECT_NEAR(eval::perplexity(m, f.episodes, f.vocab), std::exp(nll / static_cast<double>(count)), 1e-6);
}

TEST(Perplexity, GoldKnowledgeSwitch) {
  Fixture f;
  model::SktModel<double> m(f.config, 3);
  eval::EvalOptions opt;
  opt.generate = false;
  opt.ppl_knowledge = eval::PplKnowledge::gold;
  const auto recs = eval::score_episodes(m, f.episodes, f.vocab, opt);
  const auto prior_recs = eval::score_episodes(m, f.episodes, f.vocab, {eval::PplKnowledge::prior, false});
  ASSERT_EQ(recs.size(), prior_recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].correct()) EXPECT_EQ(recs[i].nll, prior_recs[i].nll);
  }
}

TEST(Evaluate, DeterministicAndBounded) {
  Fixture f;
  model::SktModel<float> m(f.config, 4);
  const auto a = eval::evaluate_split(m, f.episodes, f.vocab);
  const auto b = eval::evaluate_split(m, f.episodes, f.vocab);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.to_table(), b.to_table());
  EXPECT_GE(a.ppl, 1.0);
  for (double v : {a.r1, a.r2, a.accuracy.overall}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(a.split, corpus::to_string(corpus::Split::test_seen));
  EXPECT_EQ(a.episodes, 6u);
  EXPECT_EQ(a.turns, 36u);
  EXPECT_EQ(a.accuracy.per_turn_count, (std::vector<std::size_t>{6, 6, 6, 6, 12}));
  const auto j = a.to_json();
  EXPECT_EQ(j["per_turn_accuracy"].size(), 5u);
  EXPECT_NE(a.to_table().find("acc_turn_5+"), std::string::npos);
}

TEST(Evaluate, SelectionAccuracyMatchesPriorArgmax) {
  Fixture f;
  model::SktModel<float> m(f.config, 5);
  std::size_t correct = 0, total = 0;
  for (const auto& ep : f.episodes) {
    const auto enc = corpus::encode(ep, f.vocab);
    auto state = model::InferenceState<float>::initial(m.d_model());
    for (const auto& turn : enc.turns) {
      const auto pt = model::prior_turn(m, state, turn.x, turn.pool);
      const auto& p = pt.prior.probs.data();
      const std::size_t arg = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      correct += arg == *turn.gold;
      ++total;
      state = model::advance(m, state, pt, turn.x, turn.y);
    }
  }
  EXPECT_NEAR(eval::selection_accuracy(m, f.episodes, f.vocab).overall,
              static_cast<double>(correct) / static_cast<double>(total), 1e-12);
}

TEST(Evaluate, GoldResponsesScorePerfectAgainstThemselves) {
  Fixture f;
  double r1 = 0.0, r2 = 0.0;
  std::size_t n = 0;
  for (const auto& ep : f.episodes) {
    for (const auto& t : ep.turns) {
      r1 += eval::unigram_f1(t.wizard, {t.wizard});
      r2 += eval::bigram_f1(t.wizard, {t.wizard});
      ++n;
    }
  }
  EXPECT_EQ(100.0 * r1 / n, 100.0);
  EXPECT_EQ(100.0 * r2 / n, 100.0);
}

TEST(Evaluate, UnlabeledEpisodesExcludedFromAccuracy) {
  Fixture f;
  auto eps = f.episodes;
  for (auto& t : eps[0].turns) {
    t.gold.reset();
    t.alt_golds.clear();
  }
  model::SktModel<float> m(f.config, 6);
  const auto a = eval::selection_accuracy(m, eps, f.vocab);
  EXPECT_EQ(a.labeled, 30u);
}
