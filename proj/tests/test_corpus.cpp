#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "skt/corpus/batch.hpp"
#include "skt/corpus/io.hpp"
#include "skt/corpus/synth.hpp"
#include "skt/corpus/tokenizer.hpp"
#include "skt/corpus/vocab.hpp"

using namespace skt;
using namespace skt::corpus;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "skt_test_corpus";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Episode> parse(const std::string& text, Format f = Format::wow_jsonl) {
  std::istringstream in(text);
  return read_episodes(in, f);
}

}  // namespace

// ---- tokenizer -------------------------------------------------------------------

TEST(Tokenize, SplitsPunctuationAndLowercases) {
  EXPECT_EQ(tokenize("Hello, world!"), (Tokens{"hello", ",", "world", "!"}));
}

TEST(Tokenize, EmptyTextGivesNoTokens) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize(" \t\n ").empty());
}

TEST(Tokenize, KeepsNonAsciiBytesInsideWords) {
  EXPECT_EQ(tokenize("Café au lait."), (Tokens{"café", "au", "lait", "."}));
}

TEST(Tokenize, IdempotentOnFuzzStrings) {
  nn::Rng rng(2024);
  const std::string alphabet = "abcXYZ019 ,.!?'\"-()\t\n;:#\xc3\xa9";
  for (int i = 0; i < 100; ++i) {
    std::string s;
    const std::size_t n = rng.below(60);
    for (std::size_t k = 0; k < n; ++k) s.push_back(alphabet[rng.below(alphabet.size())]);
    const auto once = tokenize(s);
    EXPECT_EQ(tokenize(join(once)), once) << "input: " << s;
  }
}

// ---- vocabulary ------------------------------------------------------------------

TEST(Vocab, FrequencyRankedAfterSpecials) {
  const auto v = build_vocab(std::vector<Tokens>{{"a", "b", "b"}}, 100);
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(3), "<unk>");
  EXPECT_EQ(v.id("b"), 4u);
  EXPECT_EQ(v.id("a"), 5u);
}

TEST(Vocab, MinFreqExcludesRareTokens) {
  const auto v = build_vocab(std::vector<Tokens>{{"a", "b", "b"}}, 100, 2);
  EXPECT_FALSE(v.contains("a"));
  EXPECT_EQ(v.id("a"), Vocab::unk);
}

TEST(Vocab, TiesBrokenLexicographically) {
  const auto v = build_vocab(std::vector<Tokens>{{"zeta", "alpha", "mid"}}, 100);
  EXPECT_EQ(v.token(4), "alpha");
  EXPECT_EQ(v.token(5), "mid");
  EXPECT_EQ(v.token(6), "zeta");
}

TEST(Vocab, TruncatesToMaxSize) {
  const auto v = build_vocab(std::vector<Tokens>{{"a", "b", "b", "c", "c", "c"}}, 5);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.token(4), "c");
}

TEST(Vocab, MaxSizeBelowFiveRejected) {
  EXPECT_THROW(build_vocab(std::vector<Tokens>{{"a"}}, 4), std::invalid_argument);
}

TEST(Vocab, EmptyCorpusRejected) { EXPECT_THROW(build_vocab(std::vector<Tokens>{}, 10), std::invalid_argument); }

TEST(Vocab, RebuildIsIdenticalAndBijective) {
  SynthConfig c;
  c.episodes = 20;
  const auto eps = generate_synthetic(c);
  const auto a = build_vocab(eps, 10000);
  const auto b = build_vocab(eps, 10000);
  EXPECT_EQ(a.tokens(), b.tokens());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.id(a.token(i)), i);
}

TEST(Vocab, DuplicateTokensRejected) {
  EXPECT_THROW(Vocab::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "x", "x"}), std::invalid_argument);
  EXPECT_THROW(Vocab::from_tokens({"x", "<bos>", "<eos>", "<unk>"}), std::invalid_argument);
}

// ---- ingestion -------------------------------------------------------------------

TEST(Load, InsertsSentinelAndShiftsGold) {
  const auto eps = parse(R"({"topic":"Cats","split":"valid","turns":[{"x":"Hi","y":"Cats purr.","pool":["cats purr","dogs bark"],"gold":1,"refs":["cats purr ."]}]})");
  ASSERT_EQ(eps.size(), 1u);
  const auto& t = eps[0].turns[0];
  EXPECT_EQ(eps[0].split, Split::valid);
  EXPECT_EQ(t.pool.size(), 3u);
  EXPECT_EQ(t.pool.sentences[0], no_passages_used());
  EXPECT_EQ(t.pool.sentences[2], (Tokens{"dogs", "bark"}));
  EXPECT_EQ(t.gold, 2u);
  ASSERT_EQ(t.references.size(), 1u);
  EXPECT_EQ(t.references[0], t.wizard);
  EXPECT_NO_THROW(validate(eps[0]));
}

TEST(Load, NoPassagesUsedTagMapsToSentinel) {
  const auto eps = parse(R"({"topic":"t","turns":[{"x":"a","y":"b","pool":["c"],"gold":"no_passages_used"}]})");
  EXPECT_EQ(eps[0].turns[0].gold, 0u);
}

TEST(Load, MissingGoldGivesUnlabeledTurn) {
  const auto eps = parse(R"({"topic":"t","turns":[{"x":"a","y":"b","pool":["c"],"gold":null},{"x":"a","y":"b","pool":[]}]})");
  EXPECT_FALSE(eps[0].turns[0].gold.has_value());
  EXPECT_FALSE(eps[0].turns[1].gold.has_value());
  EXPECT_EQ(eps[0].turns[1].pool.size(), 1u);
}

TEST(Load, TruncatedLineReportsLineNumber) {
  const std::string good = R"({"topic":"t","turns":[{"x":"a","y":"b","pool":["c"],"gold":0}]})";
  try {
    parse(good + "\n\n" + good.substr(0, 20) + "\n");
    FAIL() << "expected a parse error";
  } catch (const CorpusError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("parse failure at line 3"), std::string::npos);
  }
}

TEST(Load, MissingFieldNamedInError) {
  try {
    parse(R"({"topic":"t","turns":[{"x":"a","pool":["c"]}]})");
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("turns[0].y"), std::string::npos) << e.what();
  }
}

TEST(Load, GoldOutOfRangeRejected) {
  EXPECT_THROW(parse(R"({"topic":"t","turns":[{"x":"a","y":"b","pool":["c"],"gold":1}]})"), CorpusError);
  EXPECT_THROW(parse(R"({"topic":"t","turns":[{"x":"a","y":"b","pool":["c"],"gold":-1}]})"), CorpusError);
}

TEST(Load, GoldListOnlyInHolleFormat) {
  const std::string rec = R"({"topic":"t","turns":[{"x":"a","y":"b","pool":["c","d","e"],"gold":[2,0,2]}]})";
  EXPECT_THROW(parse(rec, Format::wow_jsonl), CorpusError);
  const auto eps = parse(rec, Format::holle_jsonl);
  EXPECT_EQ(eps[0].turns[0].golds(), (std::vector<std::size_t>{3, 1}));
}

TEST(Load, UnknownSplitRejected) {
  EXPECT_THROW(parse(R"({"topic":"t","split":"dev","turns":[{"x":"a","y":"b","pool":[]}]})"), CorpusError);
}

TEST(Load, MissingFileRejected) {
  EXPECT_THROW(load_episodes("/nonexistent/skt/corpus.jsonl", Format::wow_jsonl), std::runtime_error);
}

TEST(Load, WowScaleTrainFileReportsEpisodeCount) {
  SynthConfig c;
  c.episodes = 18430;
  c.turns = 2;
  c.pool_size = 4;
  c.topics = 500;
  const auto path = temp_file("wow_train.jsonl");
  save_episodes(path.string(), generate_synthetic(c));
  EXPECT_EQ(load_episodes(path.string(), Format::wow_jsonl).size(), 18430u);
}

TEST(Load, WriteThenReadRoundTrips) {
  SynthConfig c;
  c.episodes = 15;
  c.split = Split::test_unseen;
  auto eps = generate_synthetic(c);
  eps[0].turns[0].gold.reset();
  eps[1].turns[0].gold = 0;
  eps[2].turns[0].alt_golds = {1};
  eps[2].turns[0].references.push_back({"other", "reference"});
  std::ostringstream out;
  write_episodes(out, eps);
  const auto back = parse(out.str(), Format::holle_jsonl);
  ASSERT_EQ(back.size(), eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    EXPECT_EQ(back[i].topic, eps[i].topic);
    EXPECT_EQ(back[i].split, Split::test_unseen);
    for (std::size_t t = 0; t < eps[i].turns.size(); ++t) {
      const auto& a = eps[i].turns[t];
      const auto& b = back[i].turns[t];
      EXPECT_EQ(a.apprentice, b.apprentice);
      EXPECT_EQ(a.wizard, b.wizard);
      EXPECT_EQ(a.pool.sentences, b.pool.sentences);
      EXPECT_EQ(a.golds(), b.golds());
      EXPECT_EQ(a.references, b.references);
    }
  }
}

TEST(Validate, RejectsBrokenInvariants) {
  Episode e;
  e.topic = "t";
  EXPECT_THROW(validate(e), std::invalid_argument);
  Turn t;
  t.wizard = {"x"};
  t.references = {{"x"}};
  t.pool = KnowledgePool::with_sentinel({{"a"}});
  t.gold = 2;
  e.turns.push_back(t);
  EXPECT_THROW(validate(e), std::invalid_argument);
  e.turns[0].gold = 1;
  EXPECT_NO_THROW(validate(e));
  e.turns[0].references = {{"y"}};
  EXPECT_THROW(validate(e), std::invalid_argument);
}

// ---- synthetic generator ---------------------------------------------------------

TEST(Synth, SameSeedByteIdentical) {
  SynthConfig c;
  c.seed = 7;
  std::ostringstream a, b, d;
  write_episodes(a, generate_synthetic(c));
  write_episodes(b, generate_synthetic(c));
  c.seed = 8;
  write_episodes(d, generate_synthetic(c));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), d.str());
}

TEST(Synth, InfeasibleConfigRejected) {
  SynthConfig c;
  c.multimodality = c.pool_size;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c.multimodality = 0;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c.multimodality = 1;
  c.copy_rate = 1.5;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
}

namespace {

// Content words of the response that occur in the gold sentence.
std::size_t copied_from_gold(const Turn& t) {
  const auto& g = t.pool.sentences[*t.gold];
  const std::set<std::string> gw(g.begin() + 2, g.end());
  std::size_t n = 0;
  for (const auto& w : t.wizard) n += gw.count(w);
  return n;
}

// Pool indices whose cue word appears in the apprentice utterance.
std::vector<std::size_t> lexical_matches(const Turn& t) {
  const std::set<std::string> words(t.apprentice.begin(), t.apprentice.end());
  std::vector<std::size_t> out;
  for (std::size_t l = 1; l < t.pool.size(); ++l) {
    if (words.count(t.pool.sentences[l][1])) out.push_back(l);
  }
  return out;
}

}  // namespace

TEST(Synth, ExactlyMPlausibleSentencesAndGoldAmongThem) {
  for (std::size_t m : {1, 3}) {
    SynthConfig c;
    c.multimodality = m;
    c.episodes = 50;
    for (const auto& e : generate_synthetic(c)) {
      validate(e);
      for (const auto& t : e.turns) {
        const auto hits = lexical_matches(t);
        EXPECT_EQ(hits.size(), m);
        EXPECT_NE(std::find(hits.begin(), hits.end(), *t.gold), hits.end());
      }
    }
  }
}

TEST(Synth, ContextOnlyOracleIsPerfectWhenUnimodal) {
  SynthConfig c;
  c.episodes = 100;
  std::size_t right = 0, total = 0;
  for (const auto& e : generate_synthetic(c)) {
    for (const auto& t : e.turns) {
      // nearest sentence by word overlap with the context
      const std::set<std::string> words(t.apprentice.begin(), t.apprentice.end());
      std::size_t best = 0, best_overlap = 0;
      for (std::size_t l = 0; l < t.pool.size(); ++l) {
        std::size_t ov = 0;
        for (const auto& w : t.pool.sentences[l]) ov += words.count(w);
        if (ov > best_overlap) best = l, best_overlap = ov;
      }
      right += best == *t.gold;
      ++total;
    }
  }
  EXPECT_EQ(right, total);
}

TEST(Synth, ResponsesCopyAtLeastRateOfContentWords) {
  for (double r : {0.0, 0.4, 0.8, 1.0}) {
    SynthConfig c;
    c.copy_rate = r;
    c.episodes = 30;
    for (const auto& e : generate_synthetic(c)) {
      for (const auto& t : e.turns) {
        EXPECT_GE(static_cast<double>(copied_from_gold(t)), r * static_cast<double>(c.fact_length) - 1e-9);
      }
    }
  }
}

TEST(Synth, FullCopyRateKeepsResponseContentInsideGold) {
  SynthConfig c;
  c.copy_rate = 1.0;
  for (const auto& e : generate_synthetic(c)) {
    for (const auto& t : e.turns) {
      const auto& g = t.pool.sentences[*t.gold];
      for (const auto& w : t.wizard) {
        if (is_synthetic_content_word(w)) EXPECT_NE(std::find(g.begin(), g.end(), w), g.end()) << w;
      }
    }
  }
}

TEST(Synth, HistoryDependentGoldNeverRepeatsWhileGroupOpen) {
  SynthConfig c;
  c.multimodality = 3;
  c.history_dependent = true;
  c.turns = 9;
  c.episodes = 40;
  for (const auto& e : generate_synthetic(c)) {
    std::set<std::size_t> used;
    for (const auto& t : e.turns) {
      EXPECT_FALSE(used.count(*t.gold));
      used.insert(*t.gold);
    }
  }
}

// ---- batching --------------------------------------------------------------------

namespace {

std::vector<EncodedEpisode> encoded_corpus(std::size_t n) {
  SynthConfig c;
  c.episodes = n;
  c.turns = 3;
  auto eps = generate_synthetic(c);
  // vary lengths so padding is exercised
  for (std::size_t i = 0; i < eps.size(); i += 3) eps[i].turns.pop_back();
  eps[1].turns[0].gold.reset();
  eps[1].turns[0].apprentice.clear();
  const auto v = build_vocab(eps, 10000);
  std::vector<EncodedEpisode> out;
  for (const auto& e : eps) out.push_back(encode(e, v));
  return out;
}

std::size_t token_count(const EncodedEpisode& e) {
  std::size_t n = 0;
  for (const auto& t : e.turns) {
    n += t.x.size() + t.y.size();
    for (const auto& s : t.pool) n += s.size();
  }
  return n;
}

bool same(const EncodedEpisode& a, const EncodedEpisode& b) {
  if (a.turns.size() != b.turns.size()) return false;
  for (std::size_t t = 0; t < a.turns.size(); ++t) {
    const auto &x = a.turns[t], &y = b.turns[t];
    if (x.x != y.x || x.y != y.y || x.pool != y.pool || x.gold != y.gold || x.golds != y.golds) return false;
  }
  return true;
}

}  // namespace

TEST(Batches, UnbatchingReproducesEpisodes) {
  const auto data = encoded_corpus(23);
  std::size_t seen = 0;
  for (const auto& b : make_batches(data, 4, 9)) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_TRUE(same(unbatch(b, i), data[b.episode_index[i]]));
      ++seen;
    }
  }
  EXPECT_EQ(seen, data.size());
}

TEST(Batches, TokenCountsPreserved) {
  const auto data = encoded_corpus(17);
  std::size_t before = 0, after = 0;
  for (const auto& e : data) before += token_count(e);
  for (const auto& b : make_batches(data, 5, 3)) {
    std::size_t nonpad = 0;
    for (auto id : b.x) nonpad += id != 0;
    for (auto id : b.y) nonpad += id != 0;
    for (auto id : b.pool) nonpad += id != 0;
    std::size_t lens = 0;
    for (auto n : b.x_len) lens += static_cast<std::size_t>(n);
    for (auto n : b.y_len) lens += static_cast<std::size_t>(n);
    for (auto n : b.sent_len) lens += static_cast<std::size_t>(n);
    EXPECT_EQ(nonpad, lens);
    after += lens;
  }
  EXPECT_EQ(before, after);
}

TEST(Batches, PaddedPositionsAreMasked) {
  const auto data = encoded_corpus(10);
  for (const auto& b : make_batches(data, 10, 0)) {
    const std::size_t T = b.max_turns;
    for (std::size_t bt = 0; bt < b.size() * T; ++bt) {
      for (std::size_t k = static_cast<std::size_t>(b.x_len[bt]); k < b.max_x; ++k) EXPECT_EQ(b.x[bt * b.max_x + k], 0);
      if (!b.turn_mask[bt]) {
        EXPECT_EQ(b.pool_size[bt], 0);
        EXPECT_EQ(b.labeled[bt], 0);
      }
      if (!b.labeled[bt]) EXPECT_EQ(b.gold[bt], -1);
    }
  }
}

TEST(Batches, SizeOneHasNoCrossEpisodePadding) {
  const auto data = encoded_corpus(6);
  const auto bs = make_batches(data, 1, 4);
  ASSERT_EQ(bs.size(), data.size());
  for (const auto& b : bs) {
    const auto& e = data[b.episode_index[0]];
    EXPECT_EQ(b.max_turns, e.turns.size());
    std::size_t mx = 0;
    for (const auto& t : e.turns) mx = std::max(mx, t.x.size());
    EXPECT_EQ(b.max_x, mx);
  }
}

TEST(Batches, ShuffleDeterministicPerSeed) {
  const auto data = encoded_corpus(20);
  auto order = [&](std::uint64_t s) {
    std::vector<std::size_t> o;
    for (const auto& b : make_batches(data, 3, s))
      for (auto i : b.episode_index) o.push_back(i);
    return o;
  };
  EXPECT_EQ(order(5), order(5));
  EXPECT_NE(order(5), order(6));
  std::vector<std::size_t> sorted = order(5);
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Batches, ZeroBatchSizeRejected) {
  EXPECT_THROW(make_batches(encoded_corpus(2), 0, 0), std::invalid_argument);
}
