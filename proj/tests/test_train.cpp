#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "skt/corpus/synth.hpp"
#include "skt/eval/evaluator.hpp"
#include "skt/train/checkpoint.hpp"
#include "skt/train/enumerate.hpp"
#include "skt/train/trainer.hpp"
#include "support.hpp"

using namespace skt;
using corpus::EncodedEpisode;
using corpus::Ids;
using nn::Tensor;
using skt::testing::gradcheck;
using skt::testing::random_episode;
using skt::testing::tiny_config;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "skt_test_train";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::vector<std::vector<double>> grads_of(model::SktModel<double>& m) {
  std::vector<std::vector<double>> out;
  for (auto& p : m.parameters()) out.emplace_back(p.grad().begin(), p.grad().end());
  return out;
}

}  // namespace

// ---- configuration ---------------------------------------------------------------

TEST(TrainConfig, DefaultsFollowPublishedSettings) {
  const train::TrainConfig c;
  EXPECT_EQ(c.lambda, 1.0);
  EXPECT_EQ(c.tau, 0.1);
  EXPECT_EQ(c.eps_knowledge, 0.1);
  EXPECT_EQ(c.eps_gen, 0.05);
  EXPECT_EQ(c.epochs, 5u);
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.clip_norm, 1.0);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  train::TrainConfig c;
  c.lambda = 0.5;
  c.seed = 42;
  c.model.d_model = 16;
  c.model.use_history = false;
  c.nll_reduction = train::NllReduction::sum;
  const auto back = train::train_config_from_json(train::to_json(c));
  EXPECT_EQ(train::to_json(back), train::to_json(c));
  EXPECT_THROW(train::train_config_from_json({{"learning_rate", 0.1}}), std::invalid_argument);
  EXPECT_THROW(train::train_config_from_json({{"tau", 0.0}}), std::invalid_argument);
  EXPECT_THROW(train::train_config_from_json({{"lambda", -1.0}}), std::invalid_argument);
  EXPECT_THROW(train::train_config_from_json({{"nll_reduction", "max"}}), std::invalid_argument);
  EXPECT_THROW(train::train_config_from_json({{"labeled_fraction", 1.5}}), std::invalid_argument);
  EXPECT_THROW(train::load_train_config("/nonexistent/skt/config.json"), std::runtime_error);
}

// ---- episode loss ----------------------------------------------------------------

TEST(EpisodeLoss, TotalsCombineTermsAndAverageOverTurns) {
  model::SktModel<double> m(tiny_config(), 1);
  nn::Rng data(2);
  auto ep = random_episode(data, 4, 3, 20);
  ep.turns[2].gold.reset();
  ep.turns[2].golds.clear();
  train::TrainConfig cfg;
  cfg.lambda = 0.7;
  nn::Rng rng(3);
  const auto b = train::episode_loss(m, ep, cfg, rng);
  ASSERT_EQ(b.turns.size(), 4u);
  double mean = 0;
  for (std::size_t t = 0; t < 4; ++t) {
    const auto& tl = b.turns[t];
    EXPECT_NEAR(tl.total, tl.nll + tl.kl + 0.7 * tl.knowledge, 1e-12);
    EXPECT_GE(tl.kl, -1e-9);
    if (t == 2) EXPECT_EQ(tl.knowledge, 0.0);
    if (t != 2) EXPECT_GT(tl.knowledge, 0.0);
    mean += tl.total / 4;
  }
  EXPECT_NEAR(b.total, mean, 1e-12);
  EXPECT_NEAR(b.loss.item(), mean, 1e-12);
}

TEST(EpisodeLoss, SingleCandidatePoolsHaveZeroKl) {
  model::SktModel<double> m(tiny_config(), 4);
  nn::Rng data(5);
  const auto ep = random_episode(data, 3, 1, 20);
  nn::Rng rng(6);
  const auto b = train::episode_loss(m, ep, train::TrainConfig{}, rng);
  for (const auto& tl : b.turns) EXPECT_EQ(tl.kl, 0.0);
}

TEST(EpisodeLoss, KlNonNegativeAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    model::SktModel<double> m(tiny_config(), seed);
    nn::Rng data(seed + 100);
    const auto ep = random_episode(data, 3, 5, 20);
    nn::Rng rng(seed);
    for (const auto& tl : train::episode_loss(m, ep, train::TrainConfig{}, rng).turns) EXPECT_GE(tl.kl, -1e-9);
  }
}

TEST(EpisodeLoss, GradientMatchesFiniteDifferencesWithFixedNoise) {
  model::SktModel<double> m(tiny_config(), 7);
  nn::Rng data(8);
  const auto ep = random_episode(data, 2, 3, 20);
  std::vector<std::vector<double>> noise;
  for (std::size_t t = 0; t < 2; ++t) {
    noise.emplace_back();
    for (std::size_t l = 0; l < 3; ++l) noise.back().push_back(data.gumbel());
  }
  train::TrainConfig cfg;
  cfg.tau = 0.5;
  train::LossOptions<double> opt{&noise, false};
  const auto rep = gradcheck(
      m.named_parameters(),
      [&] {
        nn::Rng unused(0);
        return train::episode_loss(m, ep, cfg, unused, opt).loss;
      },
      1e-3, 4, 9);
  EXPECT_LE(rep.max_rel, 1e-3) << rep.worst;
  EXPECT_GT(rep.checked, 100u);
}

TEST(EpisodeLoss, StraightThroughForwardUsesHardSample) {
  model::SktModel<double> m(tiny_config(), 7);
  nn::Rng data(8);
  const auto ep = random_episode(data, 2, 3, 20);
  std::vector<std::vector<double>> noise{{0.0, 3.0, 0.0}, {5.0, 0.0, 0.0}};
  nn::Rng unused(0);
  const auto b = train::episode_loss(m, ep, train::TrainConfig{}, unused, {&noise, true});
  EXPECT_EQ(b.turns[0].selected, 1u);
  EXPECT_EQ(b.turns[1].selected, 0u);
  // with hard selection, the reconstruction term equals the fixed-knowledge loss
  const auto te = model::encode_turn(m, ep.turns[0].x, &ep.turns[0].y, ep.turns[0].pool);
  const auto nll = nn::sum(model::sequence_nll(model::fixed_selection_memory(m, te, 1), model::with_eos(ep.turns[0].y),
                                               m.encoder.embedding, m.decoder, 0.05));
  EXPECT_EQ(b.turns[0].tokens, ep.turns[0].y.size() + 1);
  EXPECT_NEAR(b.turns[0].nll, nll.item() / static_cast<double>(b.turns[0].tokens), 1e-12);

  train::TrainConfig summed;
  summed.nll_reduction = train::NllReduction::sum;
  nn::Rng unused2(0);
  EXPECT_NEAR(train::episode_loss(m, ep, summed, unused2, {&noise, true}).turns[0].nll, nll.item(), 1e-12);
}

TEST(EpisodeLoss, GradientIgnoresGoldsOfUnlabeledTurns) {
  model::SktModel<double> m(tiny_config(), 10);
  nn::Rng data(11);
  auto a = random_episode(data, 3, 4, 20);
  for (auto& t : a.turns) {
    t.gold.reset();
    t.golds.clear();
  }
  auto b = a;
  for (auto& t : b.turns) t.golds = {3};  // stale metadata on unlabeled turns
  train::TrainConfig cfg;
  auto run = [&](const EncodedEpisode& ep, double lambda) {
    cfg.lambda = lambda;
    for (auto& p : m.parameters()) p.zero_grad();
    nn::Rng rng(12);
    nn::backward(train::episode_loss(m, ep, cfg, rng).loss);
    return grads_of(m);
  };
  const auto ga = run(a, 1.0);
  EXPECT_EQ(ga, run(b, 1.0));
  EXPECT_EQ(ga, run(a, 0.0));
  auto c = a;
  c.turns[1].gold = 2;
  c.turns[1].golds = {2};
  EXPECT_NE(ga, run(c, 1.0));
}

// ---- exact enumeration -----------------------------------------------------------

TEST(Enumerate, SingleCandidateEqualsTeacherForcedLikelihood) {
  model::SktModel<double> m(tiny_config(), 13);
  nn::Rng data(14);
  const auto ep = random_episode(data, 3, 1, 20);
  double direct = 0.0;
  for (const auto& turn : ep.turns) {
    const auto te = model::encode_turn(m, turn.x, &turn.y, turn.pool);
    const auto nll = model::sequence_nll(model::fixed_selection_memory(m, te, 0), model::with_eos(turn.y),
                                         m.encoder.embedding, m.decoder, 0.0);
    direct -= nn::sum(nll).item();
  }
  EXPECT_NEAR(train::enumerate_marginal(m, ep), direct, 1e-9);
}

TEST(Enumerate, SingleTurnEqualsDirectSum) {
  model::SktModel<double> m(tiny_config(), 15);
  nn::Rng data(16);
  const auto ep = random_episode(data, 1, 5, 20);
  const auto& turn = ep.turns[0];
  const auto te = model::encode_turn(m, turn.x, &turn.y, turn.pool);
  const auto d_k = model::history_step(model::HistoryState<double>::initial(8), Tensor<double>::zeros({8}), m.selector).d_k;
  const auto prior = model::prior_distribution(Tensor<double>::zeros({8}), te.h_x(), d_k, te.pool(), {}, m.selector);
  double sum = 0.0;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto nll = model::sequence_nll(model::fixed_selection_memory(m, te, k), model::with_eos(turn.y),
                                         m.encoder.embedding, m.decoder, 0.0);
    sum += prior.probs.at(k) * std::exp(-nn::sum(nll).item());
  }
  EXPECT_NEAR(train::enumerate_marginal(m, ep), std::log(sum), 1e-9);
}

TEST(Enumerate, InvariantToPoolOrder) {
  model::SktModel<double> m(tiny_config(), 17);
  nn::Rng data(18);
  const auto ep = random_episode(data, 3, 4, 20);
  auto permuted = ep;
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  for (auto& t : permuted.turns) {
    std::vector<Ids> pool(4);
    for (std::size_t l = 0; l < 4; ++l) pool[perm[l]] = t.pool[l];
    t.pool = pool;
    t.gold = perm[*t.gold];
    t.golds = {*t.gold};
  }
  EXPECT_NEAR(train::enumerate_marginal(m, ep), train::enumerate_marginal(m, permuted), 1e-6);
  EXPECT_NEAR(train::exact_elbo(m, ep), train::exact_elbo(m, permuted), 1e-6);
}

TEST(Enumerate, FeasibilityGuardRejectsLargeTrees) {
  model::SktModel<double> m(tiny_config(), 1);
  nn::Rng data(2);
  EXPECT_THROW(train::enumerate_marginal(m, random_episode(data, 4, 11, 20)), std::invalid_argument);
  EXPECT_THROW(train::exact_elbo(m, random_episode(data, 4, 11, 20)), std::invalid_argument);
  EXPECT_NO_THROW(train::enumerate_marginal(m, random_episode(data, 4, 10, 20)));
}

TEST(Enumerate, ElboNeverExceedsMarginal) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    model::SktModel<double> m(tiny_config(), 500 + seed);
    nn::Rng data(seed);
    const auto ep = random_episode(data, 3, 4, 20);
    const double marginal = train::enumerate_marginal(m, ep);
    const double elbo = train::exact_elbo(m, ep);
    EXPECT_GE(marginal - elbo, -1e-6) << "seed " << seed;
    EXPECT_TRUE(std::isfinite(elbo));
  }
}

// ---- semi-supervision ------------------------------------------------------------

namespace {

std::vector<corpus::Episode> labeled_corpus(std::size_t episodes, std::size_t turns) {
  corpus::SynthConfig c;
  c.episodes = episodes;
  c.turns = turns;
  return corpus::generate_synthetic(c);
}

std::size_t count_labeled(const std::vector<corpus::Episode>& eps) {
  std::size_t n = 0;
  for (const auto& e : eps)
    for (const auto& t : e.turns) n += t.gold.has_value();
  return n;
}

}  // namespace

TEST(MaskLabels, RetainsFloorOfFraction) {
  const auto eps = labeled_corpus(20, 5);
  ASSERT_EQ(count_labeled(eps), 100u);
  EXPECT_EQ(count_labeled(train::mask_labels(eps, 0.25, 1)), 25u);
  EXPECT_EQ(count_labeled(train::mask_labels(eps, 0.125, 1)), 12u);
  EXPECT_EQ(count_labeled(train::mask_labels(eps, 0.0, 1)), 0u);
}

TEST(MaskLabels, FullFractionLeavesCorpusUnchanged) {
  const auto eps = labeled_corpus(10, 3);
  const auto kept = train::mask_labels(eps, 1.0, 5);
  for (std::size_t e = 0; e < eps.size(); ++e)
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(kept[e].turns[t].gold, eps[e].turns[t].gold);
}

TEST(MaskLabels, SeededAndRangeChecked) {
  const auto eps = labeled_corpus(10, 5);
  auto pattern = [](const std::vector<corpus::Episode>& v) {
    std::vector<bool> p;
    for (const auto& e : v)
      for (const auto& t : e.turns) p.push_back(t.gold.has_value());
    return p;
  };
  EXPECT_EQ(pattern(train::mask_labels(eps, 0.5, 3)), pattern(train::mask_labels(eps, 0.5, 3)));
  EXPECT_NE(pattern(train::mask_labels(eps, 0.5, 3)), pattern(train::mask_labels(eps, 0.5, 4)));
  EXPECT_THROW(train::mask_labels(eps, -0.1, 0), std::invalid_argument);
  EXPECT_THROW(train::mask_labels(eps, 1.1, 0), std::invalid_argument);
}

// ---- optimization ----------------------------------------------------------------

namespace {

struct SmallTask {
  std::vector<corpus::Episode> episodes;
  corpus::Vocab vocab;
  std::vector<EncodedEpisode> encoded;
  train::TrainConfig cfg;

  explicit SmallTask(std::size_t n, std::uint64_t seed = 0) {
    corpus::SynthConfig sc;
    sc.episodes = n;
    sc.turns = 3;
    sc.pool_size = 5;
    sc.topics = 3;
    sc.vocab_size = 30;
    sc.seed = seed;
    episodes = corpus::generate_synthetic(sc);
    vocab = corpus::build_vocab(episodes, 10000);
    for (const auto& e : episodes) encoded.push_back(corpus::encode(e, vocab));
    cfg.model = tiny_config(vocab.size(), 16);
    cfg.batch_size = 4;
    cfg.seed = seed;
  }
};

}  // namespace

TEST(Trainer, OverfitsFourEpisodes) {
  SmallTask task(4);
  model::SktModel<float> m(task.cfg.model, 0);
  train::Trainer<float> trainer(m, task.cfg);
  nn::Rng rng(1);
  const double first = trainer.step(task.encoded, rng).loss;
  double last = first;
  for (int s = 1; s < 200; ++s) last = trainer.step(task.encoded, rng).loss;
  EXPECT_LE(last, 0.5 * first) << "first " << first << " last " << last;
  EXPECT_EQ(trainer.adam.step, 200u);
}

TEST(Trainer, SameSeedBitIdenticalParameters) {
  SmallTask task(6);
  task.cfg.epochs = 2;
  auto run = [&] {
    model::SktModel<float> m(task.cfg.model, task.cfg.seed);
    train::Trainer<float> trainer(m, task.cfg);
    const auto metrics = trainer.train(task.encoded);
    EXPECT_EQ(metrics.size(), 2u);
    std::vector<std::vector<float>> out;
    for (auto& p : m.parameters()) out.push_back(p.to_vector());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Trainer, NonFiniteLossAborts) {
  SmallTask task(2);
  model::SktModel<float> m(task.cfg.model, 0);
  m.decoder.out.bias.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  train::Trainer<float> trainer(m, task.cfg);
  try {
    trainer.train_epoch(task.encoded);
    FAIL() << "expected a training error";
  } catch (const train::TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1 step 1"), std::string::npos) << e.what();
  }
}

TEST(Trainer, LatentOnlyRegimeTrains) {
  SmallTask task(4);
  auto eps = train::mask_labels(task.episodes, 0.0, 0);
  std::vector<EncodedEpisode> enc;
  for (const auto& e : eps) enc.push_back(corpus::encode(e, task.vocab));
  model::SktModel<float> m(task.cfg.model, 0);
  task.cfg.epochs = 1;
  train::Trainer<float> trainer(m, task.cfg);
  const auto metrics = trainer.train(enc);
  EXPECT_EQ(metrics[0].knowledge, 0.0);
  EXPECT_TRUE(std::isfinite(metrics[0].loss));
}

// ---- checkpoints -----------------------------------------------------------------

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  SmallTask task(3);
  model::SktModel<float> m(task.cfg.model, 3);
  const auto path = temp_path("a.ckpt");
  train::save_checkpoint(m, task.cfg, task.vocab, path);
  auto ck = train::load_checkpoint(path);
  EXPECT_EQ(train::serialize_checkpoint(ck.model, ck.config, ck.vocab), train::serialize_checkpoint(m, task.cfg, task.vocab));
  const auto a = m.named_parameters();
  const auto b = ck.model.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(0, std::memcmp(a[i].second.data().data(), b[i].second.data().data(), a[i].second.numel() * 4));
  }
  EXPECT_EQ(ck.vocab.tokens(), task.vocab.tokens());
}

TEST(Checkpoint, EvaluationUnchangedAfterReload) {
  SmallTask task(4);
  model::SktModel<float> m(task.cfg.model, 5);
  task.cfg.epochs = 1;
  train::Trainer<float>(m, task.cfg).train(task.encoded);
  const auto bytes = train::serialize_checkpoint(m, task.cfg, task.vocab);
  const auto ck = train::deserialize_checkpoint(bytes);
  const auto before = eval::evaluate_split(m, task.episodes, task.vocab);
  const auto after = eval::evaluate_split(ck.model, task.episodes, ck.vocab);
  EXPECT_EQ(before.to_json(), after.to_json());
}

TEST(Checkpoint, TruncationNamesSection) {
  SmallTask task(2);
  model::SktModel<float> m(task.cfg.model, 3);
  const auto bytes = train::serialize_checkpoint(m, task.cfg, task.vocab);
  for (std::size_t cut : {std::size_t{4}, std::size_t{30}, bytes.size() / 2, bytes.size() - 2}) {
    try {
      train::deserialize_checkpoint(bytes.substr(0, cut));
      FAIL() << "cut " << cut;
    } catch (const train::CheckpointError& e) {
      EXPECT_FALSE(e.section.empty());
      EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos);
    }
  }
  try {
    train::deserialize_checkpoint(bytes.substr(0, bytes.size() / 2));
  } catch (const train::CheckpointError& e) {
    EXPECT_EQ(e.section.rfind("parameters", 0), 0u) << e.section;
  }
}

TEST(Checkpoint, VersionMagicAndDigestChecked) {
  SmallTask task(2);
  model::SktModel<float> m(task.cfg.model, 3);
  const auto bytes = train::serialize_checkpoint(m, task.cfg, task.vocab);
  auto bad_version = bytes;
  bad_version[8] = 2;
  try {
    train::deserialize_checkpoint(bad_version);
    FAIL();
  } catch (const train::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(train::deserialize_checkpoint(bad_magic), train::CheckpointError);
  auto bad_config = bytes;
  bad_config[30] ^= 0x20;
  EXPECT_THROW(train::deserialize_checkpoint(bad_config), train::CheckpointError);
  EXPECT_THROW(train::deserialize_checkpoint(bytes + "x"), train::CheckpointError);
}

TEST(Checkpoint, MissingFileRejected) {
  EXPECT_THROW(train::load_checkpoint("/nonexistent/skt/model.ckpt"), std::runtime_error);
}
