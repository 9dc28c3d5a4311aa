#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kalm/errors.hpp"
#include "kalm/inference.hpp"
#include "kalm/training.hpp"

using namespace kalm;

namespace {

KnowledgeBase toy_kb() {
  KnowledgeBase kb;
  kb.types = {"PER", "LOC"};
  kb.entities = {{{"alice", 5}, {"bob", 3}}, {{"paris", 9}, {"rome", 2}}};
  return kb;
}

std::vector<std::vector<std::string>> toy_corpus() {
  return {{"the", "cat", "sat", "on", "the", "mat"},
          {"alice", "visited", "paris"},
          {"bob", "likes", "rome", "and", "the", "cat"},
          {"alice", "likes", "bob"}};
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.embed_dim = 4;
  cfg.hidden_dim = 5;
  cfg.layers = 1;
  cfg.type_dim = 3;
  return cfg;
}

void zero_params(ModelParams& p) {
  p.for_each([](const std::string&, Tensor& t) {
    for (size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
  });
}

TrainConfig fd_config() {
  TrainConfig cfg;
  cfg.ar = 0.0;
  cfg.tar = 0.0;
  cfg.kl_lambda = 0.0;
  cfg.dropout = DropoutConfig{0, 0, 0, 0, 0};
  return cfg;
}

}  // namespace

TEST_CASE("zeroed K = 0 model has loss ln |V_g|") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), KnowledgeBase{}, 1);
  Rng rng(1);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  zero_params(p);
  EncodedSentence sent = encode({"the", "cat", "sat"}, vocab);
  Tape tape;
  auto pv = register_params(tape, p, nullptr, nullptr);
  auto fr = forward_uni(tape, p, pv, sent, nullptr);
  double loss = tape.value(sequence_loss(tape, p, fr, sent, nullptr, 0.0))[0];
  CHECK(loss == doctest::Approx(std::log(double(vocab.general.size()))).epsilon(1e-12));
}

TEST_CASE("KL penalty hand example: (0.5, 0.5) against (0.9, 0.1)") {
  KnowledgeBase kb;
  kb.types = {"PER"};
  kb.entities = {{{"alice", 1}}};
  Vocabulary vocab = build_vocabulary(toy_corpus(), kb, 1);
  Rng rng(2);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  Tape tape;
  VarId lp = tape.input(Tensor({2}, {std::log(0.5), std::log(0.5)}));
  double got = tape.value(kl_squared_penalty(tape, p, lp, {0.9, 0.1}))[0];
  double kl = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(got == doctest::Approx(kl * kl).epsilon(1e-12));
}

TEST_CASE("KL penalty vanishes when posterior equals prior") {
  KnowledgeBase kb;
  kb.types = {"PER"};
  kb.entities = {{{"alice", 1}}};
  Vocabulary vocab = build_vocabulary(toy_corpus(), kb, 1);
  Rng rng(3);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  Tape tape;
  VarId lp = tape.input(Tensor({2}, {std::log(0.3), std::log(0.7)}));
  double got = tape.value(kl_squared_penalty(tape, p, lp, {0.3, 0.7}))[0];
  CHECK(got == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("lambda = 0 sequence loss ignores the prior") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  Rng rng(4);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  TypePrior prior = compute_prior(toy_kb(), count_surfaces(toy_corpus()), 1.0);
  EncodedSentence sent = encode({"alice", "visited", "paris"}, vocab);
  Tape t1, t2;
  auto pv1 = register_params(t1, p, nullptr, nullptr);
  auto pv2 = register_params(t2, p, nullptr, nullptr);
  auto f1 = forward_uni(t1, p, pv1, sent, nullptr);
  auto f2 = forward_uni(t2, p, pv2, sent, nullptr);
  double with = t1.value(sequence_loss(t1, p, f1, sent, &prior, 0.0))[0];
  double without = t2.value(sequence_loss(t2, p, f2, sent, nullptr, 0.0))[0];
  CHECK(with == without);
}

TEST_CASE("positive lambda adds a nonnegative penalty") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  Rng rng(5);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  TypePrior prior = compute_prior(toy_kb(), count_surfaces(toy_corpus()), 1.0);
  EncodedSentence sent = encode({"alice", "visited", "paris"}, vocab);
  Tape t1, t2;
  auto pv1 = register_params(t1, p, nullptr, nullptr);
  auto pv2 = register_params(t2, p, nullptr, nullptr);
  auto f1 = forward_uni(t1, p, pv1, sent, nullptr);
  auto f2 = forward_uni(t2, p, pv2, sent, nullptr);
  double base = t1.value(sequence_loss(t1, p, f1, sent, nullptr, 0.0))[0];
  double reg = t2.value(sequence_loss(t2, p, f2, sent, &prior, 0.5))[0];
  CHECK(reg >= base);
}

TEST_CASE("AR/TAR penalty on hand-built activations") {
  Tape tape;
  ForwardResult fr;
  fr.raw_out_fwd = {tape.input(Tensor({1}, {1.0})), tape.input(Tensor({1}, {3.0}))};
  fr.drop_out_fwd = fr.raw_out_fwd;
  VarId loss = tape.input_scalar(0.0);
  // ar: mean of (1^2, 3^2) = 5; tar: (1 - 3)^2 = 4, coefficient 2 -> 8.
  double got = tape.value(apply_regularization(tape, loss, fr, 1.0, 2.0))[0];
  CHECK(got == doctest::Approx(13.0).epsilon(1e-12));
  double ar_only = tape.value(apply_regularization(tape, loss, fr, 1.0, 0.0))[0];
  CHECK(ar_only == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(apply_regularization(tape, loss, fr, 0.0, 0.0) == loss);
}

TEST_CASE("TAR is zero for constant activations") {
  Tape tape;
  ForwardResult fr;
  fr.raw_out_fwd = {tape.input(Tensor({2}, {0.7, -0.2})), tape.input(Tensor({2}, {0.7, -0.2}))};
  fr.drop_out_fwd = fr.raw_out_fwd;
  VarId loss = tape.input_scalar(0.0);
  double got = tape.value(apply_regularization(tape, loss, fr, 0.0, 2.0))[0];
  CHECK(got == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("gradient clipping caps the global norm") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  Rng rng(6);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  Gradients g = Gradients::like(p);
  for (auto& [name, t] : g.by_name)
    for (size_t i = 0; i < t.size(); ++i) t[i] = 10.0;
  double pre = clip_gradients(g, 0.25);
  CHECK(pre > 0.25);
  CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(0.25).epsilon(1e-12));
  // Below the threshold nothing changes.
  Gradients h = Gradients::like(p);
  h.by_name.begin()->second[0] = 0.01;
  double pre2 = clip_gradients(h, 0.25);
  CHECK(pre2 == doctest::Approx(0.01));
  CHECK(h.by_name.begin()->second[0] == 0.01);
}

static std::vector<EncodedSentence> fd_batch(const Vocabulary& vocab) {
  return {encode({"alice", "visited", "paris"}, vocab),
          encode({"bob", "likes", "rome", "and", "alice"}, vocab)};
}

TEST_CASE("analytic gradients match finite differences (uni)") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  Rng rng(7);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  auto report = check_gradients(p, fd_batch(vocab), nullptr, fd_config(), 1e-4);
  for (const auto& [name, err] : report.max_rel_error) {
    INFO(name << " rel err " << err);
    CHECK(err <= 1e-4);
  }
  CHECK(report.passed());
}

TEST_CASE("analytic gradients match finite differences (feedback + AR/TAR)") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  ModelConfig cfg = tiny_config();
  cfg.feedback = true;
  Rng rng(8);
  ModelParams p = ModelParams::create(cfg, vocab, rng);
  TrainConfig tc = fd_config();
  tc.ar = 0.3;
  tc.tar = 0.4;
  auto report = check_gradients(p, fd_batch(vocab), nullptr, tc, 1e-4);
  for (const auto& [name, err] : report.max_rel_error) {
    INFO(name << " rel err " << err);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("analytic gradients match finite differences (bi)") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  ModelConfig cfg = tiny_config();
  cfg.bidirectional = true;
  Rng rng(9);
  ModelParams p = ModelParams::create(cfg, vocab, rng);
  auto report = check_gradients(p, fd_batch(vocab), nullptr, fd_config(), 1e-4);
  for (const auto& [name, err] : report.max_rel_error) {
    INFO(name << " rel err " << err);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("analytic gradients match finite differences (KL penalty)") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  Rng rng(10);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  TypePrior prior = compute_prior(toy_kb(), count_surfaces(toy_corpus()), 1.0);
  TrainConfig tc = fd_config();
  tc.kl_lambda = 0.7;
  auto report = check_gradients(p, fd_batch(vocab), &prior, tc, 1e-4);
  for (const auto& [name, err] : report.max_rel_error) {
    INFO(name << " rel err " << err);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("a corrupted gradient entry is detected") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  Rng rng(11);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  auto batch = fd_batch(vocab);
  Gradients analytic = compute_gradients(p, batch, nullptr, fd_config());
  analytic.by_name.at("fwd.l0.Wx")[3] += 0.05;
  auto report = compare_with_fd(p, batch, nullptr, fd_config(), analytic, 1e-4);
  CHECK_FALSE(report.passed());
  CHECK(report.max_rel_error.at("fwd.l0.Wx") > 1e-4);
}

TEST_CASE("a small step along the gradient decreases the loss") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  auto batch = fd_batch(vocab);
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
    double before = 0.0;
    Gradients g = compute_gradients(p, batch, nullptr, fd_config(), &before);
    p.for_each([&](const std::string& name, Tensor& t) {
      const Tensor& gt = g.by_name.at(name);
      for (size_t i = 0; i < t.size(); ++i) t[i] -= 0.05 * gt[i];
    });
    double after = 0.0;
    compute_gradients(p, batch, nullptr, fd_config(), &after);
    CHECK(after < before);
  }
}

TEST_CASE("train runs, reports epochs and is bit-reproducible") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  std::vector<EncodedSentence> train_set, valid_set;
  for (const auto& s : toy_corpus()) train_set.push_back(encode(s, vocab));
  valid_set = {train_set[0], train_set[1]};

  TrainConfig tc = fd_config();
  tc.lr = 0.5;
  tc.epochs = 3;
  tc.batch_size = 2;
  tc.seed = 33;
  tc.dropout = DropoutConfig{0.0, 0.1, 0.1, 0.1, 0.1};

  Rng rng(12);
  ModelParams p1 = ModelParams::create(tiny_config(), vocab, rng);
  ModelParams p2 = p1;
  TrainReport r1 = train(p1, train_set, valid_set, nullptr, tc);
  TrainReport r2 = train(p2, train_set, valid_set, nullptr, tc);
  REQUIRE(r1.epochs.size() == 3);
  REQUIRE(r2.epochs.size() == 3);
  for (size_t e = 0; e < 3; ++e) {
    CHECK(r1.epochs[e].epoch == e + 1);
    CHECK(std::isfinite(r1.epochs[e].val_ppl));
    CHECK(r1.epochs[e].train_loss == r2.epochs[e].train_loss);
    CHECK(r1.epochs[e].val_ppl == r2.epochs[e].val_ppl);
  }
  bool identical = true;
  p1.for_each([&](const std::string& name, const Tensor& t) {
    const Tensor* other = nullptr;
    p2.for_each([&](const std::string& n2, const Tensor& t2) {
      if (n2 == name) other = &t2;
    });
    for (size_t i = 0; i < t.size(); ++i)
      if (t[i] != (*other)[i]) identical = false;
  });
  CHECK(identical);
}

TEST_CASE("training improves over the initial model") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  std::vector<EncodedSentence> train_set;
  for (const auto& s : toy_corpus()) train_set.push_back(encode(s, vocab));

  TrainConfig tc = fd_config();
  tc.lr = 1.0;
  tc.epochs = 10;
  tc.batch_size = 2;
  tc.seed = 5;
  tc.dropout = DropoutConfig{0, 0, 0, 0, 0};

  Rng rng(13);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  double before = perplexity(p, train_set);
  train(p, train_set, train_set, nullptr, tc);
  double after = perplexity(p, train_set);
  CHECK(after < before);
}

TEST_CASE("non-finite parameters raise NumericalError") {
  Vocabulary vocab = build_vocabulary(toy_corpus(), toy_kb(), 1);
  std::vector<EncodedSentence> train_set;
  for (const auto& s : toy_corpus()) train_set.push_back(encode(s, vocab));
  Rng rng(14);
  ModelParams p = ModelParams::create(tiny_config(), vocab, rng);
  p.embeddings[0] = std::nan("");
  TrainConfig tc = fd_config();
  tc.epochs = 1;
  CHECK_THROWS_AS(train(p, train_set, train_set, nullptr, tc), NumericalError);
}

TEST_CASE("TrainConfig::validate flags bad fields") {
  TrainConfig tc;
  tc.lr = -1.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.dropout.dropouth = 1.5;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  CHECK_NOTHROW(TrainConfig{}.validate());
}
