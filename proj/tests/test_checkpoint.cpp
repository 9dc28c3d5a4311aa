#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kalm/checkpoint.hpp"
#include "kalm/errors.hpp"
#include "kalm/inference.hpp"

using namespace kalm;

namespace {

std::string temp_path(const std::string& tag) {
  return (std::filesystem::temp_directory_path() / ("kalm_ckpt_test_" + tag + ".bin")).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct Fixture {
  Vocabulary vocab;
  ModelParams params;
  std::vector<EncodedSentence> corpus;

  explicit Fixture(bool bidirectional = false) {
    KnowledgeBase kb;
    kb.types = {"PER", "LOC"};
    kb.entities = {{{"alice", 5}}, {{"paris", 9}, {"rome", 2}}};
    std::vector<std::vector<std::string>> text = {{"alice", "visited", "paris"},
                                                  {"the", "cat", "sat", "in", "rome"}};
    vocab = build_vocabulary(text, kb, 1);
    ModelConfig cfg;
    cfg.embed_dim = 4;
    cfg.hidden_dim = 5;
    cfg.layers = 2;
    cfg.type_dim = 3;
    cfg.feedback = !bidirectional;
    cfg.bidirectional = bidirectional;
    Rng rng(77);
    params = ModelParams::create(cfg, vocab, rng);
    for (const auto& s : text) corpus.push_back(encode(s, vocab));
  }
};

}  // namespace

TEST_CASE("checkpoint round trip restores every tensor exactly") {
  Fixture fx;
  Checkpoint ck{fx.params, fx.vocab.hash(), 123, 7};
  std::string path = temp_path("roundtrip");
  ck.save(path);
  Checkpoint back = Checkpoint::load(path);
  std::remove(path.c_str());

  CHECK(back.vocab_hash == fx.vocab.hash());
  CHECK(back.seed == 123);
  CHECK(back.epoch == 7);
  CHECK(back.params.K == fx.params.K);
  CHECK(back.params.cfg.feedback == fx.params.cfg.feedback);
  CHECK(back.params.general_size == fx.params.general_size);
  bool identical = true;
  std::map<std::string, const Tensor*> orig;
  fx.params.for_each([&](const std::string& n, const Tensor& t) { orig.emplace(n, &t); });
  back.params.for_each([&](const std::string& n, const Tensor& t) {
    const Tensor& o = *orig.at(n);
    REQUIRE(t.shape() == o.shape());
    for (size_t i = 0; i < t.size(); ++i)
      if (t[i] != o[i]) identical = false;
  });
  CHECK(identical);
}

TEST_CASE("save is deterministic: same state, same bytes") {
  Fixture fx(true);
  Checkpoint ck{fx.params, fx.vocab.hash(), 9, 2};
  std::string p1 = temp_path("bytes1"), p2 = temp_path("bytes2");
  ck.save(p1);
  ck.save(p2);
  CHECK(slurp(p1) == slurp(p2));
  // Save -> load -> save also reproduces the file byte for byte.
  Checkpoint back = Checkpoint::load(p1);
  std::string p3 = temp_path("bytes3");
  back.save(p3);
  CHECK(slurp(p1) == slurp(p3));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
  std::remove(p3.c_str());
}

TEST_CASE("vocabulary hash mismatch is refused") {
  Fixture fx;
  Checkpoint ck{fx.params, fx.vocab.hash(), 1, 1};
  std::string path = temp_path("hash");
  ck.save(path);
  CHECK_NOTHROW(Checkpoint::load(path, fx.vocab.hash()));
  CHECK_THROWS_AS(Checkpoint::load(path, fx.vocab.hash() + 1), DataError);
  std::remove(path.c_str());
}

TEST_CASE("a reloaded model reproduces evaluation exactly") {
  Fixture fx;
  double before = perplexity(fx.params, fx.corpus);
  Checkpoint ck{fx.params, fx.vocab.hash(), 5, 3};
  std::string path = temp_path("eval");
  ck.save(path);
  Checkpoint back = Checkpoint::load(path);
  std::remove(path.c_str());
  double after = perplexity(back.params, fx.corpus);
  CHECK(before == after);  // bitwise, not approximate
}

TEST_CASE("bidirectional checkpoints carry both directions") {
  Fixture fx(true);
  Checkpoint ck{fx.params, fx.vocab.hash(), 4, 1};
  std::string path = temp_path("bi");
  ck.save(path);
  Checkpoint back = Checkpoint::load(path);
  std::remove(path.c_str());
  CHECK(back.params.cfg.bidirectional);
  double a = perplexity(fx.params, fx.corpus);
  double b = perplexity(back.params, fx.corpus);
  CHECK(a == b);
}

TEST_CASE("loading garbage raises DataError") {
  std::string path = temp_path("garbage");
  {
    std::ofstream out(path, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  CHECK_THROWS_AS(Checkpoint::load(path), DataError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(Checkpoint::load("/nonexistent/ckpt.bin"), DataError);
}
