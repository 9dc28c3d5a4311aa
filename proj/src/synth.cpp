#include "kalm/synth.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kalm/errors.hpp"
#include "kalm/rng.hpp"

namespace kalm {

namespace {

// Deterministic pronounceable surfaces; a per-type prefix keeps the typed
// lexicons disjoint from each other and from the template words.
std::string make_surface(const std::string& prefix, size_t i) {
  static const char* syl[] = {"ba", "de", "ki", "lo", "mu", "na", "re", "si",
                              "ta", "vo", "zu", "fe", "go", "hi", "ja", "pe"};
  std::string s = prefix;
  s += syl[i % 16];
  s += syl[(i / 16 + i % 7) % 16];
  if (i >= 16) s += static_cast<char>('a' + i % 5);
  return s;
}

struct Template {
  std::vector<std::string> tokens;  // "{P}", "{L}", "{O}" mark entity slots
};

const std::vector<Template>& templates() {
  static const std::vector<Template> t = [] {
    std::vector<std::string> lines = {
        "{P} visited {L} last week",
        "{P} met {P} in {L}",
        "{P} works for {O}",
        "{O} hired {P} yesterday",
        "the office of {O} is in {L}",
        "{P} traveled from {L} to {L}",
        "{O} opened a branch in {L}",
        "analysts said {O} will expand soon",
        "{P} returned home yesterday",
        "the weather in {L} was fine",
        "{P} spoke with reporters about {O}",
        "residents of {L} welcomed {P} warmly",
        "nothing unusual happened last night",
        "markets were quiet again today",
        "{O} reported strong results this quarter",
        "{P} moved to {L} to join {O}",
    };
    std::vector<Template> out;
    for (const auto& line : lines) {
      Template tpl;
      std::istringstream iss(line);
      std::string w;
      while (iss >> w) tpl.tokens.push_back(w);
      out.push_back(std::move(tpl));
    }
    return out;
  }();
  return t;
}

}  // namespace

SynthCorpus generate_planted(size_t sentences, uint64_t seed, size_t entities_per_type) {
  SynthCorpus out;
  const std::vector<std::pair<std::string, std::string>> types = {
      {"PER", "pa"}, {"LOC", "le"}, {"ORG", "ox"}};
  out.kb.types = {"PER", "LOC", "ORG"};
  out.kb.entities.resize(3);
  std::vector<std::vector<std::string>> lexicon(3);
  for (size_t j = 0; j < 3; ++j) {
    for (size_t i = 0; i < entities_per_type; ++i) {
      std::string s = make_surface(types[j].second, i);
      lexicon[j].push_back(s);
      out.kb.entities[j][s] = 200;
    }
  }

  Rng rng(seed, /*stream=*/0x5e9d);
  auto sample = [&](size_t j) { return lexicon[j][rng.below(lexicon[j].size())]; };

  for (size_t s = 0; s < sentences; ++s) {
    const Template& tpl = templates()[rng.below(templates().size())];
    std::vector<std::string> toks, tags;
    for (const std::string& w : tpl.tokens) {
      if (w == "{P}") {
        toks.push_back(sample(0));
        tags.push_back("PER");
      } else if (w == "{L}") {
        toks.push_back(sample(1));
        tags.push_back("LOC");
      } else if (w == "{O}") {
        toks.push_back(sample(2));
        tags.push_back("ORG");
      } else {
        toks.push_back(w);
        tags.push_back("O");
      }
    }
    // 80/10/10 split, round-robin for balance
    size_t bucket = s % 10;
    if (bucket < 8) {
      out.train.push_back(std::move(toks));
      out.train_tags.push_back(std::move(tags));
    } else if (bucket == 8) {
      out.valid.push_back(std::move(toks));
      out.valid_tags.push_back(std::move(tags));
    } else {
      out.test.push_back(std::move(toks));
      out.test_tags.push_back(std::move(tags));
    }
  }
  return out;
}

static void write_text(const std::string& path,
                       const std::vector<std::vector<std::string>>& sentences) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  for (const auto& s : sentences) {
    for (size_t i = 0; i < s.size(); ++i) f << (i ? " " : "") << s[i];
    f << '\n';
  }
}

static void write_gold(const std::string& path,
                       const std::vector<std::vector<std::string>>& sentences,
                       const std::vector<std::vector<std::string>>& tags) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  for (size_t s = 0; s < sentences.size(); ++s) {
    for (size_t i = 0; i < sentences[s].size(); ++i)
      f << sentences[s][i] << '\t' << tags[s][i] << '\n';
    f << '\n';
  }
}

void write_synth(const SynthCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir + "/train.txt", corpus.train);
  write_text(dir + "/valid.txt", corpus.valid);
  write_text(dir + "/test.txt", corpus.test);
  write_gold(dir + "/train.gold", corpus.train, corpus.train_tags);
  write_gold(dir + "/valid.gold", corpus.valid, corpus.valid_tags);
  write_gold(dir + "/test.gold", corpus.test, corpus.test_tags);
  corpus.kb.save(dir + "/kb.tsv");
}

}  // namespace kalm
