#include "kalm/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "kalm/errors.hpp"

namespace kalm {

std::vector<std::string> tokenize(const std::string& line, bool lowercase) {
  std::vector<std::string> out;
  std::istringstream iss(line);
  std::string w;
  while (iss >> w) {
    if (lowercase)
      for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(w);
  }
  return out;
}

std::vector<std::vector<std::string>> read_corpus(const std::string& path, bool lowercase) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto toks = tokenize(line, lowercase);
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  return out;
}

std::unordered_map<std::string, long> count_surfaces(
    const std::vector<std::vector<std::string>>& corpus) {
  std::unordered_map<std::string, long> counts;
  for (const auto& sent : corpus)
    for (const auto& w : sent) ++counts[w];
  return counts;
}

void Vocabulary::build_indexes() {
  row_of.clear();
  general_index.clear();
  type_index.assign(type_vocabs.size(), {});
  surface_of_row.clear();
  for (size_t i = 0; i < general.size(); ++i) {
    general_index.emplace(general[i], i);
    row_of.emplace(general[i], i);
    surface_of_row.push_back(general[i]);
  }
  for (size_t j = 0; j < type_vocabs.size(); ++j) {
    for (size_t i = 0; i < type_vocabs[j].size(); ++i) {
      const std::string& s = type_vocabs[j][i];
      type_index[j].emplace(s, i);
      if (!row_of.count(s)) {
        row_of.emplace(s, surface_of_row.size());
        surface_of_row.push_back(s);
      }
    }
  }
}

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& corpus,
                            const KnowledgeBase& kb, size_t min_count) {
  if (corpus.empty()) throw DataError("build_vocabulary: empty corpus");
  auto counts = count_surfaces(corpus);

  Vocabulary v;
  v.general = {Vocabulary::kUnk, Vocabulary::kBos, Vocabulary::kEos};
  std::vector<std::pair<long, std::string>> ranked;
  ranked.reserve(counts.size());
  for (const auto& [w, c] : counts) {
    if (w == Vocabulary::kUnk || w == Vocabulary::kBos || w == Vocabulary::kEos) continue;
    if (static_cast<size_t>(c) >= min_count) ranked.emplace_back(c, w);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (auto& [c, w] : ranked) v.general.push_back(std::move(w));

  v.type_names = kb.types;
  v.type_vocabs.resize(kb.num_types());
  for (size_t j = 0; j < kb.num_types(); ++j) {
    std::vector<std::pair<long, std::string>> tr;
    tr.reserve(kb.entities[j].size());
    for (const auto& [s, pop] : kb.entities[j]) tr.emplace_back(pop, s);
    std::sort(tr.begin(), tr.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (auto& [pop, s] : tr) v.type_vocabs[j].push_back(std::move(s));
  }

  v.build_indexes();
  return v;
}

EncodedSentence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  EncodedSentence e;
  const size_t K = vocab.num_types();
  e.surfaces.reserve(tokens.size() + 2);
  e.surfaces.push_back(Vocabulary::kBos);
  e.surfaces.insert(e.surfaces.end(), tokens.begin(), tokens.end());
  e.surfaces.push_back(Vocabulary::kEos);
  for (const std::string& s : e.surfaces) {
    auto rit = vocab.row_of.find(s);
    e.rows.push_back(rit == vocab.row_of.end() ? vocab.unk_row() : rit->second);
    auto git = vocab.general_index.find(s);
    e.in_general.push_back(git != vocab.general_index.end());
    e.general_idx.push_back(git == vocab.general_index.end() ? vocab.unk_index() : git->second);
    std::vector<int> cand(K, -1);
    for (size_t j = 0; j < K; ++j) {
      auto tit = vocab.type_index[j].find(s);
      if (tit != vocab.type_index[j].end()) cand[j] = static_cast<int>(tit->second);
    }
    e.type_cand.push_back(std::move(cand));
  }
  return e;
}

std::string Vocabulary::serialize() const {
  std::ostringstream out;
  out << "kalm-vocab v1\n";
  out << "types " << type_names.size() << '\n';
  for (const auto& t : type_names) out << t << '\n';
  out << "general " << general.size() << '\n';
  for (const auto& w : general) out << w << '\n';
  for (size_t j = 0; j < type_vocabs.size(); ++j) {
    out << "type " << type_names[j] << ' ' << type_vocabs[j].size() << '\n';
    for (const auto& w : type_vocabs[j]) out << w << '\n';
  }
  return out.str();
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary file: " + path);
  out << serialize();
}

Vocabulary Vocabulary::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw DataError(std::string("vocabulary truncated at ") + what);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  if (next("header") != "kalm-vocab v1") throw DataError("bad vocabulary header");
  Vocabulary v;
  {
    std::istringstream h(next("types"));
    std::string kw;
    size_t k;
    if (!(h >> kw >> k) || kw != "types") throw DataError("bad vocabulary types line");
    for (size_t i = 0; i < k; ++i) v.type_names.push_back(next("type name"));
  }
  {
    std::istringstream h(next("general"));
    std::string kw;
    size_t n;
    if (!(h >> kw >> n) || kw != "general") throw DataError("bad vocabulary general line");
    for (size_t i = 0; i < n; ++i) v.general.push_back(next("general word"));
  }
  v.type_vocabs.resize(v.type_names.size());
  for (size_t j = 0; j < v.type_names.size(); ++j) {
    std::istringstream h(next("type section"));
    std::string kw, name;
    size_t n;
    if (!(h >> kw >> name >> n) || kw != "type" || name != v.type_names[j])
      throw DataError("bad vocabulary type section for " + v.type_names[j]);
    for (size_t i = 0; i < n; ++i) v.type_vocabs[j].push_back(next("type word"));
  }
  v.build_indexes();
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

uint64_t Vocabulary::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<ConllSentence> load_conll(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CoNLL file: " + path);
  std::vector<ConllSentence> out;
  ConllSentence cur;
  std::string line;
  size_t lineno = 0;
  auto flush = [&] {
    if (!cur.tokens.empty()) {
      out.push_back(std::move(cur));
      cur = ConllSentence{};
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    std::istringstream iss(line);
    std::vector<std::string> cols;
    std::string c;
    while (iss >> c) cols.push_back(c);
    if (!cols.empty() && cols[0] == "-DOCSTART-") continue;
    if (cols.size() != 4 && cols.size() != 2)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected 4 (or 2) columns, got " + std::to_string(cols.size()));
    cur.tokens.push_back(cols[0]);
    cur.tags.push_back(cols.back());
  }
  flush();
  return out;
}

}  // namespace kalm
