#include "kalm/kb.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "kalm/errors.hpp"
#include "kalm/rng.hpp"

namespace kalm {

size_t KnowledgeBase::total_entries() const {
  size_t n = 0;
  for (const auto& m : entities) n += m.size();
  return n;
}

bool KnowledgeBase::contains(size_t type_idx, const std::string& surface) const {
  return entities[type_idx].count(surface) > 0;
}

static std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

static std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string w;
  while (iss >> w) out.push_back(w);
  return out;
}

KnowledgeBase KnowledgeBase::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open KB file: " + path);
  KnowledgeBase kb;
  std::unordered_map<std::string, size_t> type_idx;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cols = split_tabs(line);
    if (cols.size() < 2 || cols[0].empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": expected type<TAB>surface[<TAB>count]");
    long count = 1;
    if (cols.size() >= 3 && !cols[2].empty()) {
      try {
        count = std::stol(cols[2]);
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) + ": bad count '" + cols[2] + "'");
      }
      if (count < 0)
        throw DataError(path + ":" + std::to_string(lineno) + ": negative count");
    }
    auto it = type_idx.find(cols[0]);
    size_t ti;
    if (it == type_idx.end()) {
      ti = kb.types.size();
      type_idx.emplace(cols[0], ti);
      kb.types.push_back(cols[0]);
      kb.entities.emplace_back();
    } else {
      ti = it->second;
    }
    for (const std::string& word : split_words(cols[1])) {
      if (word.empty()) continue;
      kb.entities[ti][word] += count;  // duplicate rows: counts summed
    }
  }
  return kb;
}

void KnowledgeBase::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write KB file: " + path);
  for (size_t j = 0; j < types.size(); ++j)
    for (const auto& [surface, count] : entities[j])
      out << types[j] << '\t' << surface << '\t' << count << '\n';
}

std::vector<double> TypePrior::lookup(const std::string& surface) const {
  auto it = table.find(surface);
  if (it != table.end()) return it->second;
  std::vector<double> p(num_types + 1, 0.0);
  p[0] = 1.0;
  return p;
}

void TypePrior::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write prior file: " + path);
  out.precision(17);
  out << "# K=" << num_types << '\n';
  std::vector<std::string> keys;
  keys.reserve(table.size());
  for (const auto& [k, v] : table) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (const auto& k : keys) {
    out << k;
    for (double p : table.at(k)) out << '\t' << p;
    out << '\n';
  }
}

TypePrior TypePrior::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prior file: " + path);
  TypePrior prior;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto pos = line.find("K=");
      if (pos != std::string::npos) prior.num_types = std::stoul(line.substr(pos + 2));
      continue;
    }
    auto cols = split_tabs(line);
    if (cols.size() < 2)
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed prior row");
    std::vector<double> p;
    for (size_t i = 1; i < cols.size(); ++i) p.push_back(std::stod(cols[i]));
    if (prior.num_types == 0) prior.num_types = p.size() - 1;
    if (p.size() != prior.num_types + 1)
      throw DataError(path + ":" + std::to_string(lineno) + ": wrong prior width");
    prior.table.emplace(cols[0], std::move(p));
  }
  return prior;
}

TypePrior compute_prior(const KnowledgeBase& kb,
                        const std::unordered_map<std::string, long>& corpus_counts,
                        double smoothing) {
  if (smoothing <= 0.0) throw ConfigError("prior smoothing must be positive");
  const size_t K = kb.num_types();
  TypePrior prior;
  prior.num_types = K;
  for (size_t j = 0; j < K; ++j) {
    for (const auto& [surface, pop] : kb.entities[j]) {
      if (prior.table.count(surface)) continue;
      std::vector<double> w(K + 1, 0.0);
      auto cit = corpus_counts.find(surface);
      w[0] = (cit == corpus_counts.end() ? 0.0 : static_cast<double>(cit->second)) + smoothing;
      for (size_t k = 0; k < K; ++k) {
        auto eit = kb.entities[k].find(surface);
        if (eit != kb.entities[k].end()) w[k + 1] = static_cast<double>(eit->second) + smoothing;
      }
      double z = std::accumulate(w.begin(), w.end(), 0.0);
      for (double& x : w) x /= z;
      prior.table.emplace(surface, std::move(w));
    }
  }
  return prior;
}

std::pair<KnowledgeBase, std::vector<std::string>> corrupt_kb(const KnowledgeBase& kb,
                                                              double fraction,
                                                              uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ConfigError("corruption fraction outside [0,1]");
  std::vector<std::pair<size_t, std::string>> entries;
  for (size_t j = 0; j < kb.num_types(); ++j)
    for (const auto& [surface, pop] : kb.entities[j]) entries.emplace_back(j, surface);
  size_t remove = static_cast<size_t>(fraction * static_cast<double>(entries.size()));
  Rng rng(seed, /*stream=*/0xc0de);
  // Partial Fisher-Yates: the first `remove` slots are the sample.
  for (size_t i = 0; i < remove; ++i) {
    size_t k = i + static_cast<size_t>(rng.below(entries.size() - i));
    std::swap(entries[i], entries[k]);
  }
  KnowledgeBase out = kb;
  std::vector<std::string> removed;
  removed.reserve(remove);
  for (size_t i = 0; i < remove; ++i) {
    out.entities[entries[i].first].erase(entries[i].second);
    removed.push_back(entries[i].second);
  }
  return {std::move(out), std::move(removed)};
}

}  // namespace kalm
