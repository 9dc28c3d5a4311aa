#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kalm {

// Typed entity lists loaded from a TSV gazetteer. Multi-word entity names
// are split into words; each word enters its type's vocabulary.
struct KnowledgeBase {
  std::vector<std::string> types;  // first-appearance order
  // Per type: surface form -> popularity. Bare lists get popularity 1.
  std::vector<std::map<std::string, long>> entities;

  size_t num_types() const { return types.size(); }
  size_t total_entries() const;
  bool contains(size_t type_idx, const std::string& surface) const;

  // File format: `type<TAB>surface[<TAB>count]`, '#' comments, UTF-8.
  static KnowledgeBase load(const std::string& path);
  void save(const std::string& path) const;
};

// Word-conditioned type prior P(type | surface) over K+1 types, index 0 =
// general. Surfaces absent from every entity list implicitly get (1,0,...).
struct TypePrior {
  size_t num_types = 0;  // K
  std::unordered_map<std::string, std::vector<double>> table;

  std::vector<double> lookup(const std::string& surface) const;

  void save(const std::string& path) const;
  static TypePrior load(const std::string& path);
};

// P(type=j | y) proportional to popularity(y, j) + smoothing for entity
// types containing y, and to corpus_count(y) + smoothing for the general
// type. Surfaces in no entity list are omitted from the table (their prior
// is the implicit point mass on general).
TypePrior compute_prior(const KnowledgeBase& kb,
                        const std::unordered_map<std::string, long>& corpus_counts,
                        double smoothing);

// Removes floor(fraction * total_entries) uniformly sampled (type, surface)
// entries; deterministic given seed. Returns the corrupted KB and the
// removed surfaces.
std::pair<KnowledgeBase, std::vector<std::string>> corrupt_kb(const KnowledgeBase& kb,
                                                              double fraction,
                                                              uint64_t seed);

}  // namespace kalm
