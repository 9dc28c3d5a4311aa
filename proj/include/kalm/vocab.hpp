#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "kalm/kb.hpp"

namespace kalm {

// General vocabulary plus K entity-type vocabularies. Surface forms shared
// across vocabularies map to a single input-embedding row; general words
// occupy embedding rows 0..|general|-1 in order, so the tied decoder can
// address them as the leading block of the embedding matrix.
struct Vocabulary {
  static constexpr const char* kUnk = "<unk>";
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";

  std::vector<std::string> general;  // specials first, then by count desc
  std::vector<std::string> type_names;
  std::vector<std::vector<std::string>> type_vocabs;  // V_1..V_K

  std::unordered_map<std::string, size_t> row_of;       // surface -> embedding row
  std::unordered_map<std::string, size_t> general_index;
  std::vector<std::unordered_map<std::string, size_t>> type_index;
  std::vector<std::string> surface_of_row;

  size_t num_types() const { return type_names.size(); }
  size_t embedding_rows() const { return surface_of_row.size(); }
  size_t unk_row() const { return 0; }
  size_t unk_index() const { return 0; }
  size_t bos_row() const { return 1; }
  size_t eos_row() const { return 2; }

  std::string serialize() const;
  void save(const std::string& path) const;
  static Vocabulary parse(const std::string& text);
  static Vocabulary load(const std::string& path);
  uint64_t hash() const;  // FNV-1a over the serialized text

 private:
  friend Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>&,
                                     const KnowledgeBase&, size_t);
  void build_indexes();
};

struct EncodedSentence {
  std::vector<std::string> surfaces;     // with boundary symbols
  std::vector<size_t> rows;              // embedding row per position
  std::vector<size_t> general_idx;       // index in V_g (unk index if absent)
  std::vector<bool> in_general;          // surface literally in V_g
  std::vector<std::vector<int>> type_cand;  // per position, per type: V_j index or -1

  size_t size() const { return rows.size(); }
  // Positions with both left and right context (the n-2 interior).
  size_t interior() const { return size() < 2 ? 0 : size() - 2; }
};

// V_g = special symbols + corpus words meeting min_count (entity surfaces
// included when frequent enough; vocabularies may overlap). V_j = all KB
// surfaces of type j, observed in the corpus or not.
Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& corpus,
                            const KnowledgeBase& kb, size_t min_count);

EncodedSentence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab);

std::vector<std::string> tokenize(const std::string& line, bool lowercase);
std::vector<std::vector<std::string>> read_corpus(const std::string& path, bool lowercase);
std::unordered_map<std::string, long> count_surfaces(
    const std::vector<std::vector<std::string>>& corpus);

struct ConllSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;  // NE column, verbatim
};
// Four-column CoNLL 2003 format; also accepts two-column token/tag files.
std::vector<ConllSentence> load_conll(const std::string& path);

}  // namespace kalm
