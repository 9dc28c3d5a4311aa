#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kalm/kb.hpp"

namespace kalm {

// Template-generated corpus with known entity slots, used as ground truth
// for the unsupervised tagging experiments. Entity surfaces are disjoint
// from the general template words, every slot is typed, and the bundled KB
// carries popularity counts.
struct SynthCorpus {
  std::vector<std::vector<std::string>> train, valid, test;
  std::vector<std::vector<std::string>> train_tags, valid_tags, test_tags;
  KnowledgeBase kb;
};

SynthCorpus generate_planted(size_t sentences, uint64_t seed, size_t entities_per_type = 24);

// Writes {train,valid,test}.txt, {train,valid,test}.gold (token<TAB>tag)
// and kb.tsv under `dir`.
void write_synth(const SynthCorpus& corpus, const std::string& dir);

}  // namespace kalm
