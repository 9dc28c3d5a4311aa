#pragma once

#include <map>
#include <string>
#include <vector>

#include "kalm/kb.hpp"
#include "kalm/model.hpp"

namespace kalm {

struct DecodeConfig {
  double alpha = 0.4;
  double beta = 0.6;
  bool use_prior = true;

  void validate() const;  // alpha, beta >= 0 and alpha + beta > 0
};

struct TaggedSentence {
  std::vector<std::string> tokens;  // real tokens, boundaries stripped
  std::vector<std::string> tags;    // type name or "O"
  std::vector<std::vector<double>> posteriors;  // mixed K+1 vector per token
};

// Mean negative log mixture probability per scored token over the corpus
// (unidirectional: all next-word targets; bidirectional: interior tokens).
double mean_nll(const ModelParams& params, const std::vector<EncodedSentence>& corpus);
double perplexity(const ModelParams& params, const std::vector<EncodedSentence>& corpus);

// alpha * posterior + beta * prior, renormalized. With use_prior off the
// posterior is returned unchanged.
std::vector<double> decode_types(const std::vector<double>& posterior,
                                 const std::vector<double>& prior, const DecodeConfig& cfg);

// Argmax of the mixed distribution per token, ties broken toward the
// general type. `type_names` maps type index 1..K to an output tag.
TaggedSentence tag_sentence(const ModelParams& params, const EncodedSentence& sent,
                            const TypePrior& prior, const DecodeConfig& cfg,
                            const std::vector<std::string>& type_names);

struct NerScore {
  struct PerType {
    size_t gold = 0, predicted = 0, matched = 0;
    double precision() const;
    double recall() const;
    double f1() const;
  };
  std::map<std::string, PerType> per_type;
  PerType overall;  // micro-average
  double token_accuracy = 0.0;

  std::string table() const;  // aligned plain text
  std::string tsv() const;
};

// Phrase-level scoring: predicted entities are maximal runs of identical
// non-"O" tags; gold entities come from B-/I- (or bare) tags; a true
// positive is an exact span+type match.
NerScore score_ner(const std::vector<std::vector<std::string>>& predicted,
                   const std::vector<std::vector<std::string>>& gold);

// (start, end exclusive, type) spans from a tag sequence. Accepts IOB tags
// and bare type names; used for both gold and predicted tags.
std::vector<std::tuple<size_t, size_t, std::string>> tag_spans(
    const std::vector<std::string>& tags);

}  // namespace kalm
