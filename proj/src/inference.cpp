#include "kalm/inference.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <tuple>

#include "kalm/errors.hpp"

namespace kalm {

void DecodeConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be nonnegative");
  if (alpha + beta <= 0.0) throw ConfigError("alpha + beta must be positive");
}

static std::pair<double, size_t> sentence_nll(const ModelParams& params,
                                              const EncodedSentence& sent) {
  if (params.cfg.bidirectional ? sent.size() < 3 : sent.size() < 2) return {0.0, 0};
  Tape tape;
  auto pv = register_params(tape, params, nullptr, nullptr);
  auto fr = forward(tape, params, pv, sent, nullptr);
  double nll = 0.0;
  for (VarId lp : fr.target_logprob) nll -= tape.value(lp)[0];
  return {nll, fr.target_logprob.size()};
}

double mean_nll(const ModelParams& params, const std::vector<EncodedSentence>& corpus) {
  if (corpus.empty()) throw DataError("perplexity: empty corpus");
  std::vector<double> nll(corpus.size(), 0.0);
  std::vector<size_t> cnt(corpus.size(), 0);
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < static_cast<int64_t>(corpus.size()); ++i) {
    auto [n, c] = sentence_nll(params, corpus[i]);
    nll[i] = n;
    cnt[i] = c;
  }
  double total = 0.0;
  size_t tokens = 0;
  for (size_t i = 0; i < corpus.size(); ++i) {
    total += nll[i];
    tokens += cnt[i];
  }
  if (tokens == 0) throw DataError("perplexity: no scorable tokens");
  return total / static_cast<double>(tokens);
}

double perplexity(const ModelParams& params, const std::vector<EncodedSentence>& corpus) {
  return std::exp(mean_nll(params, corpus));
}

std::vector<double> decode_types(const std::vector<double>& posterior,
                                 const std::vector<double>& prior, const DecodeConfig& cfg) {
  cfg.validate();
  if (!cfg.use_prior) return posterior;
  if (posterior.size() != prior.size())
    throw DataError("decode_types: posterior/prior width mismatch");
  std::vector<double> mixed(posterior.size());
  double z = 0.0;
  for (size_t i = 0; i < mixed.size(); ++i) {
    mixed[i] = cfg.alpha * posterior[i] + cfg.beta * prior[i];
    z += mixed[i];
  }
  for (double& m : mixed) m /= z;
  return mixed;
}

TaggedSentence tag_sentence(const ModelParams& params, const EncodedSentence& sent,
                            const TypePrior& prior, const DecodeConfig& cfg,
                            const std::vector<std::string>& type_names) {
  TaggedSentence out;
  const size_t n = sent.size();
  if (n < 2) return out;
  for (size_t t = 1; t + 1 < n; ++t) out.tokens.push_back(sent.surfaces[t]);
  if (n < 3) return out;

  Tape tape;
  auto pv = register_params(tape, params, nullptr, nullptr);
  auto fr = forward(tape, params, pv, sent, nullptr);
  std::map<size_t, std::vector<double>> posterior_at;
  for (size_t i = 0; i < fr.target_positions.size(); ++i) {
    size_t pos = fr.target_positions[i];
    if (pos >= 1 && pos + 1 < n)
      posterior_at.emplace(pos, full_posterior(tape, params, fr.log_posterior[i]));
  }
  for (size_t t = 1; t + 1 < n; ++t) {
    auto it = posterior_at.find(t);
    if (it == posterior_at.end()) {
      out.tags.push_back("O");
      out.posteriors.emplace_back(params.K + 1, 0.0);
      out.posteriors.back()[0] = 1.0;
      continue;
    }
    std::vector<double> mixed = decode_types(it->second, prior.lookup(sent.surfaces[t]), cfg);
    size_t best = 0;
    for (size_t j = 1; j < mixed.size(); ++j)
      if (mixed[j] > mixed[best]) best = j;  // ties stay on the general type
    out.tags.push_back(best == 0 ? "O" : type_names.at(best - 1));
    out.posteriors.push_back(std::move(mixed));
  }
  return out;
}

std::vector<std::tuple<size_t, size_t, std::string>> tag_spans(
    const std::vector<std::string>& tags) {
  std::vector<std::tuple<size_t, size_t, std::string>> spans;
  std::string cur_type;
  size_t cur_start = 0;
  auto flush = [&](size_t end) {
    if (!cur_type.empty()) spans.emplace_back(cur_start, end, cur_type);
    cur_type.clear();
  };
  for (size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    if (tag == "O" || tag.empty()) {
      flush(i);
      continue;
    }
    bool begins = false;
    std::string type = tag;
    if (tag.size() > 2 && tag[1] == '-') {
      type = tag.substr(2);
      begins = (tag[0] == 'B');
    }
    if (begins || type != cur_type) {
      flush(i);
      cur_type = type;
      cur_start = i;
    }
  }
  flush(tags.size());
  return spans;
}

double NerScore::PerType::precision() const {
  return predicted == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(predicted);
}
double NerScore::PerType::recall() const {
  return gold == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(gold);
}
double NerScore::PerType::f1() const {
  double p = precision(), r = recall();
  return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

NerScore score_ner(const std::vector<std::vector<std::string>>& predicted,
                   const std::vector<std::vector<std::string>>& gold) {
  if (predicted.size() != gold.size())
    throw DataError("score_ner: sentence count mismatch (" + std::to_string(predicted.size()) +
                    " predicted vs " + std::to_string(gold.size()) + " gold)");
  NerScore score;
  size_t tokens = 0, correct = 0;
  for (size_t s = 0; s < gold.size(); ++s) {
    if (predicted[s].size() != gold[s].size())
      throw DataError("score_ner: token misalignment in sentence " + std::to_string(s));
    auto pspans = tag_spans(predicted[s]);
    auto gspans = tag_spans(gold[s]);
    for (const auto& g : gspans) {
      ++score.per_type[std::get<2>(g)].gold;
      ++score.overall.gold;
    }
    for (const auto& p : pspans) {
      ++score.per_type[std::get<2>(p)].predicted;
      ++score.overall.predicted;
    }
    for (const auto& p : pspans)
      for (const auto& g : gspans)
        if (p == g) {
          ++score.per_type[std::get<2>(p)].matched;
          ++score.overall.matched;
          break;
        }
    // token-level secondary metric (bare type comparison)
    auto bare = [](const std::string& t) {
      return (t.size() > 2 && t[1] == '-') ? t.substr(2) : t;
    };
    for (size_t i = 0; i < gold[s].size(); ++i) {
      ++tokens;
      if (bare(predicted[s][i]) == bare(gold[s][i])) ++correct;
    }
  }
  score.token_accuracy = tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  return score;
}

std::string NerScore::table() const {
  std::ostringstream out;
  out << std::left << std::setw(12) << "type" << std::right << std::setw(10) << "precision"
      << std::setw(10) << "recall" << std::setw(10) << "f1" << std::setw(8) << "gold"
      << std::setw(8) << "pred" << '\n';
  auto row = [&](const std::string& name, const PerType& t) {
    out << std::left << std::setw(12) << name << std::right << std::fixed
        << std::setprecision(4) << std::setw(10) << t.precision() << std::setw(10) << t.recall()
        << std::setw(10) << t.f1() << std::setw(8) << t.gold << std::setw(8) << t.predicted
        << '\n';
  };
  for (const auto& [name, t] : per_type) row(name, t);
  row("overall", overall);
  out << "token accuracy " << std::fixed << std::setprecision(4) << token_accuracy << '\n';
  return out.str();
}

std::string NerScore::tsv() const {
  std::ostringstream out;
  out << "type\tprecision\trecall\tf1\tgold\tpredicted\tmatched\n";
  out.precision(17);
  auto row = [&](const std::string& name, const PerType& t) {
    out << name << '\t' << t.precision() << '\t' << t.recall() << '\t' << t.f1() << '\t'
        << t.gold << '\t' << t.predicted << '\t' << t.matched << '\n';
  };
  for (const auto& [name, t] : per_type) row(name, t);
  row("overall", overall);
  return out.str();
}

}  // namespace kalm
