#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "kalm/checkpoint.hpp"
#include "kalm/config.hpp"
#include "kalm/errors.hpp"
#include "kalm/inference.hpp"
#include "kalm/synth.hpp"
#include "kalm/training.hpp"

using namespace kalm;

namespace {

// Flag overrides applied on top of the config file.
struct Overrides {
  std::optional<uint64_t> seed;
  std::optional<std::string> profile;
  std::optional<std::string> mode;
  std::optional<std::string> feedback;  // on | off
  std::optional<double> kl_lambda;
  std::optional<double> alpha, beta;
  int threads = 0;
};

void add_common_flags(CLI::App* cmd, std::string& config_path, Overrides& ov) {
  cmd->add_option("--config", config_path, "experiment config file")->required();
  cmd->add_option("--seed", ov.seed, "RNG seed override");
  cmd->add_option("--profile", ov.profile, "model profile override (desk|paper)")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--mode", ov.mode, "direction mode override (uni|bi)")
      ->check(CLI::IsMember({"uni", "bi"}));
  cmd->add_option("--feedback", ov.feedback, "type feedback override (on|off)")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--kl-lambda", ov.kl_lambda, "KL prior penalty weight override");
  cmd->add_option("--alpha", ov.alpha, "decode posterior weight override");
  cmd->add_option("--beta", ov.beta, "decode prior weight override");
  cmd->add_option("--threads", ov.threads, "worker thread count (0 = library default)");
}

ExperimentConfig load_config(const std::string& path, const Overrides& ov) {
  ExperimentConfig cfg = ExperimentConfig::parse_file(path);
  if (ov.profile) {
    cfg.profile = *ov.profile;
    cfg.apply_profile();  // overrides explicit dimension keys too
  }
  if (ov.mode) {
    cfg.mode = *ov.mode;
    cfg.model.bidirectional = (cfg.mode == "bi");
  }
  if (ov.feedback) {
    cfg.feedback = (*ov.feedback == "on");
    cfg.model.feedback = cfg.feedback;
  }
  if (ov.seed) cfg.train.seed = *ov.seed;
  if (ov.kl_lambda) cfg.train.kl_lambda = *ov.kl_lambda;
  if (ov.alpha) cfg.decode.alpha = *ov.alpha;
  if (ov.beta) cfg.decode.beta = *ov.beta;
#ifdef _OPENMP
  if (ov.threads > 0) omp_set_num_threads(ov.threads);
#endif
  cfg.validate();
  return cfg;
}

KnowledgeBase load_kb(const ExperimentConfig& cfg) {
  return cfg.kb_path.empty() ? KnowledgeBase{} : KnowledgeBase::load(cfg.kb_path);
}

std::vector<EncodedSentence> encode_corpus(const std::vector<std::vector<std::string>>& text,
                                           const Vocabulary& vocab) {
  std::vector<EncodedSentence> out;
  out.reserve(text.size());
  for (const auto& s : text) out.push_back(encode(s, vocab));
  return out;
}

TypePrior make_prior(const ExperimentConfig& cfg, const KnowledgeBase& kb,
                     const std::vector<std::vector<std::string>>& train_text) {
  if (!cfg.prior_path.empty()) return TypePrior::load(cfg.prior_path);
  return compute_prior(kb, count_surfaces(train_text), cfg.prior_smoothing);
}

std::map<std::string, std::string> load_type_map(const std::string& path) {
  std::map<std::string, std::string> m;
  if (path.empty()) return m;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open type map: " + path);
  std::string from, to;
  while (in >> from >> to) m[from] = to;
  return m;
}

int cmd_synth(const std::string& out_dir, size_t sentences, uint64_t seed,
              size_t entities_per_type) {
  SynthCorpus corpus = generate_planted(sentences, seed, entities_per_type);
  write_synth(corpus, out_dir);
  std::cerr << "synth: wrote " << corpus.train.size() << " train / " << corpus.valid.size()
            << " valid / " << corpus.test.size() << " test sentences and "
            << corpus.kb.total_entries() << " KB entries under " << out_dir << "\n";
  return 0;
}

int cmd_build_vocab(const std::string& config_path, const Overrides& ov,
                    const std::string& out_path, const std::string& prior_out) {
  ExperimentConfig cfg = load_config(config_path, ov);
  if (cfg.train_path.empty()) throw ConfigError("build-vocab needs a 'train' corpus path");
  auto corpus = read_corpus(cfg.train_path, cfg.lowercase);
  KnowledgeBase kb = load_kb(cfg);
  Vocabulary vocab = build_vocabulary(corpus, kb, cfg.min_count);
  vocab.save(out_path);
  if (vocab.num_types() == 0) {
    std::cerr << "build-vocab: K = 0 (plain LM mode)\n";
  } else {
    std::cerr << "build-vocab: K = " << vocab.num_types() << " entity types\n";
    for (size_t j = 0; j < vocab.num_types(); ++j)
      std::cerr << "  " << vocab.type_names[j] << "\t" << vocab.type_vocabs[j].size() << "\n";
  }
  std::cerr << "build-vocab: |V_g| = " << vocab.general.size() << ", embedding rows = "
            << vocab.embedding_rows() << ", hash = " << vocab.hash() << "\n";
  if (!prior_out.empty()) {
    compute_prior(kb, count_surfaces(corpus), cfg.prior_smoothing).save(prior_out);
    std::cerr << "build-vocab: wrote type prior to " << prior_out << "\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, const Overrides& ov, const std::string& out_path,
              std::string vocab_out, std::string metrics_out, const std::string& resume) {
  ExperimentConfig cfg = load_config(config_path, ov);
  if (cfg.train_path.empty() || cfg.valid_path.empty())
    throw ConfigError("train needs 'train' and 'valid' corpus paths");
  if (vocab_out.empty()) vocab_out = out_path + ".vocab";
  if (metrics_out.empty()) metrics_out = out_path + ".metrics.tsv";

  auto train_text = read_corpus(cfg.train_path, cfg.lowercase);
  auto valid_text = read_corpus(cfg.valid_path, cfg.lowercase);
  KnowledgeBase kb = load_kb(cfg);
  Vocabulary vocab = build_vocabulary(train_text, kb, cfg.min_count);
  auto train_set = encode_corpus(train_text, vocab);
  auto valid_set = encode_corpus(valid_text, vocab);

  TypePrior prior;
  bool use_prior = cfg.train.kl_lambda > 0.0;
  if (use_prior) prior = make_prior(cfg, kb, train_text);

  size_t epoch_offset = 0;
  ModelParams params;
  if (!resume.empty()) {
    Checkpoint ckpt = Checkpoint::load(resume, vocab.hash());
    params = std::move(ckpt.params);
    epoch_offset = ckpt.epoch;
    if (epoch_offset >= cfg.train.epochs)
      throw ConfigError("resume checkpoint already has " + std::to_string(epoch_offset) +
                        " epochs; raise 'epochs'");
    std::cerr << "train: resuming from " << resume << " at epoch " << epoch_offset << "\n";
  } else {
    Rng init_rng(cfg.train.seed, /*stream=*/0x1217);
    params = ModelParams::create(cfg.model, vocab, init_rng);
  }
  std::cerr << "train: " << params.parameter_count() << " parameters, K = " << params.K
            << ", mode = " << cfg.mode << ", feedback = " << (cfg.feedback ? "on" : "off")
            << "\n";

  TrainConfig tc = cfg.train;
  tc.epochs = cfg.train.epochs - epoch_offset;
  // Offset the seed so resumed runs do not replay the same batch order.
  tc.seed = cfg.train.seed + epoch_offset;

  std::ofstream metrics(metrics_out);
  if (!metrics) throw DataError("cannot write metrics file: " + metrics_out);
  metrics << "epoch\ttrain_loss\tval_ppl\taveraging\n";
  metrics.precision(17);
  TrainReport report = train(params, train_set, valid_set, use_prior ? &prior : nullptr, tc,
                             [&](size_t epoch, double loss, double ppl, bool avg) {
                               size_t e = epoch + epoch_offset;
                               std::cerr << "epoch " << e << "  train_loss " << loss
                                         << "  val_ppl " << ppl << (avg ? "  [averaging]" : "")
                                         << "\n";
                               metrics << e << '\t' << loss << '\t' << ppl << '\t'
                                       << (avg ? 1 : 0) << '\n';
                             });

  vocab.save(vocab_out);
  Checkpoint ckpt{std::move(params), vocab.hash(), cfg.train.seed,
                  epoch_offset + report.epochs.size()};
  ckpt.save(out_path);
  std::cerr << "train: finished in " << report.wall_seconds << "s";
  if (report.asgd_start_epoch > 0)
    std::cerr << ", averaging from epoch " << report.asgd_start_epoch + epoch_offset;
  std::cerr << "; checkpoint " << out_path << "\n";
  return 0;
}

struct LoadedModel {
  Vocabulary vocab;
  ModelParams params;
};

LoadedModel load_model(const std::string& model_path, std::string vocab_path) {
  if (vocab_path.empty()) vocab_path = model_path + ".vocab";
  LoadedModel lm;
  lm.vocab = Vocabulary::load(vocab_path);
  lm.params = Checkpoint::load(model_path, lm.vocab.hash()).params;
  return lm;
}

int cmd_eval(const std::string& config_path, const Overrides& ov, const std::string& model_path,
             const std::string& vocab_path, const std::string& split) {
  ExperimentConfig cfg = load_config(config_path, ov);
  const std::string& path = split == "train"   ? cfg.train_path
                            : split == "valid" ? cfg.valid_path
                                               : cfg.test_path;
  if (path.empty()) throw ConfigError("eval: config has no '" + split + "' corpus path");
  LoadedModel lm = load_model(model_path, vocab_path);
  auto corpus = encode_corpus(read_corpus(path, cfg.lowercase), lm.vocab);
  double ce = mean_nll(lm.params, corpus);
  std::cout.precision(17);
  std::cout << "split\t" << split << "\nmean_nll\t" << ce << "\nperplexity\t" << std::exp(ce)
            << "\n";
  return 0;
}

int cmd_tag(const std::string& config_path, const Overrides& ov, const std::string& model_path,
            const std::string& vocab_path, std::string input_path,
            const std::string& output_path) {
  ExperimentConfig cfg = load_config(config_path, ov);
  if (input_path.empty()) input_path = cfg.test_path;
  if (input_path.empty()) throw ConfigError("tag: no --input and no 'test' path in config");
  LoadedModel lm = load_model(model_path, vocab_path);
  KnowledgeBase kb = load_kb(cfg);
  TypePrior prior;
  if (cfg.decode.use_prior) {
    std::vector<std::vector<std::string>> counts_text;
    if (!cfg.train_path.empty()) counts_text = read_corpus(cfg.train_path, cfg.lowercase);
    prior = make_prior(cfg, kb, counts_text);
  } else {
    prior.num_types = lm.vocab.num_types();
  }
  auto type_map = load_type_map(cfg.type_map_path);
  std::vector<std::string> names = lm.vocab.type_names;
  for (auto& n : names) {
    auto it = type_map.find(n);
    if (it != type_map.end()) n = it->second;
  }

  std::ofstream file_out;
  std::ostream* out = &std::cout;
  if (!output_path.empty()) {
    file_out.open(output_path);
    if (!file_out) throw DataError("cannot write tag output: " + output_path);
    out = &file_out;
  }
  auto text = read_corpus(input_path, cfg.lowercase);
  for (const auto& sent_tokens : text) {
    TaggedSentence tagged =
        tag_sentence(lm.params, encode(sent_tokens, lm.vocab), prior, cfg.decode, names);
    for (size_t i = 0; i < tagged.tokens.size(); ++i)
      *out << tagged.tokens[i] << '\t' << tagged.tags[i] << '\n';
    *out << '\n';
  }
  return 0;
}

int cmd_score(const std::string& pred_path, const std::string& gold_path,
              const std::string& tsv_out) {
  auto pred = load_conll(pred_path);
  auto gold = load_conll(gold_path);
  std::vector<std::vector<std::string>> ptags, gtags;
  for (const auto& s : pred) ptags.push_back(s.tags);
  for (const auto& s : gold) gtags.push_back(s.tags);
  NerScore score = score_ner(ptags, gtags);
  std::cout << score.table();
  if (!tsv_out.empty()) {
    std::ofstream out(tsv_out);
    if (!out) throw DataError("cannot write score TSV: " + tsv_out);
    out << score.tsv();
  }
  return 0;
}

int cmd_ablate_kb(const std::string& config_path, const Overrides& ov,
                  const std::string& fractions_arg, const std::string& out_tsv,
                  const std::string& out_csv) {
  ExperimentConfig cfg = load_config(config_path, ov);
  if (cfg.train_path.empty() || cfg.valid_path.empty() || cfg.kb_path.empty())
    throw ConfigError("ablate-kb needs 'train', 'valid' and 'kb' paths");
  if (cfg.gold_path.empty()) throw ConfigError("ablate-kb needs a 'gold' tagged test file");

  std::vector<double> fractions;
  {
    std::istringstream iss(fractions_arg);
    std::string tok;
    while (std::getline(iss, tok, ',')) {
      try {
        fractions.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("ablate-kb: bad fraction '" + tok + "'");
      }
      if (fractions.back() < 0.0 || fractions.back() > 1.0)
        throw ConfigError("ablate-kb: fractions must lie in [0,1]");
    }
  }
  if (fractions.empty()) throw ConfigError("ablate-kb: empty fraction list");

  auto train_text = read_corpus(cfg.train_path, cfg.lowercase);
  auto valid_text = read_corpus(cfg.valid_path, cfg.lowercase);
  auto gold = load_conll(cfg.gold_path);
  KnowledgeBase base_kb = KnowledgeBase::load(cfg.kb_path);
  auto type_map = load_type_map(cfg.type_map_path);

  struct Row {
    double fraction, val_ppl, f1;
  };
  std::vector<Row> rows;
  for (double fraction : fractions) {
    auto [kb, removed] = corrupt_kb(base_kb, fraction, cfg.train.seed);
    Vocabulary vocab = build_vocabulary(train_text, kb, cfg.min_count);
    auto train_set = encode_corpus(train_text, vocab);
    auto valid_set = encode_corpus(valid_text, vocab);
    TypePrior prior = compute_prior(kb, count_surfaces(train_text), cfg.prior_smoothing);

    Rng init_rng(cfg.train.seed, /*stream=*/0x1217);
    ModelParams params = ModelParams::create(cfg.model, vocab, init_rng);
    bool use_prior = cfg.train.kl_lambda > 0.0;
    std::cerr << "ablate-kb: fraction " << fraction << " (" << removed.size()
              << " entries removed), training...\n";
    train(params, train_set, valid_set, use_prior ? &prior : nullptr, cfg.train);
    double val_ppl = perplexity(params, valid_set);

    std::vector<std::string> names = vocab.type_names;
    for (auto& n : names) {
      auto it = type_map.find(n);
      if (it != type_map.end()) n = it->second;
    }
    std::vector<std::vector<std::string>> ptags, gtags;
    for (const auto& s : gold) {
      TaggedSentence tagged =
          tag_sentence(params, encode(s.tokens, vocab), prior, cfg.decode, names);
      ptags.push_back(tagged.tags);
      gtags.push_back(s.tags);
    }
    NerScore score = score_ner(ptags, gtags);
    rows.push_back({fraction, val_ppl, score.overall.f1()});
    std::cerr << "ablate-kb: fraction " << fraction << "  val_ppl " << val_ppl << "  F1 "
              << score.overall.f1() << "\n";
  }

  auto write_rows = [&](const std::string& path, char sep, const char* header) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write ablation output: " + path);
    out.precision(17);
    out << header << '\n';
    for (const Row& r : rows) out << r.fraction << sep << r.val_ppl << sep << r.f1 << '\n';
  };
  write_rows(out_tsv, '\t', "fraction\tval_ppl\ttest_f1");
  write_rows(out_csv, ',', "fraction,val_ppl,test_f1");
  std::cout << "fraction\tval_ppl\ttest_f1\n";
  std::cout.precision(17);
  for (const Row& r : rows) std::cout << r.fraction << '\t' << r.val_ppl << '\t' << r.f1 << '\n';
  return 0;
}

int cmd_grad_check(uint64_t seed, const std::string& mode, bool feedback, double kl_lambda,
                   double tolerance) {
  // Self-contained toy problem: two entity types, short sentences.
  KnowledgeBase kb;
  kb.types = {"PER", "LOC"};
  kb.entities = {{{"alice", 5}, {"bob", 3}}, {{"paris", 9}, {"rome", 2}}};
  std::vector<std::vector<std::string>> text = {{"alice", "visited", "paris"},
                                                {"bob", "likes", "rome", "and", "alice"},
                                                {"the", "cat", "sat", "on", "the", "mat"}};
  Vocabulary vocab = build_vocabulary(text, kb, 1);
  ModelConfig mc;
  mc.embed_dim = 4;
  mc.hidden_dim = 5;
  mc.layers = 2;
  mc.type_dim = 3;
  mc.feedback = feedback;
  mc.bidirectional = (mode == "bi");
  Rng rng(seed);
  ModelParams params = ModelParams::create(mc, vocab, rng);

  TrainConfig tc;
  tc.dropout = DropoutConfig{0, 0, 0, 0, 0};
  tc.ar = 0.3;
  tc.tar = 0.4;
  tc.kl_lambda = kl_lambda;
  TypePrior prior = compute_prior(kb, count_surfaces(text), 1.0);

  auto batch = encode_corpus(text, vocab);
  GradCheckReport report = check_gradients(params, batch, kl_lambda > 0.0 ? &prior : nullptr,
                                           tc, tolerance);
  std::cout.precision(6);
  for (const auto& [name, err] : report.max_rel_error)
    std::cout << name << '\t' << err << (err <= tolerance ? "\tok" : "\tFAIL") << '\n';
  std::cout << (report.passed() ? "grad-check passed" : "grad-check FAILED") << " (tolerance "
            << tolerance << ")\n";
  return report.passed() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KALM: knowledge-augmented LSTM language model"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate the planted-entity corpus");
  std::string synth_out = "synth";
  size_t synth_sentences = 2000, synth_entities = 24;
  uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--sentences", synth_sentences, "number of sentences");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--entities-per-type", synth_entities, "lexicon size per type");

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "build and serialize the vocabulary");
  std::string bv_config, bv_out = "vocab.txt", bv_prior_out;
  Overrides bv_ov;
  add_common_flags(bv, bv_config, bv_ov);
  bv->add_option("--out", bv_out, "vocabulary output path");
  bv->add_option("--prior-out", bv_prior_out, "also write the KB type prior here");

  // train
  auto* tr = app.add_subcommand("train", "train a model from a config");
  std::string tr_config, tr_out = "model.ckpt", tr_vocab_out, tr_metrics_out, tr_resume;
  Overrides tr_ov;
  add_common_flags(tr, tr_config, tr_ov);
  tr->add_option("--out", tr_out, "checkpoint output path");
  tr->add_option("--vocab-out", tr_vocab_out, "vocabulary output path (default <out>.vocab)");
  tr->add_option("--metrics-out", tr_metrics_out,
                 "per-epoch metrics TSV (default <out>.metrics.tsv)");
  tr->add_option("--resume", tr_resume, "continue training from this checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "report perplexity of a checkpoint");
  std::string ev_config, ev_model, ev_vocab, ev_split = "test";
  Overrides ev_ov;
  add_common_flags(ev, ev_config, ev_ov);
  ev->add_option("--model", ev_model, "checkpoint path")->required();
  ev->add_option("--vocab", ev_vocab, "vocabulary path (default <model>.vocab)");
  ev->add_option("--split", ev_split, "corpus split to score")
      ->check(CLI::IsMember({"train", "valid", "test"}));

  // tag
  auto* tg = app.add_subcommand("tag", "tag text with entity types");
  std::string tg_config, tg_model, tg_vocab, tg_input, tg_output;
  Overrides tg_ov;
  add_common_flags(tg, tg_config, tg_ov);
  tg->add_option("--model", tg_model, "checkpoint path")->required();
  tg->add_option("--vocab", tg_vocab, "vocabulary path (default <model>.vocab)");
  tg->add_option("--input", tg_input, "text to tag (default: config 'test')");
  tg->add_option("--output", tg_output, "CoNLL output path (default: stdout)");

  // score
  auto* sc = app.add_subcommand("score", "score predicted tags against gold");
  std::string sc_config, sc_pred, sc_gold, sc_tsv;
  sc->add_option("--config", sc_config, "accepted for interface uniformity; unused");
  sc->add_option("--pred", sc_pred, "predicted tags (CoNLL)")->required();
  sc->add_option("--gold", sc_gold, "gold tags (CoNLL)")->required();
  sc->add_option("--tsv-out", sc_tsv, "also write machine-readable TSV here");

  // ablate-kb
  auto* ab = app.add_subcommand("ablate-kb", "KB corruption sweep (train per fraction)");
  std::string ab_config, ab_fractions = "0,0.25,0.5,0.75,1", ab_tsv = "ablation.tsv", ab_csv;
  Overrides ab_ov;
  add_common_flags(ab, ab_config, ab_ov);
  ab->add_option("--fractions", ab_fractions, "comma-separated corruption fractions");
  ab->add_option("--out", ab_tsv, "result TSV path");
  ab->add_option("--csv", ab_csv, "also write plot-ready CSV here");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  uint64_t gc_seed = 1;
  std::string gc_mode = "uni", gc_feedback = "off";
  double gc_kl = 0.0, gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "RNG seed");
  gc->add_option("--mode", gc_mode, "uni|bi")->check(CLI::IsMember({"uni", "bi"}));
  gc->add_option("--feedback", gc_feedback, "on|off")->check(CLI::IsMember({"on", "off"}));
  gc->add_option("--kl-lambda", gc_kl, "KL prior penalty weight");
  gc->add_option("--tolerance", gc_tol, "max relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << app.help() << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_sentences, synth_seed, synth_entities);
    if (*bv) return cmd_build_vocab(bv_config, bv_ov, bv_out, bv_prior_out);
    if (*tr) return cmd_train(tr_config, tr_ov, tr_out, tr_vocab_out, tr_metrics_out, tr_resume);
    if (*ev) return cmd_eval(ev_config, ev_ov, ev_model, ev_vocab, ev_split);
    if (*tg) return cmd_tag(tg_config, tg_ov, tg_model, tg_vocab, tg_input, tg_output);
    if (*sc) return cmd_score(sc_pred, sc_gold, sc_tsv);
    if (*ab) return cmd_ablate_kb(ab_config, ab_ov, ab_fractions, ab_tsv, ab_csv);
    if (*gc) return cmd_grad_check(gc_seed, gc_mode, gc_feedback == "on", gc_kl, gc_tol);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
