#include "kalm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "kalm/errors.hpp"
#include "kalm/inference.hpp"

namespace kalm {

static constexpr double kPriorFloor = 1e-8;
static constexpr double kFdStep = 1e-4;
// Entries whose gradient sits below the FD noise floor (loss is O(1), so the
// difference quotient carries ~|loss|*eps/step of roundoff) are compared
// against this floor instead of their own magnitude.
static constexpr double kFdDenomFloor = 1e-5;

void TrainConfig::validate() const {
  auto rate = [](double v, const char* name) {
    if (v < 0.0 || v > 1.0) throw ConfigError(std::string(name) + " must be in [0,1]");
  };
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (grad_clip <= 0.0) throw ConfigError("grad_clip must be positive");
  if (nonmono <= 0) throw ConfigError("nonmono must be positive");
  rate(dropout.wdrop, "wdrop");
  rate(dropout.dropouth, "dropouth");
  rate(dropout.dropouto, "dropouto");
  rate(dropout.dropoute, "dropoute");
  rate(dropout.dropouti, "dropouti");
  if (ar < 0.0) throw ConfigError("ar must be nonnegative");
  if (tar < 0.0) throw ConfigError("tar must be nonnegative");
  if (kl_lambda < 0.0) throw ConfigError("kl_lambda must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
}

VarId kl_squared_penalty(Tape& tape, const ModelParams& params, VarId log_posterior,
                        const std::vector<double>& prior_full) {
  auto active = params.active_types();
  Tensor log_prior = Tensor::zeros(active.size());
  for (size_t i = 0; i < active.size(); ++i)
    log_prior[i] = std::log(std::max(prior_full[active[i]], kPriorFloor));
  VarId p = tape.exp(log_posterior);
  VarId diff = tape.sub(log_posterior, tape.input(log_prior));
  VarId kl = tape.sum(tape.mul(p, diff));
  return tape.square(kl);
}

VarId sequence_loss(Tape& tape, const ModelParams& params, const ForwardResult& fr,
                    const EncodedSentence& sent, const TypePrior* prior, double kl_lambda) {
  std::vector<VarId> terms;
  for (size_t i = 0; i < fr.target_logprob.size(); ++i) {
    VarId term = tape.scale(fr.target_logprob[i], -1.0);
    if (kl_lambda > 0.0 && prior) {
      auto pr = prior->lookup(sent.surfaces[fr.target_positions[i]]);
      term = tape.add(term,
                      tape.scale(kl_squared_penalty(tape, params, fr.log_posterior[i], pr), kl_lambda));
    }
    terms.push_back(term);
  }
  return tape.mean(tape.stack(terms));
}

static VarId activation_penalty(Tape& tape, const std::vector<VarId>& raw,
                                const std::vector<VarId>& drop, double ar, double tar) {
  VarId total = tape.input_scalar(0.0);
  if (ar > 0.0) {
    std::vector<VarId> terms;
    for (VarId v : drop) terms.push_back(tape.mean(tape.square(v)));
    total = tape.add(total, tape.scale(tape.mean(tape.stack(terms)), ar));
  }
  if (tar > 0.0 && raw.size() >= 2) {
    std::vector<VarId> terms;
    for (size_t t = 0; t + 1 < raw.size(); ++t)
      terms.push_back(tape.mean(tape.square(tape.sub(raw[t], raw[t + 1]))));
    total = tape.add(total, tape.scale(tape.mean(tape.stack(terms)), tar));
  }
  return total;
}

VarId apply_regularization(Tape& tape, VarId loss, const ForwardResult& fr, double ar,
                           double tar) {
  if (ar == 0.0 && tar == 0.0) return loss;
  VarId out = tape.add(loss, activation_penalty(tape, fr.raw_out_fwd, fr.drop_out_fwd, ar, tar));
  if (!fr.raw_out_bwd.empty())
    out = tape.add(out, activation_penalty(tape, fr.raw_out_bwd, fr.drop_out_bwd, ar, tar));
  return out;
}

double clip_gradients(Gradients& grads, double clip) {
  double norm = std::sqrt(grads.squared_norm());
  if (norm > clip && norm > 0.0) {
    double s = clip / norm;
    for (auto& [name, t] : grads.by_name)
      for (size_t i = 0; i < t.size(); ++i) t[i] *= s;
  }
  return norm;
}

// Full batch loss on one tape: mean per-target loss plus the mean of the
// per-sentence activation penalties. Dropout disabled.
static VarId batch_loss(Tape& tape, const ModelParams& params, const ParamVars& pv,
                        const std::vector<EncodedSentence>& batch, const TypePrior* prior,
                        const TrainConfig& cfg) {
  size_t total_targets = 0;
  std::vector<VarId> ce_terms, reg_terms;
  for (const auto& sent : batch) {
    auto fr = forward(tape, params, pv, sent, nullptr);
    total_targets += fr.target_logprob.size();
    VarId s = tape.input_scalar(0.0);
    for (size_t i = 0; i < fr.target_logprob.size(); ++i) {
      VarId term = tape.scale(fr.target_logprob[i], -1.0);
      if (cfg.kl_lambda > 0.0 && prior) {
        auto pr = prior->lookup(sent.surfaces[fr.target_positions[i]]);
        term = tape.add(
            term, tape.scale(kl_squared_penalty(tape, params, fr.log_posterior[i], pr), cfg.kl_lambda));
      }
      s = tape.add(s, term);
    }
    ce_terms.push_back(s);
    if (cfg.ar > 0.0 || cfg.tar > 0.0) {
      VarId r = activation_penalty(tape, fr.raw_out_fwd, fr.drop_out_fwd, cfg.ar, cfg.tar);
      if (!fr.raw_out_bwd.empty())
        r = tape.add(r,
                     activation_penalty(tape, fr.raw_out_bwd, fr.drop_out_bwd, cfg.ar, cfg.tar));
      reg_terms.push_back(r);
    }
  }
  VarId loss = tape.scale(tape.sum(tape.stack(ce_terms)), 1.0 / static_cast<double>(total_targets));
  if (!reg_terms.empty()) loss = tape.add(loss, tape.mean(tape.stack(reg_terms)));
  return loss;
}

Gradients compute_gradients(const ModelParams& params,
                            const std::vector<EncodedSentence>& batch,
                            const TypePrior* prior, const TrainConfig& cfg,
                            double* loss_out) {
  Gradients grads = Gradients::like(params);
  Tape tape;
  auto pv = register_params(tape, params, &grads, nullptr);
  VarId loss = batch_loss(tape, params, pv, batch, prior, cfg);
  if (loss_out) *loss_out = tape.value(loss)[0];
  tape.backward(loss);
  return grads;
}

static double loss_value(const ModelParams& params, const std::vector<EncodedSentence>& batch,
                         const TypePrior* prior, const TrainConfig& cfg) {
  Tape tape;
  auto pv = register_params(tape, params, nullptr, nullptr);
  return tape.value(batch_loss(tape, params, pv, batch, prior, cfg))[0];
}

bool GradCheckReport::passed() const {
  for (const auto& [name, err] : max_rel_error)
    if (!(err <= tolerance)) return false;
  return true;
}

GradCheckReport compare_with_fd(ModelParams& params,
                                const std::vector<EncodedSentence>& batch,
                                const TypePrior* prior, const TrainConfig& cfg,
                                const Gradients& analytic, double tolerance) {
  GradCheckReport report;
  report.tolerance = tolerance;
  params.for_each([&](const std::string& name, Tensor& t) {
    const Tensor& a = analytic.by_name.at(name);
    double worst = 0.0;
    for (size_t i = 0; i < t.size(); ++i) {
      double orig = t[i];
      t[i] = orig + kFdStep;
      double lp = loss_value(params, batch, prior, cfg);
      t[i] = orig - kFdStep;
      double lm = loss_value(params, batch, prior, cfg);
      t[i] = orig;
      double numeric = (lp - lm) / (2.0 * kFdStep);
      double denom = std::max({std::fabs(a[i]), std::fabs(numeric), kFdDenomFloor});
      worst = std::max(worst, std::fabs(a[i] - numeric) / denom);
    }
    report.max_rel_error[name] = worst;
  });
  return report;
}

GradCheckReport check_gradients(ModelParams& params,
                                const std::vector<EncodedSentence>& batch,
                                const TypePrior* prior, const TrainConfig& cfg,
                                double tolerance) {
  Gradients analytic = compute_gradients(params, batch, prior, cfg);
  return compare_with_fd(params, batch, prior, cfg, analytic, tolerance);
}

// One gradient step over a batch, with fresh per-sentence dropout plans.
// Returns the summed negative log likelihood over targets.
static double train_batch(ModelParams& params, Gradients& grads,
                          const std::vector<const EncodedSentence*>& batch,
                          const TypePrior* prior, const TrainConfig& cfg, Rng& drop_rng,
                          size_t* target_count) {
  grads.zero();
  size_t total_targets = 0;
  for (const auto* s : batch)
    total_targets += params.cfg.bidirectional ? s->interior() : s->size() - 1;
  double nll_sum = 0.0;
  for (const auto* s : batch) {
    Tape tape;
    DropoutPlan plan = make_dropout_plan(params, cfg.dropout, *s, drop_rng);
    auto pv = register_params(tape, params, &grads, &plan);
    auto fr = forward(tape, params, pv, *s, &plan);
    VarId ce = tape.input_scalar(0.0);
    for (size_t i = 0; i < fr.target_logprob.size(); ++i) {
      VarId term = tape.scale(fr.target_logprob[i], -1.0);
      nll_sum += -tape.value(fr.target_logprob[i])[0];
      if (cfg.kl_lambda > 0.0 && prior) {
        auto pr = prior->lookup(s->surfaces[fr.target_positions[i]]);
        term = tape.add(
            term, tape.scale(kl_squared_penalty(tape, params, fr.log_posterior[i], pr), cfg.kl_lambda));
      }
      ce = tape.add(ce, term);
    }
    VarId loss = tape.scale(ce, 1.0 / static_cast<double>(total_targets));
    if (cfg.ar > 0.0 || cfg.tar > 0.0) {
      VarId r = activation_penalty(tape, fr.raw_out_fwd, fr.drop_out_fwd, cfg.ar, cfg.tar);
      if (!fr.raw_out_bwd.empty())
        r = tape.add(r,
                     activation_penalty(tape, fr.raw_out_bwd, fr.drop_out_bwd, cfg.ar, cfg.tar));
      loss = tape.add(loss, tape.scale(r, 1.0 / static_cast<double>(batch.size())));
    }
    double lv = tape.value(loss)[0];
    if (!std::isfinite(lv)) throw NumericalError("non-finite training loss");
    tape.backward(loss);
  }
  *target_count = total_targets;
  return nll_sum;
}

TrainReport train(ModelParams& params, const std::vector<EncodedSentence>& train_set,
                  const std::vector<EncodedSentence>& valid_set, const TypePrior* prior,
                  const TrainConfig& cfg, const EpochCallback& cb) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  auto t0 = std::chrono::steady_clock::now();

  Rng root(cfg.seed);
  Gradients grads = Gradients::like(params);
  TrainReport report;

  ModelParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> val_hist;

  bool averaging = false;
  ModelParams avg = params;
  double avg_n = 0.0;
  int no_improve = 0;

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = root.child(1000 + epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    Rng drop_rng = root.child(2000 + epoch);

    double epoch_nll = 0.0;
    size_t epoch_targets = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const EncodedSentence*> batch;
      for (size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        const EncodedSentence& s = train_set[order[i]];
        if (params.cfg.bidirectional ? s.size() < 3 : s.size() < 2) continue;
        batch.push_back(&s);
      }
      if (batch.empty()) continue;
      size_t targets = 0;
      epoch_nll += train_batch(params, grads, batch, prior, cfg, drop_rng, &targets);
      epoch_targets += targets;

      clip_gradients(grads, cfg.grad_clip);
      params.for_each([&](const std::string& name, Tensor& t) {
        const Tensor& g = grads.by_name.at(name);
        for (size_t i = 0; i < t.size(); ++i)
          t[i] -= cfg.lr * (g[i] + cfg.weight_decay * t[i]);
      });
      if (averaging) {
        // running mean over iterates
        avg_n += 1.0;
        std::map<std::string, const Tensor*> cur;
        params.for_each(
            [&](const std::string& name, const Tensor& t) { cur.emplace(name, &t); });
        avg.for_each([&](const std::string& name, Tensor& at) {
          const Tensor& t = *cur.at(name);
          for (size_t i = 0; i < at.size(); ++i) at[i] += (t[i] - at[i]) / avg_n;
        });
      }
    }

    const ModelParams& eval_params = averaging ? avg : params;
    double val_ppl = perplexity(eval_params, valid_set);
    if (!std::isfinite(val_ppl)) throw NumericalError("non-finite validation perplexity");
    double train_loss = epoch_targets ? epoch_nll / static_cast<double>(epoch_targets) : 0.0;
    report.epochs.push_back({epoch, train_loss, val_ppl});
    if (cb) cb(epoch, train_loss, val_ppl, averaging);

    if (val_ppl < best_val) {
      best_val = val_ppl;
      best = eval_params;
      no_improve = 0;
    } else {
      ++no_improve;
    }

    if (!averaging && static_cast<int>(val_hist.size()) > cfg.nonmono) {
      double prior_best = *std::min_element(val_hist.begin(), val_hist.end() - cfg.nonmono);
      if (val_ppl > prior_best) {
        averaging = true;
        avg = params;
        avg_n = 1.0;
        report.asgd_start_epoch = static_cast<int>(epoch);
      }
    }
    val_hist.push_back(val_ppl);

    if (averaging && no_improve >= cfg.nonmono) break;  // sustained degradation
  }

  params = averaging ? avg : best;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace kalm
