#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kalm/kb.hpp"
#include "kalm/model.hpp"

namespace kalm {

struct TrainConfig {
  double lr = 10.0;
  double weight_decay = 1.2e-6;
  double grad_clip = 0.25;
  int nonmono = 5;
  DropoutConfig dropout;
  double ar = 1.0;   // L2 penalty on dropped final activations
  double tar = 2.0;  // temporal L2 penalty on raw final activations
  double kl_lambda = 0.0;
  size_t batch_size = 16;
  size_t epochs = 20;
  uint64_t seed = 1;

  void validate() const;  // throws ConfigError naming the offending field
};

struct TrainReport {
  struct Epoch {
    size_t epoch;
    double train_loss;
    double val_ppl;
  };
  std::vector<Epoch> epochs;
  int asgd_start_epoch = -1;  // -1 if averaging never triggered
  double wall_seconds = 0.0;
};

// Mean negative log mixture probability of the gold tokens plus, when
// lambda > 0, the per-position lambda * KL(posterior || prior)^2 term. The
// KL uses epsilon-floored prior entries. Returns a tape scalar.
VarId sequence_loss(Tape& tape, const ModelParams& params, const ForwardResult& fr,
                    const EncodedSentence& sent, const TypePrior* prior, double kl_lambda);

// KL(posterior || prior)^2 for one position. `log_posterior` ranges over
// the active types; `prior_full` over all K+1 types, epsilon-floored here.
VarId kl_squared_penalty(Tape& tape, const ModelParams& params, VarId log_posterior,
                         const std::vector<double>& prior_full);

// loss + ar * mean(drop^2) + tar * mean((raw_t - raw_{t+1})^2), per direction.
VarId apply_regularization(Tape& tape, VarId loss, const ForwardResult& fr, double ar,
                           double tar);

// Scales gradients in place so the global norm is at most `clip`.
// Returns the pre-clip norm.
double clip_gradients(Gradients& grads, double clip);

// SGD with weight decay and clipping; switches to iterate averaging once
// validation perplexity stops improving for `nonmono` consecutive epochs.
// On return `params` holds the selected weights (averaged if averaging was
// triggered, otherwise the best-validation iterate).
using EpochCallback =
    std::function<void(size_t epoch, double train_loss, double val_ppl, bool averaging)>;
TrainReport train(ModelParams& params, const std::vector<EncodedSentence>& train_set,
                  const std::vector<EncodedSentence>& valid_set, const TypePrior* prior,
                  const TrainConfig& cfg, const EpochCallback& cb = nullptr);

// Analytic gradients of the full training loss (dropout disabled) on a batch.
Gradients compute_gradients(const ModelParams& params,
                            const std::vector<EncodedSentence>& batch,
                            const TypePrior* prior, const TrainConfig& cfg,
                            double* loss_out = nullptr);

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;  // per parameter group
  double tolerance = 1e-4;
  bool passed() const;
};

// Central finite differences (step 1e-4) against the supplied analytic
// gradients. Failures are reported, never thrown.
GradCheckReport compare_with_fd(ModelParams& params,
                                const std::vector<EncodedSentence>& batch,
                                const TypePrior* prior, const TrainConfig& cfg,
                                const Gradients& analytic, double tolerance);

GradCheckReport check_gradients(ModelParams& params,
                                const std::vector<EncodedSentence>& batch,
                                const TypePrior* prior, const TrainConfig& cfg,
                                double tolerance);

}  // namespace kalm
