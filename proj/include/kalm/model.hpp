#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kalm/rng.hpp"
#include "kalm/tape.hpp"
#include "kalm/tensor.hpp"
#include "kalm/vocab.hpp"

namespace kalm {

struct ModelConfig {
  size_t embed_dim = 64;
  size_t hidden_dim = 128;
  size_t layers = 1;
  size_t type_dim = 16;
  bool feedback = false;
  bool bidirectional = false;

  size_t input_dim() const { return embed_dim + (feedback ? type_dim : 0); }
};

struct LstmLayerParams {
  Tensor Wx, Wh, b;
};

// One LSTM stack with its output projection and type-posterior head.
struct DirectionParams {
  std::vector<LstmLayerParams> layers;
  Tensor W_out;  // embed_dim x hidden_dim (hidden states scaled to embed width)
  Tensor W_ctx;  // type_dim x embed_dim
};

// All trainable state. The general-type decoder has no weight matrix of its
// own: it reads the leading |V_g| rows of `embeddings` (weight tying).
struct ModelParams {
  ModelConfig cfg;
  size_t K = 0;
  size_t general_size = 0;
  size_t embedding_rows = 0;
  std::vector<size_t> type_sizes;  // |V_j|, j = 1..K

  Tensor embeddings;  // embedding_rows x embed_dim
  DirectionParams fwd;
  DirectionParams bwd;   // bidirectional mode only
  Tensor type_emb;       // (K+1) x type_dim
  Tensor W_ctx_fused;    // type_dim x 2*embed_dim, bidirectional posterior
  std::vector<Tensor> W_p;   // j = 1..K (index j-1): |V_j| x embed_dim
  std::vector<Tensor> bias;  // j = 0..K; bias[0] over V_g

  static ModelParams create(const ModelConfig& cfg, const Vocabulary& vocab, Rng& rng);

  // Type indices with nonempty vocabularies (0 always active).
  std::vector<size_t> active_types() const;

  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  size_t parameter_count() const;
};

// Named gradient accumulators mirroring ModelParams.
struct Gradients {
  std::map<std::string, Tensor> by_name;
  static Gradients like(const ModelParams& p);
  void zero();
  double squared_norm() const;
};

// Per-sequence dropout masks (inverse-keep scaled). Absent plan = eval mode.
struct DropoutConfig {
  double wdrop = 0.0;     // recurrent weight DropConnect
  double dropouth = 0.3;  // locked, between LSTM layers
  double dropouto = 0.4;  // locked, final projected output
  double dropoute = 0.1;  // Bernoulli embedding rows
  double dropouti = 0.65; // locked, embedding input
};
struct DropoutPlan {
  std::map<size_t, double> emb_row_keep;
  Tensor emb_locked;
  std::vector<Tensor> layer_masks_fwd, layer_masks_bwd;
  Tensor out_mask_fwd, out_mask_bwd;
  std::vector<Tensor> wdrop_fwd, wdrop_bwd;
  bool has_wdrop = false;
};
DropoutPlan make_dropout_plan(const ModelParams& params, const DropoutConfig& cfg,
                              const EncodedSentence& sent, Rng& rng);

// Parameter leaves registered on a tape. Gradient sinks are optional.
struct ParamVars {
  VarId embeddings;
  struct Dir {
    std::vector<std::array<VarId, 3>> layers;  // Wx, Wh, b
    VarId W_out, W_ctx;
  } fwd, bwd;
  VarId type_emb, W_ctx_fused;
  std::vector<VarId> W_p, bias;
};
ParamVars register_params(Tape& tape, const ModelParams& params, Gradients* grads,
                          const DropoutPlan* plan);

// log P(tau | h) over the active types.
VarId type_log_posterior(Tape& tape, const ModelParams& params, const ParamVars& pv,
                         VarId W_ctx, VarId hidden);

// Expected type embedding under the posterior (feedback input, defined for
// the forward/uni head; callers pass the matching posterior).
VarId expected_type_embedding(Tape& tape, const ModelParams& params, const ParamVars& pv,
                              VarId log_posterior);

// log P(target | tau, h) summed into the mixture with the posterior:
// log P(target | h) = logsumexp_j [ log P(tau=j|.) + log P(target | tau=j, h) ].
VarId mixture_target_logprob(Tape& tape, const ModelParams& params, const ParamVars& pv,
                             VarId h_word, VarId log_posterior,
                             const EncodedSentence& sent, size_t target_pos);

struct ForwardResult {
  // One entry per scored target: uni targets are positions 1..n-1, bi
  // targets the n-2 interior positions.
  std::vector<size_t> target_positions;
  std::vector<VarId> target_logprob;
  std::vector<VarId> log_posterior;  // posterior used for each target, active types
  // Final-layer activations for the AR/TAR penalties, per direction.
  std::vector<VarId> raw_out_fwd, drop_out_fwd;
  std::vector<VarId> raw_out_bwd, drop_out_bwd;
};

ForwardResult forward_uni(Tape& tape, const ModelParams& params, const ParamVars& pv,
                          const EncodedSentence& sent, const DropoutPlan* plan);
// Requires sent.size() >= 3; scores the n-2 interior positions.
ForwardResult forward_bi(Tape& tape, const ModelParams& params, const ParamVars& pv,
                         const EncodedSentence& sent, const DropoutPlan* plan);

ForwardResult forward(Tape& tape, const ModelParams& params, const ParamVars& pv,
                      const EncodedSentence& sent, const DropoutPlan* plan);

// Posterior over all K+1 types (inactive types get probability 0), computed
// from a tape posterior over active types.
std::vector<double> full_posterior(const Tape& tape, const ModelParams& params,
                                   VarId log_posterior);

// Full mixture distribution at one context, computed with plain kernel
// arithmetic (independent of the tape loss path).
struct MixtureDistribution {
  std::vector<double> type_posterior;            // K+1
  std::vector<std::vector<double>> log_word;     // per type; empty if inactive
  double log_prob(size_t type_j, size_t word_idx) const;
  double total_probability() const;  // over all (type, word) pairs
};
MixtureDistribution mixture_from_hidden(const ModelParams& params, const Tensor& h_word,
                                        const Tensor& h_type, const Tensor& W_ctx);

}  // namespace kalm
