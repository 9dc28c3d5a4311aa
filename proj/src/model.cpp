#include "kalm/model.hpp"

#include <cmath>

#include "kalm/errors.hpp"
#include "kalm/kernels.hpp"

namespace kalm {

static void init_uniform(Tensor& t, Rng& rng) {
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-0.1, 0.1);
}

static LstmLayerParams make_layer(size_t input, size_t hidden, Rng& rng) {
  LstmLayerParams l;
  l.Wx = Tensor::zeros(4 * hidden, input);
  l.Wh = Tensor::zeros(4 * hidden, hidden);
  l.b = Tensor::zeros(4 * hidden);
  init_uniform(l.Wx, rng);
  init_uniform(l.Wh, rng);
  return l;  // biases stay 0
}

static DirectionParams make_direction(const ModelConfig& cfg, Rng& rng) {
  DirectionParams d;
  for (size_t l = 0; l < cfg.layers; ++l) {
    size_t input = (l == 0) ? cfg.input_dim() : cfg.hidden_dim;
    d.layers.push_back(make_layer(input, cfg.hidden_dim, rng));
  }
  d.W_out = Tensor::zeros(cfg.embed_dim, cfg.hidden_dim);
  d.W_ctx = Tensor::zeros(cfg.type_dim, cfg.embed_dim);
  init_uniform(d.W_out, rng);
  init_uniform(d.W_ctx, rng);
  return d;
}

ModelParams ModelParams::create(const ModelConfig& cfg, const Vocabulary& vocab, Rng& rng) {
  ModelParams p;
  p.cfg = cfg;
  p.K = vocab.num_types();
  p.general_size = vocab.general.size();
  p.embedding_rows = vocab.embedding_rows();
  for (const auto& tv : vocab.type_vocabs) p.type_sizes.push_back(tv.size());

  p.embeddings = Tensor::zeros(p.embedding_rows, cfg.embed_dim);
  init_uniform(p.embeddings, rng);
  p.fwd = make_direction(cfg, rng);
  if (cfg.bidirectional) p.bwd = make_direction(cfg, rng);
  p.type_emb = Tensor::zeros(p.K + 1, cfg.type_dim);
  init_uniform(p.type_emb, rng);
  if (cfg.bidirectional) {
    p.W_ctx_fused = Tensor::zeros(cfg.type_dim, 2 * cfg.embed_dim);
    init_uniform(p.W_ctx_fused, rng);
  }
  p.bias.push_back(Tensor::zeros(p.general_size));
  for (size_t j = 0; j < p.K; ++j) {
    size_t vj = p.type_sizes[j];
    if (vj > 0) {
      p.W_p.push_back(Tensor::zeros(vj, cfg.embed_dim));
      init_uniform(p.W_p.back(), rng);
      p.bias.push_back(Tensor::zeros(vj));
    } else {
      p.W_p.emplace_back();
      p.bias.emplace_back();
    }
  }
  return p;
}

std::vector<size_t> ModelParams::active_types() const {
  std::vector<size_t> a{0};
  for (size_t j = 0; j < K; ++j)
    if (type_sizes[j] > 0) a.push_back(j + 1);
  return a;
}

template <typename P, typename Fn>
static void for_each_impl(P& p, const Fn& fn) {
  fn("embeddings", p.embeddings);
  auto dir = [&](const std::string& prefix, auto& d) {
    for (size_t l = 0; l < d.layers.size(); ++l) {
      fn(prefix + ".l" + std::to_string(l) + ".Wx", d.layers[l].Wx);
      fn(prefix + ".l" + std::to_string(l) + ".Wh", d.layers[l].Wh);
      fn(prefix + ".l" + std::to_string(l) + ".b", d.layers[l].b);
    }
    fn(prefix + ".W_out", d.W_out);
    fn(prefix + ".W_ctx", d.W_ctx);
  };
  dir("fwd", p.fwd);
  if (p.cfg.bidirectional) dir("bwd", p.bwd);
  fn("type_emb", p.type_emb);
  if (p.cfg.bidirectional) fn("W_ctx_fused", p.W_ctx_fused);
  for (size_t j = 0; j < p.K; ++j)
    if (p.type_sizes[j] > 0) fn("W_p." + std::to_string(j + 1), p.W_p[j]);
  for (size_t j = 0; j <= p.K; ++j)
    if (p.bias[j].size() > 0) fn("bias." + std::to_string(j), p.bias[j]);
}

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  for_each_impl(*this, fn);
}
void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  for_each_impl(*this, fn);
}

size_t ModelParams::parameter_count() const {
  size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

Gradients Gradients::like(const ModelParams& p) {
  Gradients g;
  p.for_each([&](const std::string& name, const Tensor& t) {
    g.by_name.emplace(name, Tensor(t.shape(), 0.0));
  });
  return g;
}

void Gradients::zero() {
  for (auto& [name, t] : by_name)
    for (size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& [name, t] : by_name)
    for (size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return s;
}

static Tensor locked_mask(size_t n, double drop, Rng& rng) {
  Tensor m(std::vector<size_t>{n}, 0.0);
  if (drop <= 0.0) {
    for (size_t i = 0; i < n; ++i) m[i] = 1.0;
    return m;
  }
  double keep = 1.0 - drop;
  for (size_t i = 0; i < n; ++i) m[i] = rng.bernoulli(drop) ? 0.0 : 1.0 / keep;
  return m;
}

DropoutPlan make_dropout_plan(const ModelParams& params, const DropoutConfig& cfg,
                              const EncodedSentence& sent, Rng& rng) {
  DropoutPlan plan;
  const ModelConfig& mc = params.cfg;
  for (size_t r : sent.rows) {
    if (plan.emb_row_keep.count(r)) continue;
    double f = 1.0;
    if (cfg.dropoute > 0.0)
      f = rng.bernoulli(cfg.dropoute) ? 0.0 : 1.0 / (1.0 - cfg.dropoute);
    plan.emb_row_keep.emplace(r, f);
  }
  plan.emb_locked = locked_mask(mc.embed_dim, cfg.dropouti, rng);
  auto direction_masks = [&](std::vector<Tensor>& layer_masks, Tensor& out_mask,
                             std::vector<Tensor>& wdrop_masks) {
    for (size_t l = 0; l + 1 < mc.layers; ++l)
      layer_masks.push_back(locked_mask(mc.hidden_dim, cfg.dropouth, rng));
    out_mask = locked_mask(mc.embed_dim, cfg.dropouto, rng);
    if (cfg.wdrop > 0.0) {
      for (size_t l = 0; l < mc.layers; ++l) {
        Tensor m(std::vector<size_t>{4 * mc.hidden_dim, mc.hidden_dim}, 0.0);
        double keep = 1.0 - cfg.wdrop;
        for (size_t i = 0; i < m.size(); ++i)
          m[i] = rng.bernoulli(cfg.wdrop) ? 0.0 : 1.0 / keep;
        wdrop_masks.push_back(std::move(m));
      }
      plan.has_wdrop = true;
    }
  };
  direction_masks(plan.layer_masks_fwd, plan.out_mask_fwd, plan.wdrop_fwd);
  if (mc.bidirectional)
    direction_masks(plan.layer_masks_bwd, plan.out_mask_bwd, plan.wdrop_bwd);
  return plan;
}

ParamVars register_params(Tape& tape, const ModelParams& params, Gradients* grads,
                          const DropoutPlan* plan) {
  auto sink = [&](const std::string& name) -> Tensor* {
    return grads ? &grads->by_name.at(name) : nullptr;
  };
  ParamVars pv;
  pv.embeddings = tape.param(&params.embeddings, sink("embeddings"));
  auto dir = [&](const std::string& prefix, const DirectionParams& d,
                 const std::vector<Tensor>* wdrop) {
    ParamVars::Dir out;
    for (size_t l = 0; l < d.layers.size(); ++l) {
      std::string base = prefix + ".l" + std::to_string(l) + ".";
      VarId wx = tape.param(&d.layers[l].Wx, sink(base + "Wx"));
      VarId wh = tape.param(&d.layers[l].Wh, sink(base + "Wh"));
      if (wdrop) wh = tape.cmul(wh, (*wdrop)[l]);
      VarId b = tape.param(&d.layers[l].b, sink(base + "b"));
      out.layers.push_back({wx, wh, b});
    }
    out.W_out = tape.param(&d.W_out, sink(prefix + ".W_out"));
    out.W_ctx = tape.param(&d.W_ctx, sink(prefix + ".W_ctx"));
    return out;
  };
  const std::vector<Tensor>* wf = (plan && plan->has_wdrop) ? &plan->wdrop_fwd : nullptr;
  pv.fwd = dir("fwd", params.fwd, wf);
  if (params.cfg.bidirectional) {
    const std::vector<Tensor>* wb = (plan && plan->has_wdrop) ? &plan->wdrop_bwd : nullptr;
    pv.bwd = dir("bwd", params.bwd, wb);
  }
  pv.type_emb = tape.param(&params.type_emb, sink("type_emb"));
  if (params.cfg.bidirectional)
    pv.W_ctx_fused = tape.param(&params.W_ctx_fused, sink("W_ctx_fused"));
  for (size_t j = 0; j < params.K; ++j)
    pv.W_p.push_back(params.type_sizes[j] > 0
                         ? tape.param(&params.W_p[j], sink("W_p." + std::to_string(j + 1)))
                         : -1);
  for (size_t j = 0; j <= params.K; ++j)
    pv.bias.push_back(params.bias[j].size() > 0
                          ? tape.param(&params.bias[j], sink("bias." + std::to_string(j)))
                          : -1);
  return pv;
}

VarId type_log_posterior(Tape& tape, const ModelParams& params, const ParamVars& pv,
                         VarId W_ctx, VarId hidden) {
  VarId z = tape.matvec(W_ctx, hidden);
  VarId logits = tape.matvec(pv.type_emb, z);  // K+1
  auto active = params.active_types();
  if (active.size() == params.K + 1) return tape.log_softmax(logits);
  std::vector<VarId> picked;
  picked.reserve(active.size());
  for (size_t j : active) picked.push_back(tape.pick(logits, j));
  return tape.log_softmax(tape.stack(picked));
}

VarId expected_type_embedding(Tape& tape, const ModelParams& params, const ParamVars& pv,
                              VarId log_posterior) {
  auto active = params.active_types();
  VarId p = tape.exp(log_posterior);
  VarId nu = -1;
  for (size_t i = 0; i < active.size(); ++i) {
    VarId term = tape.smul(tape.row(pv.type_emb, active[i]), tape.pick(p, i));
    nu = (nu < 0) ? term : tape.add(nu, term);
  }
  return nu;
}

VarId mixture_target_logprob(Tape& tape, const ModelParams& params, const ParamVars& pv,
                             VarId h_word, VarId log_posterior,
                             const EncodedSentence& sent, size_t target_pos) {
  auto active = params.active_types();
  std::vector<VarId> comps;
  // General component: tied decoder over the leading V_g rows.
  {
    VarId logits = tape.add(tape.matvec_rows(pv.embeddings, params.general_size, h_word),
                            pv.bias[0]);
    VarId lp = tape.pick(tape.log_softmax(logits), sent.general_idx[target_pos]);
    comps.push_back(tape.add(tape.pick(log_posterior, 0), lp));
  }
  for (size_t i = 1; i < active.size(); ++i) {
    size_t j = active[i];
    int cand = sent.type_cand[target_pos][j - 1];
    if (cand < 0) continue;
    VarId logits = tape.add(tape.matvec(pv.W_p[j - 1], h_word), pv.bias[j]);
    VarId lp = tape.pick(tape.log_softmax(logits), static_cast<size_t>(cand));
    comps.push_back(tape.add(tape.pick(log_posterior, i), lp));
  }
  return tape.logsumexp(tape.stack(comps));
}

namespace {

struct DirectionRun {
  std::vector<VarId> hproj;  // raw projected output per consumed position
  std::vector<VarId> hdrop;  // with output dropout (== hproj in eval)
};

// Consumes tokens in `order`; outputs are indexed by position in `order`.
DirectionRun run_direction(Tape& tape, const ModelParams& params, const ParamVars& pv,
                           const ParamVars::Dir& dir, VarId dir_W_ctx,
                           const EncodedSentence& sent, const std::vector<size_t>& order,
                           const DropoutPlan* plan, const std::vector<Tensor>* layer_masks,
                           const Tensor* out_mask) {
  const ModelConfig& mc = params.cfg;
  std::vector<VarId> h(mc.layers), c(mc.layers);
  for (size_t l = 0; l < mc.layers; ++l) {
    h[l] = tape.input(Tensor::zeros(mc.hidden_dim));
    c[l] = tape.input(Tensor::zeros(mc.hidden_dim));
  }
  VarId last_log_tp = -1;
  DirectionRun run;
  for (size_t t : order) {
    VarId x = tape.row(pv.embeddings, sent.rows[t]);
    if (plan) {
      double f = plan->emb_row_keep.at(sent.rows[t]);
      if (f != 1.0) x = tape.scale(x, f);
      x = tape.cmul(x, plan->emb_locked);
    }
    if (mc.feedback) {
      if (last_log_tp < 0) {
        VarId zero_h = tape.input(Tensor::zeros(mc.embed_dim));
        last_log_tp = type_log_posterior(tape, params, pv, dir_W_ctx, zero_h);
      }
      x = tape.concat(x, expected_type_embedding(tape, params, pv, last_log_tp));
    }
    VarId inp = x;
    for (size_t l = 0; l < mc.layers; ++l) {
      auto out = lstm_step(tape, dir.layers[l][0], dir.layers[l][1], dir.layers[l][2],
                           h[l], c[l], inp);
      h[l] = out.hidden;
      c[l] = out.cell;
      inp = h[l];
      if (l + 1 < mc.layers && layer_masks) inp = tape.cmul(inp, (*layer_masks)[l]);
    }
    VarId hproj = tape.matvec(dir.W_out, h[mc.layers - 1]);
    VarId hdrop = out_mask ? tape.cmul(hproj, *out_mask) : hproj;
    if (mc.feedback) last_log_tp = type_log_posterior(tape, params, pv, dir_W_ctx, hdrop);
    run.hproj.push_back(hproj);
    run.hdrop.push_back(hdrop);
  }
  return run;
}

}  // namespace

ForwardResult forward_uni(Tape& tape, const ModelParams& params, const ParamVars& pv,
                          const EncodedSentence& sent, const DropoutPlan* plan) {
  const size_t n = sent.size();
  if (n < 2) throw DataError("forward_uni: sentence too short");
  std::vector<size_t> order(n - 1);
  for (size_t t = 0; t + 1 < n; ++t) order[t] = t;
  auto run = run_direction(tape, params, pv, pv.fwd, pv.fwd.W_ctx, sent, order, plan,
                           plan ? &plan->layer_masks_fwd : nullptr,
                           plan ? &plan->out_mask_fwd : nullptr);
  ForwardResult res;
  for (size_t t = 0; t + 1 < n; ++t) {
    VarId log_tp = type_log_posterior(tape, params, pv, pv.fwd.W_ctx, run.hdrop[t]);
    res.target_positions.push_back(t + 1);
    res.log_posterior.push_back(log_tp);
    res.target_logprob.push_back(
        mixture_target_logprob(tape, params, pv, run.hdrop[t], log_tp, sent, t + 1));
  }
  res.raw_out_fwd = run.hproj;
  res.drop_out_fwd = run.hdrop;
  return res;
}

ForwardResult forward_bi(Tape& tape, const ModelParams& params, const ParamVars& pv,
                         const EncodedSentence& sent, const DropoutPlan* plan) {
  const size_t n = sent.size();
  if (n < 3) throw DataError("forward_bi: sentence needs at least one interior position");
  std::vector<size_t> fwd_order(n), bwd_order(n);
  for (size_t t = 0; t < n; ++t) {
    fwd_order[t] = t;
    bwd_order[t] = n - 1 - t;
  }
  auto left = run_direction(tape, params, pv, pv.fwd, pv.fwd.W_ctx, sent, fwd_order, plan,
                            plan ? &plan->layer_masks_fwd : nullptr,
                            plan ? &plan->out_mask_fwd : nullptr);
  auto right = run_direction(tape, params, pv, pv.bwd, pv.bwd.W_ctx, sent, bwd_order, plan,
                             plan ? &plan->layer_masks_bwd : nullptr,
                             plan ? &plan->out_mask_bwd : nullptr);
  // right run is indexed by consumption order; right state after consuming
  // tokens n-1..t lives at index n-1-t.
  ForwardResult res;
  for (size_t t = 1; t + 1 < n; ++t) {
    VarId hl = left.hdrop[t - 1];
    VarId hr = right.hdrop[n - 1 - (t + 1)];
    VarId h_word = tape.add(hl, hr);
    VarId fused = tape.concat(hl, hr);
    VarId log_tp = type_log_posterior(tape, params, pv, pv.W_ctx_fused, fused);
    res.target_positions.push_back(t);
    res.log_posterior.push_back(log_tp);
    res.target_logprob.push_back(
        mixture_target_logprob(tape, params, pv, h_word, log_tp, sent, t));
  }
  res.raw_out_fwd = left.hproj;
  res.drop_out_fwd = left.hdrop;
  res.raw_out_bwd = right.hproj;
  res.drop_out_bwd = right.hdrop;
  return res;
}

ForwardResult forward(Tape& tape, const ModelParams& params, const ParamVars& pv,
                      const EncodedSentence& sent, const DropoutPlan* plan) {
  return params.cfg.bidirectional ? forward_bi(tape, params, pv, sent, plan)
                                  : forward_uni(tape, params, pv, sent, plan);
}

std::vector<double> full_posterior(const Tape& tape, const ModelParams& params,
                                   VarId log_posterior) {
  auto active = params.active_types();
  const Tensor& lp = tape.value(log_posterior);
  std::vector<double> out(params.K + 1, 0.0);
  for (size_t i = 0; i < active.size(); ++i) out[active[i]] = std::exp(lp[i]);
  return out;
}

double MixtureDistribution::log_prob(size_t type_j, size_t word_idx) const {
  return std::log(type_posterior[type_j]) + log_word[type_j][word_idx];
}

double MixtureDistribution::total_probability() const {
  double total = 0.0;
  for (size_t j = 0; j < type_posterior.size(); ++j) {
    if (log_word[j].empty()) continue;
    double s = 0.0;
    for (double lw : log_word[j]) s += std::exp(lw);
    total += type_posterior[j] * s;
  }
  return total;
}

// Reference-path log-softmax used by the plain-arithmetic mixture.
static std::vector<double> log_softmax_ref(std::vector<double> x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  double lse = m + std::log(s);
  for (double& v : x) v -= lse;
  return x;
}

MixtureDistribution mixture_from_hidden(const ModelParams& params, const Tensor& h_word,
                                        const Tensor& h_type, const Tensor& W_ctx) {
  auto active = params.active_types();
  MixtureDistribution mix;
  mix.type_posterior.assign(params.K + 1, 0.0);
  mix.log_word.resize(params.K + 1);

  Tensor z = Tensor::zeros(params.cfg.type_dim);
  kernels::matvec_ref(W_ctx, h_type.data(), z.data());
  Tensor all = Tensor::zeros(params.K + 1);
  kernels::matvec_ref(params.type_emb, z.data(), all.data());
  std::vector<double> logits;
  for (size_t j : active) logits.push_back(all[j]);
  auto ltp = log_softmax_ref(std::move(logits));
  for (size_t i = 0; i < active.size(); ++i)
    mix.type_posterior[active[i]] = std::exp(ltp[i]);

  {
    std::vector<double> gl(params.general_size);
    kernels::matvec_rows_ref(params.embeddings, params.general_size, h_word.data(), gl.data());
    for (size_t i = 0; i < gl.size(); ++i) gl[i] += params.bias[0][i];
    mix.log_word[0] = log_softmax_ref(std::move(gl));
  }
  for (size_t i = 1; i < active.size(); ++i) {
    size_t j = active[i];
    std::vector<double> tl(params.type_sizes[j - 1]);
    kernels::matvec_ref(params.W_p[j - 1], h_word.data(), tl.data());
    for (size_t w = 0; w < tl.size(); ++w) tl[w] += params.bias[j][w];
    mix.log_word[j] = log_softmax_ref(std::move(tl));
  }
  return mix;
}

}  // namespace kalm
