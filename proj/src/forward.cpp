#include "gapl/forward.hpp"

#include <cmath>

#include "gapl/stream_contextual.hpp"
#include "gapl/stream_gram.hpp"

namespace gapl {

ParamLeaves ParamLeaves::put(Tape& t, const ModelParams& p,
                             bool requires_grad) {
  ParamLeaves pl;
  pl.w_learn = t.leaf(p.w_learn, requires_grad);
  pl.gate_w1 = t.leaf(p.gate.w1, requires_grad);
  pl.gate_b1 = t.leaf(p.gate.b1, requires_grad);
  pl.gate_w2 = t.leaf(p.gate.w2, requires_grad);
  pl.gate_b2 = t.leaf(p.gate.b2, requires_grad);
  pl.local.reserve(p.local_signals.size());
  for (const Tensor& s : p.local_signals)
    pl.local.push_back(t.leaf(s, requires_grad));
  pl.attn_wq = t.leaf(p.attn_wq, requires_grad);
  pl.attn_wk = t.leaf(p.attn_wk, requires_grad);
  pl.attn_wv = t.leaf(p.attn_wv, requires_grad);
  pl.ctx_w1 = t.leaf(p.ctx_net.w1, requires_grad);
  pl.ctx_b1 = t.leaf(p.ctx_net.b1, requires_grad);
  pl.ctx_w2 = t.leaf(p.ctx_net.w2, requires_grad);
  pl.ctx_b2 = t.leaf(p.ctx_net.b2, requires_grad);
  pl.fus_w1 = t.leaf(p.fusion_net.w1, requires_grad);
  pl.fus_b1 = t.leaf(p.fusion_net.b1, requires_grad);
  pl.fus_w2 = t.leaf(p.fusion_net.w2, requires_grad);
  pl.fus_b2 = t.leaf(p.fusion_net.b2, requires_grad);
  return pl;
}

std::vector<std::pair<std::string, Value>> ParamLeaves::named() const {
  std::vector<std::pair<std::string, Value>> out;
  out.emplace_back("w_learn", w_learn);
  out.emplace_back("gate.w1", gate_w1);
  out.emplace_back("gate.b1", gate_b1);
  out.emplace_back("gate.w2", gate_w2);
  out.emplace_back("gate.b2", gate_b2);
  for (std::size_t k = 0; k < local.size(); ++k)
    out.emplace_back("local." + std::to_string(k), local[k]);
  out.emplace_back("attn.wq", attn_wq);
  out.emplace_back("attn.wk", attn_wk);
  out.emplace_back("attn.wv", attn_wv);
  out.emplace_back("ctx.w1", ctx_w1);
  out.emplace_back("ctx.b1", ctx_b1);
  out.emplace_back("ctx.w2", ctx_w2);
  out.emplace_back("ctx.b2", ctx_b2);
  out.emplace_back("fusion.w1", fus_w1);
  out.emplace_back("fusion.b1", fus_b1);
  out.emplace_back("fusion.w2", fus_w2);
  out.emplace_back("fusion.b2", fus_b2);
  return out;
}

Value mlp2_vec(Tape& t, Value w1, Value b1, Value w2, Value b2, Value x) {
  Value h = t.relu(t.add(t.matvec(w1, x), b1));
  return t.add(t.matvec(w2, h), b2);
}

Value mlp2_rows(Tape& t, Value w1, Value b1, Value w2, Value b2, Value rows) {
  Value h = t.relu(t.add_rowvec(t.matmul(rows, t.transpose(w1)), b1));
  return t.add_rowvec(t.matmul(h, t.transpose(w2)), b2);
}

Value text_features(Tape& t, Value w_learn, Value w_fixed, double alpha,
                    TextMode mode,
                    const std::vector<double>& alpha_per_class) {
  if (mode == TextMode::kTrain) return w_learn;
  if (alpha_per_class.empty()) {
    return t.add(t.scale(w_learn, alpha), t.scale(w_fixed, 1.0 - alpha));
  }
  std::size_t m = t.value(w_learn).rows();
  check_contract(alpha_per_class.size() == m,
                 "text_features: per-class alpha length mismatch");
  Tensor a({m});
  Tensor one_minus({m});
  for (std::size_t c = 0; c < m; ++c) {
    a[c] = alpha_per_class[c];
    one_minus[c] = 1.0 - alpha_per_class[c];
  }
  return t.add(t.mul_colvec(w_learn, t.constant(std::move(a))),
               t.mul_colvec(w_fixed, t.constant(std::move(one_minus))));
}

namespace detail {

Value ctx_anchor_value(Tape& t, Value w_text, Value attn_wq, Value attn_wk,
                       Value attn_wv, Value local_k, Value ctx_w1,
                       Value ctx_b1, Value ctx_w2, Value ctx_b2) {
  std::size_t d = t.value(w_text).cols();
  Value queries = t.matmul(w_text, t.transpose(attn_wq));      // [M x d]
  Value keys = t.matmul(local_k, t.transpose(attn_wk));        // [P x d]
  Value vals = t.matmul(local_k, t.transpose(attn_wv));        // [P x d]
  Value scores = t.matmul(queries, t.transpose(keys));         // [M x P]
  Value attn = t.softmax_rows(scores, std::sqrt(double(d)));
  Value attended = t.matmul(attn, vals);                       // [M x d]
  Value residual = mlp2_rows(t, ctx_w1, ctx_b1, ctx_w2, ctx_b2, attended);
  return t.add(w_text, residual);
}

}  // namespace detail

SampleGraph build_forward(Tape& t, const ParamLeaves& pl,
                          const TrainConfig& cfg, const Tensor& w_fixed,
                          const FeatureBundle& x, const ForwardOptions& opt) {
  const StreamSet& active = cfg.streams;
  check_contract(active.count() >= 1, "build_forward: no active stream");
  std::size_t d = w_fixed.cols();
  std::size_t n_patches = x.F.rows();

  SampleGraph g;
  g.w_fixed_leaf = t.constant(w_fixed);
  Value f_leaf = t.constant(x.f);
  g.w_text = text_features(t, pl.w_learn, g.w_fixed_leaf, cfg.alpha, opt.mode,
                           opt.alpha_per_class);

  const std::vector<std::uint8_t>& mask = opt.class_mask;

  if (active.global) {
    g.z_global = t.scale(t.cosine_rows(g.w_text, f_leaf), 1.0 / cfg.tau);
    g.p_global = t.softmax_masked(g.z_global, 1.0, mask);
  }

  if (active.gram) {
    GramDescriptor desc =
        gram_descriptor(x.F, cfg.descriptor_mode, cfg.full_gram_limit);
    Value gate_in = t.constant(desc.gate_input(cfg.epsilon));
    g.gamma = t.sigmoid(
        mlp2_vec(t, pl.gate_w1, pl.gate_b1, pl.gate_w2, pl.gate_b2, gate_in));
    Value anchors = t.add(g.w_text, t.mul_rowvec(g.w_text, g.gamma));
    g.z_gram = t.scale(t.cosine_rows(anchors, f_leaf), 1.0 / cfg.tau);
    g.p_gram = t.softmax_masked(g.z_gram, 1.0, mask);
  }

  if (active.ctx) {
    Value F_leaf = t.constant(x.F);
    check_contract(pl.local.size() == cfg.K,
                   "build_forward: local signal count != K");
    Value p_acc;
    for (std::uint32_t k = 0; k < cfg.K; ++k) {
      Value anchors_k = detail::ctx_anchor_value(
          t, g.w_text, pl.attn_wq, pl.attn_wk, pl.attn_wv, pl.local[k],
          pl.ctx_w1, pl.ctx_b1, pl.ctx_w2, pl.ctx_b2);
      Value smap = t.cosine_matrix(anchors_k, F_leaf);
      Value sbar = t.topk_mean_rows(smap, ctx_pool_size(k + 1, n_patches));
      g.sbar.push_back(sbar);
      Value p_k =
          t.softmax_masked(t.scale(sbar, 1.0 / cfg.tau), 1.0, mask);
      p_acc = p_acc.valid() ? t.add(p_acc, p_k) : p_k;
    }
    g.p_ctx = t.scale(p_acc, 1.0 / double(cfg.K));
    g.z_ctx = t.log_guard(g.p_ctx);
  }

  // Input-adaptive branch fusion over the active streams.
  Value f_hat = t.l2_normalize(f_leaf);
  Value gamma_hat = active.gram ? t.l2_normalize(g.gamma)
                                : t.constant(Tensor({d}));
  Value s = t.concat(f_hat, gamma_hat);
  Value logits3 =
      mlp2_vec(t, pl.fus_w1, pl.fus_b1, pl.fus_w2, pl.fus_b2, s);
  std::vector<std::uint8_t> stream_mask = {
      static_cast<std::uint8_t>(active.global ? 1 : 0),
      static_cast<std::uint8_t>(active.gram ? 1 : 0),
      static_cast<std::uint8_t>(active.ctx ? 1 : 0)};
  g.w_branch = t.softmax_masked(logits3, cfg.T_bw, stream_mask);

  Value fused_acc;
  auto add_term = [&](Value z, double temp, std::size_t slot) {
    Value term = t.scale_by_elem(t.scale(z, 1.0 / temp), g.w_branch, slot);
    fused_acc = fused_acc.valid() ? t.add(fused_acc, term) : term;
  };
  if (active.global) add_term(g.z_global, cfg.T_global, 0);
  if (active.gram) add_term(g.z_gram, cfg.T_gram, 1);
  if (active.ctx) add_term(g.z_ctx, cfg.T_ctx, 2);
  g.z_fused = fused_acc;
  g.p_fused = t.softmax_masked(g.z_fused, 1.0, mask);
  return g;
}

LossGraph build_loss(Tape& t, const SampleGraph& g, std::size_t label,
                     const ParamLeaves& pl, const TrainConfig& cfg,
                     const std::vector<std::uint8_t>& txt_row_mask) {
  LossGraph out;
  Value cls_acc;
  auto add_ce = [&](Value p) {
    Value ce = t.cross_entropy(p, label);
    cls_acc = cls_acc.valid() ? t.add(cls_acc, ce) : ce;
  };
  if (cfg.streams.global) add_ce(g.p_global);
  if (cfg.streams.gram) add_ce(g.p_gram);
  if (cfg.streams.ctx) add_ce(g.p_ctx);
  out.cls = cls_acc;
  out.fused = t.cross_entropy(g.p_fused, label);

  Value diff = t.abs(t.sub(pl.w_learn, g.w_fixed_leaf));
  if (txt_row_mask.empty()) {
    out.txt = t.mean(diff);
  } else {
    std::size_t m = t.value(diff).rows(), d = t.value(diff).cols();
    check_contract(txt_row_mask.size() == m,
                   "build_loss: text row mask length mismatch");
    Tensor rows({m});
    std::size_t count = 0;
    for (std::size_t c = 0; c < m; ++c) {
      rows[c] = txt_row_mask[c] ? 1.0 : 0.0;
      count += txt_row_mask[c] ? 1 : 0;
    }
    check_contract(count > 0, "build_loss: text row mask selects no rows");
    out.txt = t.scale(t.sum(t.mul_colvec(diff, t.constant(std::move(rows)))),
                      1.0 / double(count * d));
  }
  // No trainable image-side parameters exist in this configuration.
  out.img = t.constant(Tensor::scalar(0.0));

  Value reg = t.add(t.scale(out.txt, cfg.lambda_txt),
                    t.scale(out.img, cfg.lambda_img));
  out.total =
      t.add(t.add(out.cls, t.scale(out.fused, cfg.lambda_fused)), reg);
  return out;
}

std::size_t argmax_masked(const Tensor& v,
                          const std::vector<std::uint8_t>& mask) {
  check_contract(mask.empty() || mask.size() == v.numel(),
                 "argmax_masked: mask length mismatch");
  std::size_t best = v.numel();
  for (std::size_t i = 0; i < v.numel(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (best == v.numel() || v[i] > v[best]) best = i;
  }
  check_contract(best < v.numel(), "argmax_masked: empty selection");
  return best;
}

}  // namespace gapl
