// Plain-tensor entry points for the three prediction streams and the
// fusion head. Each one runs the same graph the trainer uses on a local
// tape, so there is a single numeric path through the model.

#include <cmath>

#include "gapl/forward.hpp"
#include "gapl/fusion.hpp"
#include "gapl/kernels.hpp"
#include "gapl/stream_contextual.hpp"
#include "gapl/stream_global.hpp"
#include "gapl/stream_gram.hpp"

namespace gapl {

// ---- global invariant stream ---------------------------------------------

void ClassTextBank::validate() const {
  check_contract(w_fixed.rank() == 2 && w_learn.rank() == 2 &&
                     w_fixed.same_shape(w_learn),
                 "ClassTextBank: bank shapes disagree");
  check_contract(alpha >= 0.0 && alpha <= 1.0,
                 "ClassTextBank: alpha in [0,1]");
}

Tensor fuse_text(const ClassTextBank& bank, TextMode mode) {
  bank.validate();
  Tape t;
  Value learn = t.constant(bank.w_learn);
  Value fixed = t.constant(bank.w_fixed);
  return t.value(text_features(t, learn, fixed, bank.alpha, mode, {}));
}

Tensor global_logits(const Tensor& f, const Tensor& w, double tau) {
  check_contract(tau > 0.0, "global_logits: tau must be positive");
  Tape t;
  return t.value(
      t.scale(t.cosine_rows(t.constant(w), t.constant(f)), 1.0 / tau));
}

Tensor global_probs(const Tensor& f, const Tensor& w, double tau) {
  Tape t;
  Value z = t.scale(t.cosine_rows(t.constant(w), t.constant(f)), 1.0 / tau);
  return t.value(t.softmax(z, 1.0));
}

// ---- gram-anchored stream --------------------------------------------------

GramDescriptor gram_descriptor(const Tensor& F, DescriptorMode mode,
                               std::uint32_t full_limit) {
  check_contract(F.rank() == 2, "gram_descriptor: patch tokens must be N x d");
  std::size_t n = F.rows(), d = F.cols();
  GramDescriptor out;
  out.mode = mode;
  out.g_diag = Tensor({d});
  kernels::gram_diag(n, d, F.data(), out.g_diag.data());
  if (mode == DescriptorMode::kDiagVar) {
    out.var = Tensor({d});
    Tensor mean_scratch({d});
    kernels::gram_var(n, d, F.data(), mean_scratch.data(), out.var.data());
  } else if (mode == DescriptorMode::kFull) {
    if (d > full_limit)
      throw ResourceGuardError(
          "full Gram descriptor requires d <= " + std::to_string(full_limit) +
          ", got d = " + std::to_string(d));
    out.g_full = Tensor({d * d});
    kernels::matmul_tn(n, d, d, F.data(), F.data(), out.g_full.data());
    double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < out.g_full.numel(); ++i) out.g_full[i] *= inv_n;
  }
  return out;
}

Tensor GramDescriptor::gate_input(double eps) const {
  switch (mode) {
    case DescriptorMode::kDiag: {
      Tensor out({g_diag.numel()});
      for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = std::log(g_diag[i] + eps);
      return out;
    }
    case DescriptorMode::kDiagVar: {
      std::size_t d = g_diag.numel();
      Tensor out({2 * d});
      for (std::size_t i = 0; i < d; ++i) out[i] = std::log(g_diag[i] + eps);
      for (std::size_t i = 0; i < d; ++i)
        out[d + i] = std::log(var[i] + eps);
      return out;
    }
    case DescriptorMode::kFull: {
      // Off-diagonal entries may be negative; fold the sign out of the log.
      Tensor out({g_full.numel()});
      for (std::size_t i = 0; i < out.numel(); ++i) {
        double v = g_full[i];
        double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        out[i] = sign * std::log(std::fabs(v) + eps);
      }
      return out;
    }
  }
  throw ContractError("gate_input: unknown descriptor mode");
}

Tensor style_gate(const GramDescriptor& desc, const MlpParams& gate,
                  double eps) {
  Tensor input = desc.gate_input(eps);
  check_contract(gate.w1.cols() == input.numel(),
                 "style_gate: descriptor mode does not match gate input "
                 "extent (" +
                     std::to_string(gate.w1.cols()) + " vs " +
                     std::to_string(input.numel()) + ")");
  Tape t;
  Value in = t.constant(std::move(input));
  Value out = t.sigmoid(mlp2_vec(t, t.constant(gate.w1), t.constant(gate.b1),
                                 t.constant(gate.w2), t.constant(gate.b2),
                                 in));
  return t.value(out);
}

Tensor style_anchor(const Tensor& w, const Tensor& gamma) {
  Tape t;
  Value wv = t.constant(w);
  Value gv = t.constant(gamma);
  return t.value(t.add(wv, t.mul_rowvec(wv, gv)));
}

Tensor gram_logits(const Tensor& f, const Tensor& anchors, double tau) {
  check_contract(tau > 0.0, "gram_logits: tau must be positive");
  Tape t;
  return t.value(
      t.scale(t.cosine_rows(t.constant(anchors), t.constant(f)), 1.0 / tau));
}

Tensor gram_probs(const Tensor& f, const Tensor& anchors, double tau) {
  Tape t;
  Value z =
      t.scale(t.cosine_rows(t.constant(anchors), t.constant(f)), 1.0 / tau);
  return t.value(t.softmax(z, 1.0));
}

// ---- contextual-anchored stream -------------------------------------------

std::size_t ctx_pool_size(std::size_t k, std::size_t patches) {
  return std::min(k * 10, patches);
}

Tensor contextual_anchor(const ModelParams& params, const Tensor& w,
                         std::size_t k) {
  check_contract(k >= 1 && k <= params.local_signals.size(),
                 "contextual_anchor: branch index out of range");
  Tape t;
  Value out = detail::ctx_anchor_value(
      t, t.constant(w), t.constant(params.attn_wq), t.constant(params.attn_wk),
      t.constant(params.attn_wv), t.constant(params.local_signals[k - 1]),
      t.constant(params.ctx_net.w1), t.constant(params.ctx_net.b1),
      t.constant(params.ctx_net.w2), t.constant(params.ctx_net.b2));
  return t.value(out);
}

Tensor score_map(const Tensor& anchors, const Tensor& F) {
  Tape t;
  return t.value(t.cosine_matrix(t.constant(anchors), t.constant(F)));
}

Tensor ctx_branch_scores(const Tensor& map, std::size_t pool) {
  Tape t;
  return t.value(t.topk_mean_rows(t.constant(map), pool));
}

Tensor ctx_probs(const std::vector<Tensor>& branch_scores, double tau) {
  check_contract(!branch_scores.empty(), "ctx_probs: K must be >= 1");
  check_contract(tau > 0.0, "ctx_probs: tau must be positive");
  Tape t;
  Value acc;
  for (const Tensor& sbar : branch_scores) {
    Value p = t.softmax(t.scale(t.constant(sbar), 1.0 / tau), 1.0);
    acc = acc.valid() ? t.add(acc, p) : p;
  }
  return t.value(t.scale(acc, 1.0 / double(branch_scores.size())));
}

// ---- input-adaptive fusion and losses ---------------------------------------

Tensor fusion_descriptor(const Tensor& f, const Tensor& gamma) {
  Tape t;
  return t.value(
      t.concat(t.l2_normalize(t.constant(f)), t.l2_normalize(t.constant(gamma))));
}

Tensor branch_weights(const Tensor& s, const MlpParams& net, double t_bw,
                      const StreamSet& active) {
  Tape t;
  Value logits = mlp2_vec(t, t.constant(net.w1), t.constant(net.b1),
                          t.constant(net.w2), t.constant(net.b2),
                          t.constant(s));
  std::vector<std::uint8_t> mask = {
      static_cast<std::uint8_t>(active.global ? 1 : 0),
      static_cast<std::uint8_t>(active.gram ? 1 : 0),
      static_cast<std::uint8_t>(active.ctx ? 1 : 0)};
  return t.value(t.softmax_masked(logits, t_bw, mask));
}

FusedPrediction fuse(const Tensor& z_global, const Tensor& z_gram,
                     const Tensor& z_ctx, const Tensor& w_branch,
                     double t_global, double t_gram, double t_ctx,
                     const StreamSet& active) {
  Tape t;
  Value wb = t.constant(w_branch);
  Value acc;
  auto add_term = [&](const Tensor& z, double temp, std::size_t slot) {
    Value term = t.scale_by_elem(t.scale(t.constant(z), 1.0 / temp), wb, slot);
    acc = acc.valid() ? t.add(acc, term) : term;
  };
  if (active.global) add_term(z_global, t_global, 0);
  if (active.gram) add_term(z_gram, t_gram, 1);
  if (active.ctx) add_term(z_ctx, t_ctx, 2);
  check_contract(acc.valid(), "fuse: no active stream");
  FusedPrediction out;
  out.z_fused = t.value(acc);
  out.p_fused = t.value(t.softmax(acc, 1.0));
  return out;
}

LossBreakdown compute_losses(const std::vector<const Tensor*>& stream_probs,
                             const Tensor& p_fused, std::size_t label,
                             const Tensor& w_learn, const Tensor& w_fixed,
                             double lambda_fused, double lambda_txt,
                             double lambda_img) {
  Tape t;
  Value cls_acc;
  for (const Tensor* p : stream_probs) {
    Value ce = t.cross_entropy(t.constant(*p), label);
    cls_acc = cls_acc.valid() ? t.add(cls_acc, ce) : ce;
  }
  check_contract(cls_acc.valid(), "compute_losses: no stream probabilities");
  Value fused_ce = t.cross_entropy(t.constant(p_fused), label);
  Value txt =
      t.mean(t.abs(t.sub(t.constant(w_learn), t.constant(w_fixed))));
  Value img = t.constant(Tensor::scalar(0.0));
  Value total = t.add(
      t.add(cls_acc, t.scale(fused_ce, lambda_fused)),
      t.add(t.scale(txt, lambda_txt), t.scale(img, lambda_img)));
  LossBreakdown out;
  out.cls = t.value(cls_acc).item();
  out.fused = t.value(fused_ce).item();
  out.txt = t.value(txt).item();
  out.img = t.value(img).item();
  out.total = t.value(total).item();
  return out;
}

}  // namespace gapl
