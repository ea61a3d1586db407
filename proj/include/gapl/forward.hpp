#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gapl/config.hpp"
#include "gapl/features.hpp"
#include "gapl/model.hpp"
#include "gapl/tape.hpp"

namespace gapl {

enum class TextMode : std::uint8_t { kTrain, kInfer };

// Parameter tensors registered as gradient leaves on a tape.
struct ParamLeaves {
  Value w_learn;
  Value gate_w1, gate_b1, gate_w2, gate_b2;
  std::vector<Value> local;
  Value attn_wq, attn_wk, attn_wv;
  Value ctx_w1, ctx_b1, ctx_w2, ctx_b2;
  Value fus_w1, fus_b1, fus_w2, fus_b2;

  static ParamLeaves put(Tape& t, const ModelParams& p,
                         bool requires_grad = true);
  std::vector<std::pair<std::string, Value>> named() const;
};

struct ForwardOptions {
  TextMode mode = TextMode::kTrain;
  // Restricts the class space (softmaxes and argmax); empty = all classes.
  std::vector<std::uint8_t> class_mask;
  // Per-class text fusion weight; overrides the scalar alpha at inference
  // (novel classes fall back to the fixed bank with weight 0).
  std::vector<double> alpha_per_class;
};

// One sample's full prediction graph. Values of inactive streams are
// invalid handles.
struct SampleGraph {
  Value w_fixed_leaf;
  Value w_text;              // [M x d] text features used by all streams
  Value gamma;               // [d] style gate (gram stream)
  Value z_global, p_global;  // [M]
  Value z_gram, p_gram;
  std::vector<Value> sbar;   // per-branch pooled scores [M]
  Value z_ctx, p_ctx;
  Value w_branch;            // [3] simplex over (global, gram, ctx)
  Value z_fused, p_fused;    // [M]
};

SampleGraph build_forward(Tape& t, const ParamLeaves& pl,
                          const TrainConfig& cfg, const Tensor& w_fixed,
                          const FeatureBundle& x, const ForwardOptions& opt);

struct LossGraph {
  Value cls, fused, txt, img, total;
};

// Composite objective for one sample. `txt_rows` restricts the text
// regularizer to the first classes listed in the mask (all rows if empty).
LossGraph build_loss(Tape& t, const SampleGraph& g, std::size_t label,
                     const ParamLeaves& pl, const TrainConfig& cfg,
                     const std::vector<std::uint8_t>& txt_row_mask = {});

// Two-layer ReLU perceptron applied to a vector / to matrix rows.
Value mlp2_vec(Tape& t, Value w1, Value b1, Value w2, Value b2, Value x);
Value mlp2_rows(Tape& t, Value w1, Value b1, Value w2, Value b2, Value rows);

// Text features per the train/infer fusion rule, as a tape value.
Value text_features(Tape& t, Value w_learn, Value w_fixed, double alpha,
                    TextMode mode, const std::vector<double>& alpha_per_class);

// Lowest-index argmax restricted to an optional class mask.
std::size_t argmax_masked(const Tensor& v,
                          const std::vector<std::uint8_t>& mask);

namespace detail {
// Contextual anchors for one branch as a graph value (shared by the
// forward builder and the plain per-branch operation).
Value ctx_anchor_value(Tape& t, Value w_text, Value attn_wq, Value attn_wk,
                       Value attn_wv, Value local_k, Value ctx_w1,
                       Value ctx_b1, Value ctx_w2, Value ctx_b2);
}  // namespace detail

}  // namespace gapl
