#pragma once

#include <cstddef>
#include <vector>

#include "gapl/config.hpp"
#include "gapl/model.hpp"
#include "gapl/tensor.hpp"

namespace gapl {

// s(x) = [f / ||f|| ; Gamma / ||Gamma||], always of norm sqrt(2).
Tensor fusion_descriptor(const Tensor& f, const Tensor& gamma);

// softmax(MLP(s) / T_bw) over (global, gram, ctx); inactive streams are
// masked out of the softmax and get weight exactly zero.
Tensor branch_weights(const Tensor& s, const MlpParams& net, double t_bw,
                      const StreamSet& active);

struct FusedPrediction {
  Tensor z_fused;
  Tensor p_fused;
};

// z_fused = sum_m w_m * z_m / T_m over active streams; p = softmax(z_fused).
// Pass empty tensors for inactive streams.
FusedPrediction fuse(const Tensor& z_global, const Tensor& z_gram,
                     const Tensor& z_ctx, const Tensor& w_branch,
                     double t_global, double t_gram, double t_ctx,
                     const StreamSet& active);

struct LossBreakdown {
  double cls = 0.0;
  double fused = 0.0;
  double txt = 0.0;
  double img = 0.0;
  double total = 0.0;
};

// Branch-wise cross entropies plus the fused term and regularizers:
//   total = cls + lambda_fused * fused + lambda_txt * txt + lambda_img * img
// txt is the mean absolute gap between the learnable and fixed text banks;
// img is identically zero in this configuration.
LossBreakdown compute_losses(const std::vector<const Tensor*>& stream_probs,
                             const Tensor& p_fused, std::size_t label,
                             const Tensor& w_learn, const Tensor& w_fixed,
                             double lambda_fused, double lambda_txt,
                             double lambda_img);

}  // namespace gapl
