#pragma once

#include <cstddef>
#include <vector>

#include "gapl/model.hpp"
#include "gapl/tensor.hpp"

namespace gapl {

// Pooling size of branch k (1-based): min(k*10, patches).
std::size_t ctx_pool_size(std::size_t k, std::size_t patches);

// Contextual text anchors of branch k (1-based): per class,
// a_c = w_c + MLP(Attn(Q = W_q w_c, K/V = projected local signal tokens)).
// Single head, scores scaled by 1/sqrt(d).
Tensor contextual_anchor(const ModelParams& params, const Tensor& w,
                         std::size_t k);

// Score map [M x N]: cosine of every anchor row against every patch row.
Tensor score_map(const Tensor& anchors, const Tensor& F);

// Per-class pooled score: mean of the `pool` largest patch scores per row.
Tensor ctx_branch_scores(const Tensor& map, std::size_t pool);

// p_ctx = (1/K) sum_k softmax(Sbar_k / tau)
Tensor ctx_probs(const std::vector<Tensor>& branch_scores, double tau);

}  // namespace gapl
