#pragma once

#include <cstdint>

#include "gapl/config.hpp"
#include "gapl/model.hpp"
#include "gapl/tensor.hpp"

namespace gapl {

// Second-order descriptor of the patch tokens. Diag mode keeps the
// diagonal of (1/N) F^T F without materializing the matrix; full mode
// materializes it and is guarded by a dimension limit.
struct GramDescriptor {
  DescriptorMode mode = DescriptorMode::kDiag;
  Tensor g_diag;  // [d], per-channel mean square
  Tensor var;     // [d], only for diag_var
  Tensor g_full;  // [d*d] flattened, only for full

  // Log-compressed gate input: diag -> log(g+eps); diag_var -> the
  // concatenation with log(var+eps); full -> sign(G)*log(|G|+eps).
  Tensor gate_input(double eps) const;
};

GramDescriptor gram_descriptor(const Tensor& F, DescriptorMode mode,
                               std::uint32_t full_limit);

// Gamma = sigmoid(MLP(gate_input)), componentwise in (0,1).
Tensor style_gate(const GramDescriptor& desc, const MlpParams& gate,
                  double eps);

// a_c = w_c + w_c (*) Gamma, one gate shared across classes.
Tensor style_anchor(const Tensor& w, const Tensor& gamma);

Tensor gram_logits(const Tensor& f, const Tensor& anchors, double tau);
Tensor gram_probs(const Tensor& f, const Tensor& anchors, double tau);

}  // namespace gapl
