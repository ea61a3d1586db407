#pragma once

#include "gapl/forward.hpp"
#include "gapl/tensor.hpp"

namespace gapl {

// Frozen template features plus the learnable per-class text features.
struct ClassTextBank {
  Tensor w_fixed;  // [M x d]
  Tensor w_learn;  // [M x d]
  double alpha = 0.7;

  void validate() const;
};

// Training exposes w_learn; inference blends it with the fixed bank.
Tensor fuse_text(const ClassTextBank& bank, TextMode mode);

// logit_c = cos(f, w_c) / tau
Tensor global_logits(const Tensor& f, const Tensor& w, double tau);
Tensor global_probs(const Tensor& f, const Tensor& w, double tau);

}  // namespace gapl
