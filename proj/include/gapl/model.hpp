#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gapl/config.hpp"
#include "gapl/tensor.hpp"

namespace gapl {

// Two-layer perceptron with ReLU between the layers:
//   y = w2 * relu(w1 * x + b1) + b2
struct MlpParams {
  Tensor w1, b1, w2, b2;
};

// All trainable tensors of the model. Final layers of the three modulator
// networks start at zero so the untrained model reproduces the plain
// text-matching predictions exactly.
struct ModelParams {
  std::uint32_t d = 0;
  std::uint32_t M = 0;

  Tensor w_learn;                    // [M x d]
  MlpParams gate;                    // gate_input(d) -> h_s -> d
  std::vector<Tensor> local_signals; // K entries of [P x d]
  Tensor attn_wq, attn_wk, attn_wv;  // [d x d]
  MlpParams ctx_net;                 // d -> h_c -> d
  MlpParams fusion_net;              // 2d -> h_b -> 3

  // Seeded initialization against the fixed text bank.
  static ModelParams init(const TrainConfig& cfg, const Tensor& w_fixed);

  // Stable registration order; names are the checkpoint tensor names.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;

  // Adds seeded Gaussian noise to every tensor (gradient-check helper that
  // moves the zero-initialized layers off their flat points).
  void jitter(double stddev, std::uint64_t seed);
};

}  // namespace gapl
