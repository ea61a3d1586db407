#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gapl/tensor.hpp"

namespace gapl {

// Handle to a node on a Tape.
struct Value {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

using GradMap = std::map<std::string, Tensor>;

// Single-threaded reverse-mode tape over dense tensor primitives. Nodes are
// appended in topological order; backward walks them once in reverse.
// A tape is confined to one logical thread of execution.
class Tape {
 public:
  static constexpr double kProbClamp = 1e-12;

  Value leaf(Tensor value, bool requires_grad = false);
  Value constant(Tensor value) { return leaf(std::move(value), false); }

  // C[m x n] = A[m x k] * B[k x n]; differentiable w.r.t. both.
  Value matmul(Value a, Value b);
  // y[m] = A[m x k] * x[k]
  Value matvec(Value a, Value x);
  Value transpose(Value a);

  Value add(Value x, Value y);
  Value sub(Value x, Value y);
  Value mul(Value x, Value y);
  Value scale(Value x, double c);
  // X[m x n] + b[n] broadcast over rows / X[m x n] * v[n] broadcast over rows
  Value add_rowvec(Value x, Value b);
  Value mul_rowvec(Value x, Value v);
  // X[m x n] * u[m] broadcast over columns
  Value mul_colvec(Value x, Value u);
  // x * s[index] for a scalar picked out of a vector node
  Value scale_by_elem(Value x, Value s, std::size_t index);

  Value sigmoid(Value x);
  Value relu(Value x);
  // log(x + eps); x must be componentwise >= 0
  Value log_eps(Value x, double eps);
  // log(max(x, 1e-300)); gradient is zero on the clamped branch
  Value log_guard(Value x);
  Value abs(Value x);

  Value concat(Value x, Value y);
  Value l2_normalize(Value x);

  // cos(u, v) as a 1-element tensor; both operands need positive norm.
  Value cosine(Value u, Value v);
  // out[c] = cos(W_c, f) for W[M x d], f[d]
  Value cosine_rows(Value w, Value f);
  // out[i,j] = cos(A_i, F_j) for A[m x d], F[n x d]
  Value cosine_matrix(Value a, Value f);

  // softmax(z / temperature) with max-subtraction; output sums to 1.
  Value softmax(Value z, double temperature);
  // Masked variant: entries with mask[i] == 0 get probability exactly 0.
  Value softmax_masked(Value z, double temperature,
                       const std::vector<std::uint8_t>& mask);
  // Row-wise softmax over the last axis of a matrix.
  Value softmax_rows(Value z, double temperature);

  // Mean of the k largest entries; k > numel is clamped; ties broken by
  // lowest index; subgradient flows only to the selected entries.
  Value topk_mean(Value scores, std::size_t k);
  // Per-row topk_mean over a matrix: out[i] = topk_mean(row i, k).
  Value topk_mean_rows(Value scores, std::size_t k);

  Value sum(Value x);
  Value mean(Value x);

  // -log(max(p[label], kProbClamp)); bumps clamp_warnings() when clamped.
  Value cross_entropy(Value p, std::size_t label);

  const Tensor& value(Value v) const;
  std::size_t size() const { return nodes_.size(); }
  long clamp_warnings() const { return clamp_warnings_; }

  // Distance of the recorded graph from its subgradient kinks: smallest
  // |x| over all ReLU inputs, and smallest gap between the k-th and
  // (k+1)-th largest scores over all top-k selections. Infinity when the
  // graph has no such node (or every top-k selection is saturated).
  double min_relu_input_abs() const;
  double min_topk_margin() const;

  // Reverse-mode gradients of the scalar `root` w.r.t. every node that
  // requires them; indexed by node id (empty Tensor where not needed).
  std::vector<Tensor> gradients(Value root);

  // Gradients of `root` w.r.t. named parameter leaves. Parameters absent
  // from the graph (or unused by it) map to exact zeros.
  GradMap backward(Value root,
                   const std::vector<std::pair<std::string, Value>>& params);

 private:
  struct Node {
    std::uint8_t op = 0;
    std::int32_t a = -1;
    std::int32_t b = -1;
    Tensor val;
    bool needs_grad = false;
    double c0 = 0.0;
    std::size_t k0 = 0;
    std::vector<std::int32_t> isel;
    std::vector<double> cache;
  };

  Value push(Node node);
  const Node& node(Value v) const;
  Node& node_mut(Value v);
  void backward_node(std::size_t i, std::vector<Tensor>& grads,
                     const std::vector<char>& needed);
  static void accumulate(Tensor& dst, std::size_t index, double v) {
    dst[index] += v;
  }
  Tensor& grad_slot(std::vector<Tensor>& grads, std::size_t i);

  std::vector<Node> nodes_;
  long clamp_warnings_ = 0;
};

namespace testhooks {
// Fault-injection knob: scales the sigmoid backward rule. Tests set it to
// a value != 1 to verify the gradient checker catches a corrupted rule.
extern double sigmoid_backward_scale;
}  // namespace testhooks

}  // namespace gapl
