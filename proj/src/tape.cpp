#include "gapl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "gapl/kernels.hpp"

namespace gapl {

namespace {

enum OpCode : std::uint8_t {
  LEAF,
  MATMUL,
  MATVEC,
  TRANSPOSE,
  ADD,
  SUB,
  MUL,
  SCALE,
  ADD_ROWVEC,
  MUL_ROWVEC,
  MUL_COLVEC,
  SCALE_BY_ELEM,
  SIGMOID,
  RELU,
  LOG_EPS,
  LOG_GUARD,
  ABS,
  CONCAT,
  L2NORM,
  COSINE,
  COSINE_ROWS,
  COSINE_MATRIX,
  SOFTMAX,
  SOFTMAX_ROWS,
  TOPK_MEAN,
  TOPK_MEAN_ROWS,
  SUM,
  MEAN,
  CROSS_ENTROPY,
};

constexpr double kLogGuardFloor = 1e-300;

double vec_norm(const double* x, std::size_t n) {
  return std::sqrt(kernels::dot_serial(n, x, x));
}

// Indices of the k largest entries, ties broken by lowest index, returned
// in ascending index order.
std::vector<std::int32_t> select_topk(const double* v, std::size_t n,
                                      std::size_t k) {
  std::vector<std::int32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [v](std::int32_t a, std::int32_t b) {
                      if (v[a] != v[b]) return v[a] > v[b];
                      return a < b;
                    });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

Value Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Value{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Value v) const {
  check_contract(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(),
                 "Tape: invalid value handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::node_mut(Value v) {
  return const_cast<Node&>(node(v));
}

const Tensor& Tape::value(Value v) const { return node(v).val; }

Value Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = LEAF;
  n.val = std::move(value);
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

Value Tape::matmul(Value a, Value b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  check_contract(na.val.rank() == 2 && nb.val.rank() == 2,
                 "matmul: operands must be rank 2");
  check_contract(na.val.cols() == nb.val.rows(),
                 "matmul: inner extents disagree " + na.val.shape_string() +
                     " x " + nb.val.shape_string());
  Node out;
  out.op = MATMUL;
  out.a = a.id;
  out.b = b.id;
  out.val = Tensor({na.val.rows(), nb.val.cols()});
  kernels::matmul(na.val.rows(), na.val.cols(), nb.val.cols(), na.val.data(),
                  nb.val.data(), out.val.data());
  out.needs_grad = na.needs_grad || nb.needs_grad;
  return push(std::move(out));
}

Value Tape::matvec(Value a, Value x) {
  const Node& na = node(a);
  const Node& nx = node(x);
  check_contract(na.val.rank() == 2 && nx.val.rank() == 1,
                 "matvec: expects matrix and vector");
  check_contract(na.val.cols() == nx.val.numel(),
                 "matvec: extents disagree");
  Node out;
  out.op = MATVEC;
  out.a = a.id;
  out.b = x.id;
  out.val = Tensor({na.val.rows()});
  kernels::matvec(na.val.rows(), na.val.cols(), na.val.data(), nx.val.data(),
                  out.val.data());
  out.needs_grad = na.needs_grad || nx.needs_grad;
  return push(std::move(out));
}

Value Tape::transpose(Value a) {
  const Node& na = node(a);
  check_contract(na.val.rank() == 2, "transpose: operand must be rank 2");
  std::size_t r = na.val.rows(), c = na.val.cols();
  Node out;
  out.op = TRANSPOSE;
  out.a = a.id;
  out.val = Tensor({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.val.at(j, i) = na.val.at(i, j);
  out.needs_grad = na.needs_grad;
  return push(std::move(out));
}

Value Tape::add(Value x, Value y) {
  const Node& nx = node(x);
  const Node& ny = node(y);
  check_contract(nx.val.same_shape(ny.val), "add: shape mismatch");
  Node out;
  out.op = ADD;
  out.a = x.id;
  out.b = y.id;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i)
    out.val[i] = nx.val[i] + ny.val[i];
  out.needs_grad = nx.needs_grad || ny.needs_grad;
  return push(std::move(out));
}

Value Tape::sub(Value x, Value y) {
  const Node& nx = node(x);
  const Node& ny = node(y);
  check_contract(nx.val.same_shape(ny.val), "sub: shape mismatch");
  Node out;
  out.op = SUB;
  out.a = x.id;
  out.b = y.id;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i)
    out.val[i] = nx.val[i] - ny.val[i];
  out.needs_grad = nx.needs_grad || ny.needs_grad;
  return push(std::move(out));
}

Value Tape::mul(Value x, Value y) {
  const Node& nx = node(x);
  const Node& ny = node(y);
  check_contract(nx.val.same_shape(ny.val), "mul: shape mismatch");
  Node out;
  out.op = MUL;
  out.a = x.id;
  out.b = y.id;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i)
    out.val[i] = nx.val[i] * ny.val[i];
  out.needs_grad = nx.needs_grad || ny.needs_grad;
  return push(std::move(out));
}

Value Tape::scale(Value x, double c) {
  const Node& nx = node(x);
  Node out;
  out.op = SCALE;
  out.a = x.id;
  out.c0 = c;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i) out.val[i] = c * nx.val[i];
  out.needs_grad = nx.needs_grad;
  return push(std::move(out));
}

Value Tape::add_rowvec(Value x, Value b) {
  const Node& nx = node(x);
  const Node& nb = node(b);
  check_contract(nx.val.rank() == 2 && nb.val.rank() == 1 &&
                     nx.val.cols() == nb.val.numel(),
                 "add_rowvec: expects [m x n] and [n]");
  Node out;
  out.op = ADD_ROWVEC;
  out.a = x.id;
  out.b = b.id;
  out.val = Tensor(nx.val.shape());
  std::size_t m = nx.val.rows(), n = nx.val.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.val.at(i, j) = nx.val.at(i, j) + nb.val[j];
  out.needs_grad = nx.needs_grad || nb.needs_grad;
  return push(std::move(out));
}

Value Tape::mul_rowvec(Value x, Value v) {
  const Node& nx = node(x);
  const Node& nv = node(v);
  check_contract(nx.val.rank() == 2 && nv.val.rank() == 1 &&
                     nx.val.cols() == nv.val.numel(),
                 "mul_rowvec: expects [m x n] and [n]");
  Node out;
  out.op = MUL_ROWVEC;
  out.a = x.id;
  out.b = v.id;
  out.val = Tensor(nx.val.shape());
  std::size_t m = nx.val.rows(), n = nx.val.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.val.at(i, j) = nx.val.at(i, j) * nv.val[j];
  out.needs_grad = nx.needs_grad || nv.needs_grad;
  return push(std::move(out));
}

Value Tape::mul_colvec(Value x, Value u) {
  const Node& nx = node(x);
  const Node& nu = node(u);
  check_contract(nx.val.rank() == 2 && nu.val.rank() == 1 &&
                     nx.val.rows() == nu.val.numel(),
                 "mul_colvec: expects [m x n] and [m]");
  Node out;
  out.op = MUL_COLVEC;
  out.a = x.id;
  out.b = u.id;
  out.val = Tensor(nx.val.shape());
  std::size_t m = nx.val.rows(), n = nx.val.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.val.at(i, j) = nx.val.at(i, j) * nu.val[i];
  out.needs_grad = nx.needs_grad || nu.needs_grad;
  return push(std::move(out));
}

Value Tape::scale_by_elem(Value x, Value s, std::size_t index) {
  const Node& nx = node(x);
  const Node& ns = node(s);
  check_contract(index < ns.val.numel(), "scale_by_elem: index out of range");
  Node out;
  out.op = SCALE_BY_ELEM;
  out.a = x.id;
  out.b = s.id;
  out.k0 = index;
  out.val = Tensor(nx.val.shape());
  double c = ns.val[index];
  for (std::size_t i = 0; i < out.val.numel(); ++i) out.val[i] = c * nx.val[i];
  out.needs_grad = nx.needs_grad || ns.needs_grad;
  return push(std::move(out));
}

Value Tape::sigmoid(Value x) {
  const Node& nx = node(x);
  Node out;
  out.op = SIGMOID;
  out.a = x.id;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i)
    out.val[i] = 1.0 / (1.0 + std::exp(-nx.val[i]));
  out.needs_grad = nx.needs_grad;
  return push(std::move(out));
}

Value Tape::relu(Value x) {
  const Node& nx = node(x);
  Node out;
  out.op = RELU;
  out.a = x.id;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i)
    out.val[i] = nx.val[i] > 0.0 ? nx.val[i] : 0.0;
  out.needs_grad = nx.needs_grad;
  return push(std::move(out));
}

Value Tape::log_eps(Value x, double eps) {
  const Node& nx = node(x);
  for (std::size_t i = 0; i < nx.val.numel(); ++i) {
    if (nx.val[i] < 0.0)
      throw DomainError("log_eps: negative input at index " +
                        std::to_string(i));
  }
  Node out;
  out.op = LOG_EPS;
  out.a = x.id;
  out.c0 = eps;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i)
    out.val[i] = std::log(nx.val[i] + eps);
  out.needs_grad = nx.needs_grad;
  return push(std::move(out));
}

Value Tape::log_guard(Value x) {
  const Node& nx = node(x);
  Node out;
  out.op = LOG_GUARD;
  out.a = x.id;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i)
    out.val[i] = std::log(std::max(nx.val[i], kLogGuardFloor));
  out.needs_grad = nx.needs_grad;
  return push(std::move(out));
}

Value Tape::abs(Value x) {
  const Node& nx = node(x);
  Node out;
  out.op = ABS;
  out.a = x.id;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i)
    out.val[i] = std::fabs(nx.val[i]);
  out.needs_grad = nx.needs_grad;
  return push(std::move(out));
}

Value Tape::concat(Value x, Value y) {
  const Node& nx = node(x);
  const Node& ny = node(y);
  check_contract(nx.val.rank() == 1 && ny.val.rank() == 1,
                 "concat: expects vectors");
  Node out;
  out.op = CONCAT;
  out.a = x.id;
  out.b = y.id;
  out.val = Tensor({nx.val.numel() + ny.val.numel()});
  for (std::size_t i = 0; i < nx.val.numel(); ++i) out.val[i] = nx.val[i];
  for (std::size_t i = 0; i < ny.val.numel(); ++i)
    out.val[nx.val.numel() + i] = ny.val[i];
  out.needs_grad = nx.needs_grad || ny.needs_grad;
  return push(std::move(out));
}

Value Tape::l2_normalize(Value x) {
  const Node& nx = node(x);
  double r = vec_norm(nx.val.data(), nx.val.numel());
  if (r == 0.0) throw DegenerateInputError("l2_normalize: zero-norm input");
  Node out;
  out.op = L2NORM;
  out.a = x.id;
  out.val = Tensor(nx.val.shape());
  for (std::size_t i = 0; i < out.val.numel(); ++i)
    out.val[i] = nx.val[i] / r;
  out.cache = {r};
  out.needs_grad = nx.needs_grad;
  return push(std::move(out));
}

Value Tape::cosine(Value u, Value v) {
  const Node& nu = node(u);
  const Node& nv = node(v);
  check_contract(nu.val.rank() == 1 && nv.val.rank() == 1 &&
                     nu.val.numel() == nv.val.numel(),
                 "cosine: expects equal-length vectors");
  double ru = vec_norm(nu.val.data(), nu.val.numel());
  double rv = vec_norm(nv.val.data(), nv.val.numel());
  if (ru == 0.0 || rv == 0.0)
    throw DegenerateInputError("cosine: zero-norm operand");
  double c =
      kernels::dot_serial(nu.val.numel(), nu.val.data(), nv.val.data()) /
      (ru * rv);
  Node out;
  out.op = COSINE;
  out.a = u.id;
  out.b = v.id;
  out.val = Tensor::scalar(c);
  out.cache = {ru, rv};
  out.needs_grad = nu.needs_grad || nv.needs_grad;
  return push(std::move(out));
}

Value Tape::cosine_rows(Value w, Value f) {
  const Node& nw = node(w);
  const Node& nf = node(f);
  check_contract(nw.val.rank() == 2 && nf.val.rank() == 1 &&
                     nw.val.cols() == nf.val.numel(),
                 "cosine_rows: expects [M x d] and [d]");
  std::size_t m = nw.val.rows(), d = nw.val.cols();
  double rf = vec_norm(nf.val.data(), d);
  if (rf == 0.0)
    throw DegenerateInputError("cosine_rows: zero-norm feature vector");
  Node out;
  out.op = COSINE_ROWS;
  out.a = w.id;
  out.b = f.id;
  out.val = Tensor({m});
  out.cache.resize(m + 1);
  for (std::size_t i = 0; i < m; ++i) {
    double rw = vec_norm(nw.val.data() + i * d, d);
    if (rw == 0.0)
      throw DegenerateInputError("cosine_rows: zero-norm row for class " +
                                 std::to_string(i));
    out.cache[i] = rw;
    out.val[i] =
        kernels::dot_serial(d, nw.val.data() + i * d, nf.val.data()) /
        (rw * rf);
  }
  out.cache[m] = rf;
  out.needs_grad = nw.needs_grad || nf.needs_grad;
  return push(std::move(out));
}

Value Tape::cosine_matrix(Value a, Value f) {
  const Node& na = node(a);
  const Node& nf = node(f);
  check_contract(na.val.rank() == 2 && nf.val.rank() == 2 &&
                     na.val.cols() == nf.val.cols(),
                 "cosine_matrix: expects [m x d] and [n x d]");
  std::size_t m = na.val.rows(), n = nf.val.rows(), d = na.val.cols();
  Node out;
  out.op = COSINE_MATRIX;
  out.a = a.id;
  out.b = f.id;
  out.val = Tensor({m, n});
  out.cache.resize(m + n);
  kernels::cosine_matrix(m, n, d, na.val.data(), nf.val.data(),
                         out.cache.data(), out.cache.data() + m,
                         out.val.data());
  for (std::size_t i = 0; i < m; ++i) {
    if (out.cache[i] == 0.0)
      throw DegenerateInputError("cosine_matrix: zero-norm anchor row " +
                                 std::to_string(i));
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (out.cache[m + j] == 0.0)
      throw DegenerateInputError("cosine_matrix: zero-norm patch row " +
                                 std::to_string(j));
  }
  out.needs_grad = na.needs_grad || nf.needs_grad;
  return push(std::move(out));
}

namespace {
void softmax_fill(const double* z, double* p, std::size_t n, double tau,
                  const std::vector<std::int32_t>& active) {
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::int32_t i : active) zmax = std::max(zmax, z[i]);
  double denom = 0.0;
  for (std::int32_t i : active) {
    double e = std::exp((z[i] - zmax) / tau);
    p[i] = e;
    denom += e;
  }
  for (std::int32_t i : active) p[i] /= denom;
}
}  // namespace

Value Tape::softmax(Value z, double temperature) {
  return softmax_masked(z, temperature, {});
}

Value Tape::softmax_masked(Value z, double temperature,
                           const std::vector<std::uint8_t>& mask) {
  const Node& nz = node(z);
  check_contract(nz.val.rank() == 1, "softmax: expects a vector");
  check_contract(temperature > 0.0, "softmax: temperature must be positive");
  if (!nz.val.all_finite())
    throw NumericError("softmax: non-finite input");
  std::size_t n = nz.val.numel();
  std::vector<std::int32_t> active;
  if (mask.empty()) {
    active.resize(n);
    std::iota(active.begin(), active.end(), 0);
  } else {
    check_contract(mask.size() == n, "softmax: mask length mismatch");
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) active.push_back(static_cast<std::int32_t>(i));
    check_contract(!active.empty(), "softmax: empty mask");
  }
  Node out;
  out.op = SOFTMAX;
  out.a = z.id;
  out.c0 = temperature;
  out.val = Tensor({n});
  softmax_fill(nz.val.data(), out.val.data(), n, temperature, active);
  out.isel = std::move(active);
  out.needs_grad = nz.needs_grad;
  return push(std::move(out));
}

Value Tape::softmax_rows(Value z, double temperature) {
  const Node& nz = node(z);
  check_contract(nz.val.rank() == 2, "softmax_rows: expects a matrix");
  check_contract(temperature > 0.0,
                 "softmax_rows: temperature must be positive");
  if (!nz.val.all_finite())
    throw NumericError("softmax_rows: non-finite input");
  std::size_t m = nz.val.rows(), n = nz.val.cols();
  std::vector<std::int32_t> active(n);
  std::iota(active.begin(), active.end(), 0);
  Node out;
  out.op = SOFTMAX_ROWS;
  out.a = z.id;
  out.c0 = temperature;
  out.val = Tensor({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    softmax_fill(nz.val.data() + i * n, out.val.data() + i * n, n, temperature,
                 active);
  }
  out.needs_grad = nz.needs_grad;
  return push(std::move(out));
}

Value Tape::topk_mean(Value scores, std::size_t k) {
  const Node& ns = node(scores);
  check_contract(ns.val.rank() == 1, "topk_mean: expects a vector");
  std::size_t n = ns.val.numel();
  check_contract(n >= 1, "topk_mean: empty scores");
  check_contract(k >= 1, "topk_mean: k must be positive");
  std::size_t keff = std::min(k, n);
  Node out;
  out.op = TOPK_MEAN;
  out.a = scores.id;
  out.k0 = keff;
  out.isel = select_topk(ns.val.data(), n, keff);
  double acc = 0.0;
  for (std::int32_t i : out.isel) acc += ns.val[static_cast<std::size_t>(i)];
  out.val = Tensor::scalar(acc / static_cast<double>(keff));
  out.needs_grad = ns.needs_grad;
  return push(std::move(out));
}

Value Tape::topk_mean_rows(Value scores, std::size_t k) {
  const Node& ns = node(scores);
  check_contract(ns.val.rank() == 2, "topk_mean_rows: expects a matrix");
  check_contract(k >= 1, "topk_mean_rows: k must be positive");
  std::size_t m = ns.val.rows(), n = ns.val.cols();
  std::size_t keff = std::min(k, n);
  Node out;
  out.op = TOPK_MEAN_ROWS;
  out.a = scores.id;
  out.k0 = keff;
  out.val = Tensor({m});
  out.isel.reserve(m * keff);
  for (std::size_t i = 0; i < m; ++i) {
    auto sel = select_topk(ns.val.data() + i * n, n, keff);
    double acc = 0.0;
    for (std::int32_t j : sel) acc += ns.val.at(i, static_cast<std::size_t>(j));
    out.val[i] = acc / static_cast<double>(keff);
    out.isel.insert(out.isel.end(), sel.begin(), sel.end());
  }
  out.needs_grad = ns.needs_grad;
  return push(std::move(out));
}

Value Tape::sum(Value x) {
  const Node& nx = node(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < nx.val.numel(); ++i) acc += nx.val[i];
  Node out;
  out.op = SUM;
  out.a = x.id;
  out.val = Tensor::scalar(acc);
  out.needs_grad = nx.needs_grad;
  return push(std::move(out));
}

Value Tape::mean(Value x) {
  const Node& nx = node(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < nx.val.numel(); ++i) acc += nx.val[i];
  Node out;
  out.op = MEAN;
  out.a = x.id;
  out.val = Tensor::scalar(acc / static_cast<double>(nx.val.numel()));
  out.needs_grad = nx.needs_grad;
  return push(std::move(out));
}

Value Tape::cross_entropy(Value p, std::size_t label) {
  const Node& np = node(p);
  check_contract(np.val.rank() == 1 && label < np.val.numel(),
                 "cross_entropy: label out of range");
  double pc = np.val[label];
  Node out;
  out.op = CROSS_ENTROPY;
  out.a = p.id;
  out.k0 = label;
  if (pc < kProbClamp) {
    ++clamp_warnings_;
    out.val = Tensor::scalar(-std::log(kProbClamp));
    out.cache = {0.0};  // clamped: flat region, zero gradient
  } else {
    out.val = Tensor::scalar(-std::log(pc));
    out.cache = {1.0};
  }
  out.needs_grad = np.needs_grad;
  return push(std::move(out));
}

Tensor& Tape::grad_slot(std::vector<Tensor>& grads, std::size_t i) {
  if (grads[i].numel() == 0) grads[i] = Tensor(nodes_[i].val.shape());
  return grads[i];
}

std::vector<Tensor> Tape::gradients(Value root) {
  const Node& nr = node(root);
  check_contract(nr.val.numel() == 1, "backward: root must be a scalar");
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(root.id)] = Tensor::scalar(1.0);
  std::vector<char> needed;  // unused placeholder for symmetry
  for (std::size_t i = static_cast<std::size_t>(root.id) + 1; i-- > 0;) {
    if (grads[i].numel() == 0 || !nodes_[i].needs_grad) continue;
    backward_node(i, grads, needed);
  }
  return grads;
}

void Tape::backward_node(std::size_t i, std::vector<Tensor>& grads,
                         const std::vector<char>&) {
  const Node& nd = nodes_[i];
  const Tensor& g = grads[i];
  auto wants = [&](std::int32_t id) {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad;
  };
  auto in_val = [&](std::int32_t id) -> const Tensor& {
    return nodes_[static_cast<std::size_t>(id)].val;
  };

  switch (nd.op) {
    case LEAF:
      break;
    case MATMUL: {
      const Tensor& av = in_val(nd.a);
      const Tensor& bv = in_val(nd.b);
      std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
      if (wants(nd.a)) {
        Tensor tmp({m, k});
        kernels::matmul_nt(m, n, k, g.data(), bv.data(), tmp.data());
        Tensor& da = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < tmp.numel(); ++t) da[t] += tmp[t];
      }
      if (wants(nd.b)) {
        Tensor tmp({k, n});
        kernels::matmul_tn(m, k, n, av.data(), g.data(), tmp.data());
        Tensor& db = grad_slot(grads, static_cast<std::size_t>(nd.b));
        for (std::size_t t = 0; t < tmp.numel(); ++t) db[t] += tmp[t];
      }
      break;
    }
    case MATVEC: {
      const Tensor& av = in_val(nd.a);
      const Tensor& xv = in_val(nd.b);
      std::size_t m = av.rows(), k = av.cols();
      if (wants(nd.a)) {
        Tensor& da = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < k; ++c) da.at(r, c) += g[r] * xv[c];
      }
      if (wants(nd.b)) {
        Tensor tmp({k});
        kernels::matvec_t(m, k, av.data(), g.data(), tmp.data());
        Tensor& dx = grad_slot(grads, static_cast<std::size_t>(nd.b));
        for (std::size_t t = 0; t < k; ++t) dx[t] += tmp[t];
      }
      break;
    }
    case TRANSPOSE: {
      if (wants(nd.a)) {
        Tensor& da = grad_slot(grads, static_cast<std::size_t>(nd.a));
        std::size_t r = da.rows(), c = da.cols();
        for (std::size_t x = 0; x < r; ++x)
          for (std::size_t y = 0; y < c; ++y) da.at(x, y) += g.at(y, x);
      }
      break;
    }
    case ADD: {
      for (std::int32_t id : {nd.a, nd.b}) {
        if (!wants(id)) continue;
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(id));
        for (std::size_t t = 0; t < g.numel(); ++t) d[t] += g[t];
      }
      break;
    }
    case SUB: {
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t) d[t] += g[t];
      }
      if (wants(nd.b)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
        for (std::size_t t = 0; t < g.numel(); ++t) d[t] -= g[t];
      }
      break;
    }
    case MUL: {
      if (wants(nd.a)) {
        const Tensor& yv = in_val(nd.b);
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t) d[t] += g[t] * yv[t];
      }
      if (wants(nd.b)) {
        const Tensor& xv = in_val(nd.a);
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
        for (std::size_t t = 0; t < g.numel(); ++t) d[t] += g[t] * xv[t];
      }
      break;
    }
    case SCALE: {
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t) d[t] += nd.c0 * g[t];
      }
      break;
    }
    case ADD_ROWVEC: {
      std::size_t m = g.rows(), n = g.cols();
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t) d[t] += g[t];
      }
      if (wants(nd.b)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) d[c] += g.at(r, c);
      }
      break;
    }
    case MUL_ROWVEC: {
      const Tensor& xv = in_val(nd.a);
      const Tensor& vv = in_val(nd.b);
      std::size_t m = g.rows(), n = g.cols();
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) d.at(r, c) += g.at(r, c) * vv[c];
      }
      if (wants(nd.b)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) d[c] += g.at(r, c) * xv.at(r, c);
      }
      break;
    }
    case MUL_COLVEC: {
      const Tensor& xv = in_val(nd.a);
      const Tensor& uv = in_val(nd.b);
      std::size_t m = g.rows(), n = g.cols();
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) d.at(r, c) += g.at(r, c) * uv[r];
      }
      if (wants(nd.b)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) d[r] += g.at(r, c) * xv.at(r, c);
      }
      break;
    }
    case SCALE_BY_ELEM: {
      const Tensor& xv = in_val(nd.a);
      const Tensor& sv = in_val(nd.b);
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t) d[t] += g[t] * sv[nd.k0];
      }
      if (wants(nd.b)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
        double acc = 0.0;
        for (std::size_t t = 0; t < g.numel(); ++t) acc += g[t] * xv[t];
        d[nd.k0] += acc;
      }
      break;
    }
    case SIGMOID: {
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t) {
          double s = nd.val[t];
          d[t] += g[t] * s * (1.0 - s) * testhooks::sigmoid_backward_scale;
        }
      }
      break;
    }
    case RELU: {
      if (wants(nd.a)) {
        const Tensor& xv = in_val(nd.a);
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t)
          if (xv[t] > 0.0) d[t] += g[t];
      }
      break;
    }
    case LOG_EPS: {
      if (wants(nd.a)) {
        const Tensor& xv = in_val(nd.a);
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t)
          d[t] += g[t] / (xv[t] + nd.c0);
      }
      break;
    }
    case LOG_GUARD: {
      if (wants(nd.a)) {
        const Tensor& xv = in_val(nd.a);
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t)
          if (xv[t] > kLogGuardFloor) d[t] += g[t] / xv[t];
      }
      break;
    }
    case ABS: {
      if (wants(nd.a)) {
        const Tensor& xv = in_val(nd.a);
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t) {
          if (xv[t] > 0.0)
            d[t] += g[t];
          else if (xv[t] < 0.0)
            d[t] -= g[t];
        }
      }
      break;
    }
    case CONCAT: {
      std::size_t nx = in_val(nd.a).numel();
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < nx; ++t) d[t] += g[t];
      }
      if (wants(nd.b)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
        for (std::size_t t = 0; t < d.numel(); ++t) d[t] += g[nx + t];
      }
      break;
    }
    case L2NORM: {
      if (wants(nd.a)) {
        double r = nd.cache[0];
        double gy = 0.0;
        for (std::size_t t = 0; t < g.numel(); ++t) gy += g[t] * nd.val[t];
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < g.numel(); ++t)
          d[t] += (g[t] - nd.val[t] * gy) / r;
      }
      break;
    }
    case COSINE: {
      const Tensor& uv = in_val(nd.a);
      const Tensor& vv = in_val(nd.b);
      double ru = nd.cache[0], rv = nd.cache[1], c = nd.val[0], gs = g[0];
      std::size_t dlen = uv.numel();
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < dlen; ++t)
          d[t] += gs * (vv[t] / (ru * rv) - c * uv[t] / (ru * ru));
      }
      if (wants(nd.b)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
        for (std::size_t t = 0; t < dlen; ++t)
          d[t] += gs * (uv[t] / (ru * rv) - c * vv[t] / (rv * rv));
      }
      break;
    }
    case COSINE_ROWS: {
      const Tensor& wv = in_val(nd.a);
      const Tensor& fv = in_val(nd.b);
      std::size_t m = wv.rows(), dlen = wv.cols();
      double rf = nd.cache[m];
      for (std::size_t r = 0; r < m; ++r) {
        double rw = nd.cache[r], c = nd.val[r], gs = g[r];
        if (gs == 0.0) continue;
        if (wants(nd.a)) {
          Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
          for (std::size_t t = 0; t < dlen; ++t)
            d.at(r, t) +=
                gs * (fv[t] / (rw * rf) - c * wv.at(r, t) / (rw * rw));
        }
        if (wants(nd.b)) {
          Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
          for (std::size_t t = 0; t < dlen; ++t)
            d[t] += gs * (wv.at(r, t) / (rw * rf) - c * fv[t] / (rf * rf));
        }
      }
      break;
    }
    case COSINE_MATRIX: {
      const Tensor& av = in_val(nd.a);
      const Tensor& fv = in_val(nd.b);
      std::size_t m = av.rows(), n = fv.rows(), dlen = av.cols();
      for (std::size_t r = 0; r < m; ++r) {
        double ra = nd.cache[r];
        if (wants(nd.a)) {
          Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
          for (std::size_t j = 0; j < n; ++j) {
            double gs = g.at(r, j);
            if (gs == 0.0) continue;
            double rf = nd.cache[m + j], c = nd.val.at(r, j);
            for (std::size_t t = 0; t < dlen; ++t)
              d.at(r, t) += gs * (fv.at(j, t) / (ra * rf) -
                                  c * av.at(r, t) / (ra * ra));
          }
        }
        if (wants(nd.b)) {
          Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.b));
          for (std::size_t j = 0; j < n; ++j) {
            double gs = g.at(r, j);
            if (gs == 0.0) continue;
            double rf = nd.cache[m + j], c = nd.val.at(r, j);
            for (std::size_t t = 0; t < dlen; ++t)
              d.at(j, t) += gs * (av.at(r, t) / (ra * rf) -
                                  c * fv.at(j, t) / (rf * rf));
          }
        }
      }
      break;
    }
    case SOFTMAX: {
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        double s = 0.0;
        for (std::int32_t t : nd.isel)
          s += g[static_cast<std::size_t>(t)] *
               nd.val[static_cast<std::size_t>(t)];
        for (std::int32_t t : nd.isel) {
          std::size_t u = static_cast<std::size_t>(t);
          d[u] += nd.val[u] * (g[u] - s) / nd.c0;
        }
      }
      break;
    }
    case SOFTMAX_ROWS: {
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        std::size_t m = g.rows(), n = g.cols();
        for (std::size_t r = 0; r < m; ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < n; ++c) s += g.at(r, c) * nd.val.at(r, c);
          for (std::size_t c = 0; c < n; ++c)
            d.at(r, c) += nd.val.at(r, c) * (g.at(r, c) - s) / nd.c0;
        }
      }
      break;
    }
    case TOPK_MEAN: {
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        double share = g[0] / static_cast<double>(nd.k0);
        for (std::int32_t t : nd.isel) d[static_cast<std::size_t>(t)] += share;
      }
      break;
    }
    case TOPK_MEAN_ROWS: {
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        std::size_t m = g.numel(), keff = nd.k0;
        for (std::size_t r = 0; r < m; ++r) {
          double share = g[r] / static_cast<double>(keff);
          for (std::size_t t = 0; t < keff; ++t) {
            std::size_t col =
                static_cast<std::size_t>(nd.isel[r * keff + t]);
            d.at(r, col) += share;
          }
        }
      }
      break;
    }
    case SUM: {
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        for (std::size_t t = 0; t < d.numel(); ++t) d[t] += g[0];
      }
      break;
    }
    case MEAN: {
      if (wants(nd.a)) {
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        double share = g[0] / static_cast<double>(d.numel());
        for (std::size_t t = 0; t < d.numel(); ++t) d[t] += share;
      }
      break;
    }
    case CROSS_ENTROPY: {
      if (wants(nd.a) && nd.cache[0] != 0.0) {
        const Tensor& pv = in_val(nd.a);
        Tensor& d = grad_slot(grads, static_cast<std::size_t>(nd.a));
        d[nd.k0] += -g[0] / pv[nd.k0];
      }
      break;
    }
    default:
      throw ContractError("backward: unknown op");
  }
}

namespace testhooks {
double sigmoid_backward_scale = 1.0;
}

double Tape::min_relu_input_abs() const {
  double best = std::numeric_limits<double>::infinity();
  for (const Node& nd : nodes_) {
    if (nd.op != RELU) continue;
    const Tensor& x = nodes_[static_cast<std::size_t>(nd.a)].val;
    for (std::size_t i = 0; i < x.numel(); ++i)
      best = std::min(best, std::fabs(x[i]));
  }
  return best;
}

double Tape::min_topk_margin() const {
  double best = std::numeric_limits<double>::infinity();
  auto row_margin = [&](const double* v, std::size_t n, std::size_t k) {
    if (k >= n) return;  // full selection has no boundary
    std::vector<double> sorted(v, v + n);
    std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(),
                     std::greater<double>());
    double kth = sorted[k - 1];
    double next = -std::numeric_limits<double>::infinity();
    for (std::size_t i = k; i < n; ++i) next = std::max(next, sorted[i]);
    best = std::min(best, kth - next);
  };
  for (const Node& nd : nodes_) {
    const Tensor* in = nullptr;
    if (nd.op == TOPK_MEAN || nd.op == TOPK_MEAN_ROWS)
      in = &nodes_[static_cast<std::size_t>(nd.a)].val;
    if (!in) continue;
    if (nd.op == TOPK_MEAN) {
      row_margin(in->data(), in->numel(), nd.k0);
    } else {
      for (std::size_t r = 0; r < in->rows(); ++r)
        row_margin(in->data() + r * in->cols(), in->cols(), nd.k0);
    }
  }
  return best;
}

GradMap Tape::backward(
    Value root, const std::vector<std::pair<std::string, Value>>& params) {
  std::vector<Tensor> grads = gradients(root);
  GradMap out;
  for (const auto& [name, v] : params) {
    std::size_t id = static_cast<std::size_t>(v.id);
    if (id < grads.size() && grads[id].numel() > 0) {
      out[name] = std::move(grads[id]);
    } else {
      out[name] = Tensor(node(v).val.shape());
    }
  }
  return out;
}

}  // namespace gapl
