#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "gapl/gradcheck.hpp"
#include "gapl/rng.hpp"
#include "gapl/tape.hpp"

using namespace gapl;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                     double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Finite-difference check of a single primitive: loss = sum(op(x) * w) for
// a fixed random weighting w. Returns the max relative error over x.
double fd_unary(Tensor x0, const std::function<Value(Tape&, Value)>& op,
                std::uint64_t seed) {
  Rng rng(seed);
  Tensor probe_weights;
  {
    Tape t;
    Value y = op(t, t.leaf(x0, true));
    probe_weights = random_tensor(t.value(y).shape(), rng);
  }
  auto loss_graph = [&](Tape& t, Value x) {
    return t.sum(t.mul(op(t, x), t.constant(probe_weights)));
  };
  Tape t;
  Value x = t.leaf(x0, true);
  GradMap analytic = t.backward(loss_graph(t, x), {{"x", x}});
  auto loss_fn = [&]() {
    Tape ft;
    return ft.value(loss_graph(ft, ft.leaf(x0, false))).item();
  };
  return finite_diff_check({{"x", &x0}}, loss_fn, analytic).max_rel_err;
}

double fd_binary(Tensor a0, Tensor b0,
                 const std::function<Value(Tape&, Value, Value)>& op,
                 std::uint64_t seed) {
  Rng rng(seed);
  Tensor probe_weights;
  {
    Tape t;
    Value y = op(t, t.leaf(a0, true), t.leaf(b0, true));
    probe_weights = random_tensor(t.value(y).shape(), rng);
  }
  auto loss_graph = [&](Tape& t, Value a, Value b) {
    return t.sum(t.mul(op(t, a, b), t.constant(probe_weights)));
  };
  Tape t;
  Value a = t.leaf(a0, true);
  Value b = t.leaf(b0, true);
  GradMap analytic = t.backward(loss_graph(t, a, b), {{"a", a}, {"b", b}});
  auto loss_fn = [&]() {
    Tape ft;
    return ft.value(loss_graph(ft, ft.leaf(a0, false), ft.leaf(b0, false)))
        .item();
  };
  return finite_diff_check({{"a", &a0}, {"b", &b0}}, loss_fn, analytic)
      .max_rel_err;
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
  Tape t;
  Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Value c = t.matmul(t.constant(eye), t.constant(eye));
  CHECK(near(t.value(c), eye, 0.0));

  Value z = t.matmul(t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4})),
                     t.constant(Tensor::matrix(2, 1, {0, 0})));
  CHECK(t.value(z)[0] == 0.0);
  CHECK(t.value(z)[1] == 0.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(11);
  Tensor a = random_tensor({5, 4}, rng);
  Tensor b = random_tensor({4, 3}, rng);
  Tape t;
  const Tensor& c = t.value(t.matmul(t.constant(a), t.constant(b)));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < 4; ++p) acc += a.at(i, p) * b.at(p, j);
      CHECK(std::fabs(c.at(i, j) - acc) < 1e-12);
    }
  }
}

TEST_CASE("matmul rejects mismatched shapes") {
  Tape t;
  Value a = t.constant(Tensor({2, 3}));
  Value b = t.constant(Tensor({2, 3}));
  CHECK_THROWS_AS((void)t.matmul(a, b), ContractError);
}

TEST_CASE("matmul is bit-deterministic") {
  Rng rng(5);
  Tensor a = random_tensor({7, 9}, rng);
  Tensor b = random_tensor({9, 4}, rng);
  Tape t;
  const Tensor& c1 = t.value(t.matmul(t.constant(a), t.constant(b)));
  const Tensor& c2 = t.value(t.matmul(t.constant(a), t.constant(b)));
  for (std::size_t i = 0; i < c1.numel(); ++i) CHECK(c1[i] == c2[i]);
}

TEST_CASE("elementwise basics") {
  Tape t;
  CHECK(t.value(t.sigmoid(t.constant(Tensor::scalar(0.0)))).item() == 0.5);
  double le = t.value(t.log_eps(t.constant(Tensor::scalar(0.0)), 1e-6)).item();
  CHECK(le == doctest::Approx(std::log(1e-6)).epsilon(1e-12));
  const Tensor& m = t.value(t.mul(t.constant(Tensor::vector({1, 2})),
                                  t.constant(Tensor::vector({0.5, 0.25}))));
  CHECK(m[0] == 0.5);
  CHECK(m[1] == 0.5);
}

TEST_CASE("log_eps rejects negative input") {
  Tape t;
  CHECK_THROWS_AS((void)t.log_eps(t.constant(Tensor::vector({0.5, -0.1})),
                                  1e-6),
                  DomainError);
}

TEST_CASE("cosine unit vectors and oracle") {
  Tape t;
  Tensor e1 = Tensor::vector({1, 0, 0});
  Tensor e2 = Tensor::vector({0, 1, 0});
  CHECK(t.value(t.cosine(t.constant(e1), t.constant(e1))).item() == 1.0);
  CHECK(t.value(t.cosine(t.constant(e1), t.constant(e2))).item() == 0.0);

  Rng rng(3);
  Tensor u = random_tensor({16}, rng);
  Tensor v = random_tensor({16}, rng);
  double got = t.value(t.cosine(t.constant(u), t.constant(v))).item();
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  CHECK(std::fabs(got - dot / std::sqrt(nu * nv)) < 1e-12);

  CHECK_THROWS_AS((void)t.cosine(t.constant(Tensor({3})), t.constant(e1)),
                  DegenerateInputError);
}

TEST_CASE("softmax closed forms and naive oracle") {
  Tape t;
  const Tensor& u = t.value(t.softmax(t.constant(Tensor::vector({0, 0, 0})),
                                      0.37));
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  const Tensor& two =
      t.value(t.softmax(t.constant(Tensor::vector({1, 0})), 1.0));
  double e = std::exp(1.0);
  CHECK(std::fabs(two[0] - e / (e + 1.0)) < 1e-12);
  CHECK(std::fabs(two[1] - 1.0 / (e + 1.0)) < 1e-12);

  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor z = random_tensor({7}, rng, 3.0);
    double tau = 0.25 + rng.uniform();
    Tape local;
    const Tensor& p = local.value(local.softmax(local.constant(z), tau));
    // naive oracle without max subtraction
    double denom = 0.0;
    for (std::size_t i = 0; i < 7; ++i) denom += std::exp(z[i] / tau);
    double sum = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(std::fabs(p[i] - std::exp(z[i] / tau) / denom) < 1e-12);
      sum += p[i];
    }
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax rejects non-finite input") {
  Tape t;
  Tensor bad = Tensor::vector({1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS((void)t.softmax(t.constant(bad), 1.0), NumericError);
}

TEST_CASE("masked softmax zeroes inactive entries") {
  Tape t;
  const Tensor& p = t.value(t.softmax_masked(
      t.constant(Tensor::vector({5.0, 1.0, 1.0})), 1.0, {0, 1, 1}));
  CHECK(p[0] == 0.0);
  CHECK(p[1] == 0.5);
  CHECK(p[2] == 0.5);
}

TEST_CASE("topk_mean examples and sort oracle") {
  Tape t;
  Value v = t.topk_mean(t.constant(Tensor::vector({0.9, 0.1, 0.5, 0.7})), 2);
  CHECK(t.value(v).item() == doctest::Approx(0.8).epsilon(1e-14));

  // k >= N clamps to a plain mean
  Value full = t.topk_mean(t.constant(Tensor::vector({1, 2, 3})), 9);
  CHECK(t.value(full).item() == doctest::Approx(2.0).epsilon(1e-14));

  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    std::size_t n = 1 + rng.index(24);
    std::size_t k = 1 + rng.index(n + 4);  // sometimes k > n
    Tensor scores = random_tensor({n}, rng);
    Tape local;
    double got =
        local.value(local.topk_mean(local.constant(scores), k)).item();
    std::vector<double> sorted(scores.data(), scores.data() + n);
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    std::size_t keff = std::min(k, n);
    double mean = 0.0;
    for (std::size_t i = 0; i < keff; ++i) mean += sorted[i];
    mean /= double(keff);
    CHECK(std::fabs(got - mean) < 1e-12);
  }
}

TEST_CASE("topk_mean tie-break is stable under permutation of equals") {
  Tensor a = Tensor::vector({0.5, 0.7, 0.5, 0.2});
  Tensor b = Tensor::vector({0.5, 0.5, 0.7, 0.2});  // equal values permuted
  Tape t;
  double va = t.value(t.topk_mean(t.constant(a), 2)).item();
  double vb = t.value(t.topk_mean(t.constant(b), 2)).item();
  CHECK(va == vb);

  // gradient goes to the lowest tied index
  Tape g;
  Value x = g.leaf(a, true);
  GradMap grads = g.backward(g.topk_mean(x, 2), {{"x", x}});
  CHECK(grads["x"][0] == 0.5);  // selected (tie broken toward index 0)
  CHECK(grads["x"][1] == 0.5);
  CHECK(grads["x"][2] == 0.0);
}

TEST_CASE("topk_mean rejects empty and bad k") {
  Tape t;
  CHECK_THROWS_AS((void)t.topk_mean(t.constant(Tensor::vector({1.0})), 0),
                  ContractError);
}

TEST_CASE("backward on a quadratic and on a constant") {
  Tape t;
  Value x = t.leaf(Tensor::vector({1, 2}), true);
  Value loss = t.sum(t.mul(x, x));  // ||x||^2
  GradMap grads = t.backward(loss, {{"x", x}});
  CHECK(grads["x"][0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(grads["x"][1] == doctest::Approx(4.0).epsilon(1e-14));

  Tape t2;
  Value y = t2.leaf(Tensor::vector({1, 2, 3}), true);
  Value c = t2.constant(Tensor::scalar(7.0));
  GradMap zero = t2.backward(t2.sum(c), {{"y", y}});
  for (std::size_t i = 0; i < 3; ++i) CHECK(zero["y"][i] == 0.0);
}

TEST_CASE("backward rejects non-scalar roots") {
  Tape t;
  Value x = t.leaf(Tensor::vector({1, 2}), true);
  CHECK_THROWS_AS((void)t.backward(x, {{"x", x}}), ContractError);
}

TEST_CASE("finite_diff_check closed forms") {
  // f(x) = x^2 at x = 3: gradient 6
  Tensor x = Tensor::scalar(3.0);
  auto loss = [&]() { return x[0] * x[0]; };
  GradMap analytic;
  analytic["x"] = Tensor::scalar(6.0);
  FiniteDiffReport r = finite_diff_check({{"x", &x}}, loss, analytic);
  CHECK(r.pass(1e-4));

  // sigmoid'(0) = 1/4
  Tensor z = Tensor::scalar(0.0);
  auto sloss = [&]() { return 1.0 / (1.0 + std::exp(-z[0])); };
  GradMap sg;
  sg["z"] = Tensor::scalar(0.25);
  CHECK(finite_diff_check({{"z", &z}}, sloss, sg).pass(1e-4));

  // a wrong gradient must be flagged
  GradMap bad;
  bad["z"] = Tensor::scalar(0.5);
  CHECK_FALSE(finite_diff_check({{"z", &z}}, sloss, bad).pass(1e-4));
}

TEST_CASE("every primitive passes a finite-difference check") {
  Rng rng(77);
  const double tol = 1e-4;

  auto vec = [&](std::size_t n) { return random_tensor({n}, rng); };
  auto off_kink = [&](std::size_t n) {
    Tensor t = random_tensor({n}, rng);
    for (std::size_t i = 0; i < n; ++i)
      t[i] += (t[i] >= 0.0 ? 0.05 : -0.05);  // keep |x| away from 0
    return t;
  };
  auto pos = [&](std::size_t n) {
    Tensor t = random_tensor({n}, rng);
    for (std::size_t i = 0; i < n; ++i) t[i] = 0.5 + std::fabs(t[i]);
    return t;
  };

  CHECK(fd_binary(random_tensor({3, 4}, rng), random_tensor({4, 2}, rng),
                  [](Tape& t, Value a, Value b) { return t.matmul(a, b); },
                  1) < tol);
  CHECK(fd_binary(random_tensor({3, 4}, rng), vec(4),
                  [](Tape& t, Value a, Value b) { return t.matvec(a, b); },
                  2) < tol);
  CHECK(fd_unary(random_tensor({3, 4}, rng),
                 [](Tape& t, Value x) { return t.transpose(x); }, 3) < tol);
  CHECK(fd_binary(vec(5), vec(5),
                  [](Tape& t, Value a, Value b) { return t.add(a, b); },
                  4) < tol);
  CHECK(fd_binary(vec(5), vec(5),
                  [](Tape& t, Value a, Value b) { return t.sub(a, b); },
                  5) < tol);
  CHECK(fd_binary(vec(5), vec(5),
                  [](Tape& t, Value a, Value b) { return t.mul(a, b); },
                  6) < tol);
  CHECK(fd_unary(vec(5), [](Tape& t, Value x) { return t.scale(x, -1.7); },
                 7) < tol);
  CHECK(fd_binary(random_tensor({3, 4}, rng), vec(4),
                  [](Tape& t, Value a, Value b) { return t.add_rowvec(a, b); },
                  8) < tol);
  CHECK(fd_binary(random_tensor({3, 4}, rng), vec(4),
                  [](Tape& t, Value a, Value b) { return t.mul_rowvec(a, b); },
                  9) < tol);
  CHECK(fd_binary(random_tensor({3, 4}, rng), vec(3),
                  [](Tape& t, Value a, Value b) { return t.mul_colvec(a, b); },
                  10) < tol);
  CHECK(fd_binary(vec(4), vec(3),
                  [](Tape& t, Value a, Value b) {
                    return t.scale_by_elem(a, b, 1);
                  },
                  11) < tol);
  CHECK(fd_unary(vec(6), [](Tape& t, Value x) { return t.sigmoid(x); }, 12) <
        tol);
  CHECK(fd_unary(off_kink(6), [](Tape& t, Value x) { return t.relu(x); },
                 13) < tol);
  CHECK(fd_unary(pos(6),
                 [](Tape& t, Value x) { return t.log_eps(x, 1e-6); }, 14) <
        tol);
  CHECK(fd_unary(pos(6), [](Tape& t, Value x) { return t.log_guard(x); },
                 15) < tol);
  CHECK(fd_unary(off_kink(6), [](Tape& t, Value x) { return t.abs(x); },
                 16) < tol);
  CHECK(fd_binary(vec(3), vec(4),
                  [](Tape& t, Value a, Value b) { return t.concat(a, b); },
                  17) < tol);
  CHECK(fd_unary(pos(5), [](Tape& t, Value x) { return t.l2_normalize(x); },
                 18) < tol);
  CHECK(fd_binary(pos(6), pos(6),
                  [](Tape& t, Value a, Value b) { return t.cosine(a, b); },
                  19) < tol);
  CHECK(fd_binary(random_tensor({4, 6}, rng), pos(6),
                  [](Tape& t, Value a, Value b) {
                    return t.cosine_rows(a, b);
                  },
                  20) < tol);
  CHECK(fd_binary(random_tensor({3, 5}, rng), random_tensor({4, 5}, rng),
                  [](Tape& t, Value a, Value b) {
                    return t.cosine_matrix(a, b);
                  },
                  21) < tol);
  CHECK(fd_unary(vec(5), [](Tape& t, Value x) { return t.softmax(x, 0.5); },
                 22) < tol);
  CHECK(fd_unary(random_tensor({3, 4}, rng),
                 [](Tape& t, Value x) { return t.softmax_rows(x, 2.0); },
                 23) < tol);
  CHECK(fd_unary(off_kink(8),
                 [](Tape& t, Value x) { return t.topk_mean(x, 3); }, 24) <
        tol);
  CHECK(fd_unary(random_tensor({3, 8}, rng),
                 [](Tape& t, Value x) { return t.topk_mean_rows(x, 3); },
                 25) < tol);
  CHECK(fd_unary(vec(6), [](Tape& t, Value x) { return t.sum(x); }, 26) <
        tol);
  CHECK(fd_unary(vec(6), [](Tape& t, Value x) { return t.mean(x); }, 27) <
        tol);
  CHECK(fd_unary(pos(4),
                 [](Tape& t, Value x) {
                   return t.cross_entropy(t.softmax(x, 1.0), 2);
                 },
                 28) < tol);
}

TEST_CASE("cross entropy clamps vanishing probabilities") {
  Tape t;
  Value p = t.constant(Tensor::vector({1.0, 0.0}));
  Value ce = t.cross_entropy(p, 1);
  CHECK(t.value(ce).item() == doctest::Approx(-std::log(1e-12)));
  CHECK(t.clamp_warnings() == 1);
}

TEST_CASE("gradients of unused parameters are exactly zero") {
  Tape t;
  Value used = t.leaf(Tensor::vector({1.0, 2.0}), true);
  Value unused = t.leaf(Tensor::vector({3.0, 4.0, 5.0}), true);
  Value loss = t.sum(t.mul(used, used));
  GradMap grads = t.backward(loss, {{"used", used}, {"unused", unused}});
  for (std::size_t i = 0; i < 3; ++i) CHECK(grads["unused"][i] == 0.0);
}

TEST_CASE("corrupted sigmoid backward rule is detected") {
  Rng rng(123);
  Tensor x0 = random_tensor({6}, rng);
  testhooks::sigmoid_backward_scale = 1.01;
  double err = fd_unary(x0, [](Tape& t, Value x) { return t.sigmoid(x); }, 99);
  testhooks::sigmoid_backward_scale = 1.0;
  CHECK(err > 1e-4);
}

TEST_CASE("tape kink margin inspectors") {
  Tape t;
  Value x = t.constant(Tensor::vector({0.5, -0.002, 1.0}));
  (void)t.relu(x);
  CHECK(t.min_relu_input_abs() == doctest::Approx(0.002));
  (void)t.topk_mean(t.constant(Tensor::vector({0.9, 0.7, 0.1})), 2);
  CHECK(t.min_topk_margin() == doctest::Approx(0.6));
}
