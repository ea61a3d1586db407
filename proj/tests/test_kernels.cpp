#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include <omp.h>

#include "gapl/kernels.hpp"
#include "gapl/rng.hpp"

using namespace gapl;
namespace k = gapl::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

bool bitwise_equal(const std::vector<double>& a,
                   const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("omp matmul family is bitwise equal to the serial reference") {
  struct Shape {
    std::size_t m, kk, n;
  };
  const Shape shapes[] = {{1, 1, 1}, {3, 7, 5}, {64, 64, 64}, {17, 129, 33}};
  for (const Shape& s : shapes) {
    auto a = random_vec(s.m * s.kk, 1 + s.m);
    auto b = random_vec(s.kk * s.n, 2 + s.n);
    auto bt = random_vec(s.n * s.kk, 3 + s.n);

    std::vector<double> c0(s.m * s.n), c1(s.m * s.n);
    k::matmul_serial(s.m, s.kk, s.n, a.data(), b.data(), c0.data());
    k::matmul_omp(s.m, s.kk, s.n, a.data(), b.data(), c1.data());
    CHECK(bitwise_equal(c0, c1));

    k::matmul_nt_serial(s.m, s.kk, s.n, a.data(), bt.data(), c0.data());
    k::matmul_nt_omp(s.m, s.kk, s.n, a.data(), bt.data(), c1.data());
    CHECK(bitwise_equal(c0, c1));

    std::vector<double> d0(s.kk * s.n), d1(s.kk * s.n);
    auto am = random_vec(s.m * s.kk, 4);
    auto bm = random_vec(s.m * s.n, 5);
    k::matmul_tn_serial(s.m, s.kk, s.n, am.data(), bm.data(), d0.data());
    k::matmul_tn_omp(s.m, s.kk, s.n, am.data(), bm.data(), d1.data());
    CHECK(bitwise_equal(d0, d1));
  }
}

TEST_CASE("omp descriptor kernels are bitwise equal to serial") {
  const std::size_t rows = 200, d = 96;
  auto f = random_vec(rows * d, 11);

  std::vector<double> g0(d), g1(d);
  k::gram_diag_serial(rows, d, f.data(), g0.data());
  k::gram_diag_omp(rows, d, f.data(), g1.data());
  CHECK(bitwise_equal(g0, g1));

  std::vector<double> v0(d), v1(d), scratch(d);
  k::gram_var_serial(rows, d, f.data(), scratch.data(), v0.data());
  k::set_parallel(true);
  k::gram_var(rows, d, f.data(), scratch.data(), v1.data());
  CHECK(bitwise_equal(v0, v1));
}

TEST_CASE("omp cosine matrix is bitwise equal to serial") {
  const std::size_t m = 24, n = 120, d = 64;
  auto a = random_vec(m * d, 21);
  auto f = random_vec(n * d, 22);
  std::vector<double> na0(m), nf0(n), na1(m), nf1(n);
  std::vector<double> c0(m * n), c1(m * n);
  k::cosine_matrix_serial(m, n, d, a.data(), f.data(), na0.data(), nf0.data(),
                          c0.data());
  k::cosine_matrix_omp(m, n, d, a.data(), f.data(), na1.data(), nf1.data(),
                       c1.data());
  CHECK(bitwise_equal(c0, c1));
  CHECK(bitwise_equal(na0, na1));
  CHECK(bitwise_equal(nf0, nf1));
}

TEST_CASE("results are independent of the thread count") {
  const std::size_t m = 40, kk = 80, n = 48;
  auto a = random_vec(m * kk, 31);
  auto b = random_vec(kk * n, 32);
  std::vector<double> ref(m * n);
  k::matmul_serial(m, kk, n, a.data(), b.data(), ref.data());
  int saved = omp_get_max_threads();
  for (int threads : {1, 2, 3, 7}) {
    omp_set_num_threads(threads);
    std::vector<double> c(m * n);
    k::matmul_omp(m, kk, n, a.data(), b.data(), c.data());
    CHECK(bitwise_equal(ref, c));
  }
  omp_set_num_threads(saved);
}

TEST_CASE("dispatcher honors the global parallel switch") {
  const std::size_t m = 64, kk = 64, n = 64;  // above the grain threshold
  auto a = random_vec(m * kk, 41);
  auto b = random_vec(kk * n, 42);
  std::vector<double> c0(m * n), c1(m * n);
  k::set_parallel(false);
  CHECK_FALSE(k::parallel_enabled());
  k::matmul(m, kk, n, a.data(), b.data(), c0.data());
  k::set_parallel(true);
  CHECK(k::parallel_enabled());
  k::matmul(m, kk, n, a.data(), b.data(), c1.data());
  CHECK(bitwise_equal(c0, c1));
}
