// Compares the serial reference kernels against their OpenMP variants:
// wall time, speedup, and the max absolute difference (must be 0 — the
// parallel versions keep the serial per-element accumulation order).

#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include <omp.h>

#include "gapl/kernels.hpp"
#include "gapl/rng.hpp"

namespace {

using gapl::Rng;
namespace kernels = gapl::kernels;

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

template <typename Serial, typename Parallel>
void bench(const char* name, std::size_t out_len, int reps, Serial serial,
           Parallel parallel) {
  std::vector<double> out_serial(out_len), out_parallel(out_len);

  double t_serial = -omp_get_wtime();
  for (int r = 0; r < reps; ++r) serial(out_serial.data());
  t_serial += omp_get_wtime();

  double t_parallel = -omp_get_wtime();
  for (int r = 0; r < reps; ++r) parallel(out_parallel.data());
  t_parallel += omp_get_wtime();

  double diff = max_abs_diff(out_serial, out_parallel);
  std::printf("%-16s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   "
              "max|diff| %g\n",
              name, 1e3 * t_serial / reps, 1e3 * t_parallel / reps,
              t_serial / t_parallel, diff);
  if (diff != 0.0) {
    std::fprintf(stderr, "%s: parallel result differs from serial\n", name);
    std::exit(1);
  }
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
  std::size_t m = quick ? 48 : 384;
  std::size_t k = quick ? 40 : 384;
  std::size_t n = quick ? 56 : 384;
  std::size_t rows = quick ? 512 : 20000;
  std::size_t d = quick ? 64 : 512;
  int reps = quick ? 3 : 10;

  std::printf("threads: %d  (sizes: matmul %zux%zux%zu, descriptors %zux%zu)\n",
              omp_get_max_threads(), m, k, n, rows, d);

  Rng rng(42);
  std::vector<double> a = random_vec(m * k, rng);
  std::vector<double> b = random_vec(k * n, rng);
  std::vector<double> bt = random_vec(n * k, rng);
  std::vector<double> f = random_vec(rows * d, rng);
  std::vector<double> anchors = random_vec(m * d, rng);
  std::vector<double> norm_a(m), norm_f(rows), mean_scratch(d);

  bench("matmul", m * n, reps,
        [&](double* out) { kernels::matmul_serial(m, k, n, a.data(), b.data(), out); },
        [&](double* out) { kernels::matmul_omp(m, k, n, a.data(), b.data(), out); });

  bench("matmul_nt", m * n, reps,
        [&](double* out) { kernels::matmul_nt_serial(m, k, n, a.data(), bt.data(), out); },
        [&](double* out) { kernels::matmul_nt_omp(m, k, n, a.data(), bt.data(), out); });

  bench("gram_diag", d, reps,
        [&](double* out) { kernels::gram_diag_serial(rows, d, f.data(), out); },
        [&](double* out) { kernels::gram_diag_omp(rows, d, f.data(), out); });

  bench("gram_var", d, reps,
        [&](double* out) {
          kernels::gram_var_serial(rows, d, f.data(), mean_scratch.data(), out);
        },
        [&](double* out) {
          kernels::gram_var(rows, d, f.data(), mean_scratch.data(), out);
        });

  bench("cosine_matrix", m * rows, reps,
        [&](double* out) {
          kernels::cosine_matrix_serial(m, rows, d, anchors.data(), f.data(),
                                        norm_a.data(), norm_f.data(), out);
        },
        [&](double* out) {
          kernels::cosine_matrix_omp(m, rows, d, anchors.data(), f.data(),
                                     norm_a.data(), norm_f.data(), out);
        });

  std::printf("all parallel kernels match the serial reference bitwise\n");
  return 0;
}
