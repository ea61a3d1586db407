#include "gapl/kernels.hpp"

#include <atomic>
#include <cmath>

namespace gapl::kernels {

namespace {
std::atomic<bool> g_parallel{true};

bool use_parallel(std::size_t work) {
  return g_parallel.load(std::memory_order_relaxed) && work >= kParallelGrain;
}
}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

double dot_serial(std::size_t n, const double* a, const double* b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// ---- matmul -----------------------------------------------------------

void matmul_serial(std::size_t m, std::size_t k, std::size_t n,
                   const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_omp(std::size_t m, std::size_t k, std::size_t n, const double* a,
                const double* b, double* c) {
  // Rows are independent; per-element accumulation order matches serial.
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
    std::size_t i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul(std::size_t m, std::size_t k, std::size_t n, const double* a,
            const double* b, double* c) {
  if (use_parallel(m * k * n)) {
    matmul_omp(m, k, n, a, b, c);
  } else {
    matmul_serial(m, k, n, a, b, c);
  }
}

void matmul_nt_serial(std::size_t m, std::size_t k, std::size_t n,
                      const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] = dot_serial(k, a + i * k, b + j * k);
    }
  }
}

void matmul_nt_omp(std::size_t m, std::size_t k, std::size_t n,
                   const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
    std::size_t i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] = dot_serial(k, a + i * k, b + j * k);
    }
  }
}

void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c) {
  if (use_parallel(m * k * n)) {
    matmul_nt_omp(m, k, n, a, b, c);
  } else {
    matmul_nt_serial(m, k, n, a, b, c);
  }
}

void matmul_tn_serial(std::size_t m, std::size_t k, std::size_t n,
                      const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < m; ++p) acc += a[p * k + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_tn_omp(std::size_t m, std::size_t k, std::size_t n,
                   const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(k); ++ii) {
    std::size_t i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < m; ++p) acc += a[p * k + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c) {
  if (use_parallel(m * k * n)) {
    matmul_tn_omp(m, k, n, a, b, c);
  } else {
    matmul_tn_serial(m, k, n, a, b, c);
  }
}

// ---- matvec -----------------------------------------------------------

void matvec_serial(std::size_t m, std::size_t k, const double* a,
                   const double* x, double* y) {
  for (std::size_t i = 0; i < m; ++i) y[i] = dot_serial(k, a + i * k, x);
}

void matvec(std::size_t m, std::size_t k, const double* a, const double* x,
            double* y) {
  if (use_parallel(m * k)) {
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
      std::size_t i = static_cast<std::size_t>(ii);
      y[i] = dot_serial(k, a + i * k, x);
    }
  } else {
    matvec_serial(m, k, a, x, y);
  }
}

void matvec_t_serial(std::size_t m, std::size_t k, const double* a,
                     const double* x, double* y) {
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += a[i * k + j] * x[i];
    y[j] = acc;
  }
}

void matvec_t(std::size_t m, std::size_t k, const double* a, const double* x,
              double* y) {
  if (use_parallel(m * k)) {
#pragma omp parallel for schedule(static)
    for (long long jj = 0; jj < static_cast<long long>(k); ++jj) {
      std::size_t j = static_cast<std::size_t>(jj);
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += a[i * k + j] * x[i];
      y[j] = acc;
    }
  } else {
    matvec_t_serial(m, k, a, x, y);
  }
}

// ---- second-order descriptors ------------------------------------------

void gram_diag_serial(std::size_t n_rows, std::size_t d, const double* f,
                      double* out) {
  double inv_n = 1.0 / static_cast<double>(n_rows);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) {
      double v = f[n * d + j];
      acc += v * v;
    }
    out[j] = acc * inv_n;
  }
}

void gram_diag_omp(std::size_t n_rows, std::size_t d, const double* f,
                   double* out) {
  double inv_n = 1.0 / static_cast<double>(n_rows);
#pragma omp parallel for schedule(static)
  for (long long jj = 0; jj < static_cast<long long>(d); ++jj) {
    std::size_t j = static_cast<std::size_t>(jj);
    double acc = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) {
      double v = f[n * d + j];
      acc += v * v;
    }
    out[j] = acc * inv_n;
  }
}

void gram_diag(std::size_t n_rows, std::size_t d, const double* f,
               double* out) {
  if (use_parallel(n_rows * d)) {
    gram_diag_omp(n_rows, d, f, out);
  } else {
    gram_diag_serial(n_rows, d, f, out);
  }
}

void gram_var_serial(std::size_t n_rows, std::size_t d, const double* f,
                     double* mean_scratch, double* out) {
  double inv_n = 1.0 / static_cast<double>(n_rows);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) acc += f[n * d + j];
    mean_scratch[j] = acc * inv_n;
  }
  for (std::size_t j = 0; j < d; ++j) {
    double mu = mean_scratch[j];
    double acc = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) {
      double v = f[n * d + j] - mu;
      acc += v * v;
    }
    out[j] = acc * inv_n;
  }
}

void gram_var(std::size_t n_rows, std::size_t d, const double* f,
              double* mean_scratch, double* out) {
  if (!use_parallel(n_rows * d)) {
    gram_var_serial(n_rows, d, f, mean_scratch, out);
    return;
  }
  double inv_n = 1.0 / static_cast<double>(n_rows);
#pragma omp parallel for schedule(static)
  for (long long jj = 0; jj < static_cast<long long>(d); ++jj) {
    std::size_t j = static_cast<std::size_t>(jj);
    double acc = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) acc += f[n * d + j];
    double mu = acc * inv_n;
    mean_scratch[j] = mu;
    double var = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) {
      double v = f[n * d + j] - mu;
      var += v * v;
    }
    out[j] = var * inv_n;
  }
}

// ---- pairwise row cosines ------------------------------------------------

namespace {
void row_norms(std::size_t rows, std::size_t d, const double* x, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    out[i] = std::sqrt(dot_serial(d, x + i * d, x + i * d));
  }
}
}  // namespace

void cosine_matrix_serial(std::size_t m, std::size_t n, std::size_t d,
                          const double* a, const double* f, double* norm_a,
                          double* norm_f, double* out) {
  row_norms(m, d, a, norm_a);
  row_norms(n, d, f, norm_f);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] =
          dot_serial(d, a + i * d, f + j * d) / (norm_a[i] * norm_f[j]);
    }
  }
}

void cosine_matrix_omp(std::size_t m, std::size_t n, std::size_t d,
                       const double* a, const double* f, double* norm_a,
                       double* norm_f, double* out) {
  row_norms(m, d, a, norm_a);
  row_norms(n, d, f, norm_f);
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
    std::size_t i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] =
          dot_serial(d, a + i * d, f + j * d) / (norm_a[i] * norm_f[j]);
    }
  }
}

void cosine_matrix(std::size_t m, std::size_t n, std::size_t d,
                   const double* a, const double* f, double* norm_a,
                   double* norm_f, double* out) {
  if (use_parallel(m * n * d)) {
    cosine_matrix_omp(m, n, d, a, f, norm_a, norm_f, out);
  } else {
    cosine_matrix_serial(m, n, d, a, f, norm_a, norm_f, out);
  }
}

}  // namespace gapl::kernels
