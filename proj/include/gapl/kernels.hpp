#pragma once

#include <cstddef>

// Dense inner loops shared by the tape primitives and the evaluation paths.
// Every kernel has a serial reference implementation and an OpenMP variant
// that parallelizes across independent output elements only, so results are
// bit-identical to the serial version for any thread count. The unsuffixed
// entry points dispatch on the global switch below.
namespace gapl::kernels {

// Enables/disables the OpenMP variants globally (default: enabled).
void set_parallel(bool enabled);
bool parallel_enabled();

// Work-size threshold below which the dispatchers stay serial.
inline constexpr std::size_t kParallelGrain = 16 * 1024;

// C[m x n] = A[m x k] * B[k x n]
void matmul_serial(std::size_t m, std::size_t k, std::size_t n,
                   const double* a, const double* b, double* c);
void matmul_omp(std::size_t m, std::size_t k, std::size_t n, const double* a,
                const double* b, double* c);
void matmul(std::size_t m, std::size_t k, std::size_t n, const double* a,
            const double* b, double* c);

// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt_serial(std::size_t m, std::size_t k, std::size_t n,
                      const double* a, const double* b, double* c);
void matmul_nt_omp(std::size_t m, std::size_t k, std::size_t n,
                   const double* a, const double* b, double* c);
void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c);

// C[k x n] = A[m x k]^T * B[m x n]
void matmul_tn_serial(std::size_t m, std::size_t k, std::size_t n,
                      const double* a, const double* b, double* c);
void matmul_tn_omp(std::size_t m, std::size_t k, std::size_t n,
                   const double* a, const double* b, double* c);
void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c);

// y[m] = A[m x k] * x[k]
void matvec_serial(std::size_t m, std::size_t k, const double* a,
                   const double* x, double* y);
void matvec(std::size_t m, std::size_t k, const double* a, const double* x,
            double* y);

// y[k] = A[m x k]^T * x[m]
void matvec_t_serial(std::size_t m, std::size_t k, const double* a,
                     const double* x, double* y);
void matvec_t(std::size_t m, std::size_t k, const double* a, const double* x,
              double* y);

// out[j] = (1/N) * sum_n F[n,j]^2   (per-channel mean square; diagonal of
// (1/N) F^T F computed without forming the matrix)
void gram_diag_serial(std::size_t n_rows, std::size_t d, const double* f,
                      double* out);
void gram_diag_omp(std::size_t n_rows, std::size_t d, const double* f,
                   double* out);
void gram_diag(std::size_t n_rows, std::size_t d, const double* f,
               double* out);

// out[j] = (1/N) * sum_n (F[n,j] - mu_j)^2 with mu_j = (1/N) sum_n F[n,j]
void gram_var_serial(std::size_t n_rows, std::size_t d, const double* f,
                     double* mean_scratch, double* out);
void gram_var(std::size_t n_rows, std::size_t d, const double* f,
              double* mean_scratch, double* out);

// out[i,j] = cos(A_i, F_j) for rows of A[m x d] and F[n x d]. Row norms are
// written to norm_a[m] and norm_f[n]. Throws nothing; callers validate norms.
void cosine_matrix_serial(std::size_t m, std::size_t n, std::size_t d,
                          const double* a, const double* f, double* norm_a,
                          double* norm_f, double* out);
void cosine_matrix_omp(std::size_t m, std::size_t n, std::size_t d,
                       const double* a, const double* f, double* norm_a,
                       double* norm_f, double* out);
void cosine_matrix(std::size_t m, std::size_t n, std::size_t d,
                   const double* a, const double* f, double* norm_a,
                   double* norm_f, double* out);

double dot_serial(std::size_t n, const double* a, const double* b);

}  // namespace gapl::kernels
