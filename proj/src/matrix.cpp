#include "policyscope/matrix.hpp"

#include <algorithm>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace policyscope {

void set_threads(int n) {
  if (n < 1) throw std::invalid_argument("set_threads: thread count must be >= 1");
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace kernels {

namespace {

void check_gemm(const Matrix& a, const Matrix& b, const Matrix& c, int m, int k, int n,
                const char* name) {
  if (a.rows() * a.cols() == 0 || b.rows() * b.cols() == 0)
    throw std::invalid_argument(std::string(name) + ": empty operand");
  if (k <= 0 || c.rows() != m || c.cols() != n)
    throw std::invalid_argument(std::string(name) + ": shape mismatch " + a.shape_str() +
                                " x " + b.shape_str() + " -> " + c.shape_str());
}

// Row block of C = A * B, ikj order; inner loop is unit-stride over B and C.
inline void gemm_rows(const Matrix& a, const Matrix& b, Matrix& c, int i0, int i1) {
  const int k_dim = a.cols();
  const int n = b.cols();
  for (int i = i0; i < i1; ++i) {
    double* ci = c.row_ptr(i);
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int k = 0; k < k_dim; ++k) {
      const double aik = a(i, k);
      const double* bk = b.row_ptr(k);
      for (int j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

inline void gemm_at_b_rows(const Matrix& a, const Matrix& b, Matrix& c, int i0, int i1) {
  // C(i,j) = sum_k A(k,i) * B(k,j); rows of C indexed by columns of A.
  // k outermost so A and B stream through once while the C block stays hot;
  // per-element accumulation order is still ascending k.
  const int k_dim = a.rows();
  const int n = b.cols();
  for (int i = i0; i < i1; ++i) {
    double* ci = c.row_ptr(i);
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
  }
  for (int k = 0; k < k_dim; ++k) {
    const double* ak = a.row_ptr(k);
    const double* bk = b.row_ptr(k);
    for (int i = i0; i < i1; ++i) {
      const double aki = ak[i];
      double* ci = c.row_ptr(i);
      for (int j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
}

// C(i,j) = sum_k A(i,k) * B(j,k), done as A * B^T with B transposed up
// front: the k-ascending accumulation order matches the naive dot product
// bit for bit, and the inner loop vectorizes.
inline Matrix transpose(const Matrix& b) {
  Matrix t(b.cols(), b.rows());
  for (int i = 0; i < b.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) t(j, i) = b(i, j);
  return t;
}

constexpr long kParallelGrain = 16 * 1024;  // flops below this run serial

}  // namespace

void gemm_serial(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("gemm: inner dims " + a.shape_str() + " x " + b.shape_str());
  check_gemm(a, b, c, a.rows(), a.cols(), b.cols(), "gemm");
  gemm_rows(a, b, c, 0, a.rows());
}

void gemm(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("gemm: inner dims " + a.shape_str() + " x " + b.shape_str());
  check_gemm(a, b, c, a.rows(), a.cols(), b.cols(), "gemm");
  const int m = a.rows();
  const long work = static_cast<long>(m) * a.cols() * b.cols();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
#endif
  for (int i = 0; i < m; ++i) gemm_rows(a, b, c, i, i + 1);
  (void)work;
}

void gemm_at_b_serial(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("gemm_at_b: inner dims " + a.shape_str() + " x " + b.shape_str());
  check_gemm(a, b, c, a.cols(), a.rows(), b.cols(), "gemm_at_b");
  gemm_at_b_rows(a, b, c, 0, a.cols());
}

void gemm_at_b(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("gemm_at_b: inner dims " + a.shape_str() + " x " + b.shape_str());
  check_gemm(a, b, c, a.cols(), a.rows(), b.cols(), "gemm_at_b");
  const int m = a.cols();
  const long work = static_cast<long>(m) * a.rows() * b.cols();
  constexpr int kBlock = 16;  // rows per task; A and B stream once per block
  const int n_blocks = (m + kBlock - 1) / kBlock;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
#endif
  for (int blk = 0; blk < n_blocks; ++blk)
    gemm_at_b_rows(a, b, c, blk * kBlock, std::min(m, (blk + 1) * kBlock));
  (void)work;
}

void gemm_a_bt_serial(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("gemm_a_bt: inner dims " + a.shape_str() + " x " + b.shape_str());
  check_gemm(a, b, c, a.rows(), a.cols(), b.rows(), "gemm_a_bt");
  const Matrix bt = transpose(b);
  gemm_rows(a, bt, c, 0, a.rows());
}

void gemm_a_bt(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("gemm_a_bt: inner dims " + a.shape_str() + " x " + b.shape_str());
  check_gemm(a, b, c, a.rows(), a.cols(), b.rows(), "gemm_a_bt");
  const Matrix bt = transpose(b);
  const int m = a.rows();
  const long work = static_cast<long>(m) * a.cols() * b.rows();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelGrain)
#endif
  for (int i = 0; i < m; ++i) gemm_rows(a, bt, c, i, i + 1);
  (void)work;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("hadamard: shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  Matrix c(a.rows(), a.cols());
  for (size_t k = 0; k < a.size(); ++k) c.at_flat(k) = a.at_flat(k) * b.at_flat(k);
  return c;
}

}  // namespace kernels
}  // namespace policyscope
