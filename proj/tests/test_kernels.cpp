#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "policyscope/matrix.hpp"
#include "policyscope/rng.hpp"

using namespace policyscope;

namespace {

Matrix random_matrix(int r, int c, uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (size_t k = 0; k < m.size(); ++k) m.at_flat(k) = rng.normal();
  return m;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("gemm matches a hand-rolled triple loop") {
  const Matrix a = random_matrix(7, 5, 1);
  const Matrix b = random_matrix(5, 9, 2);
  Matrix c(7, 9);
  kernels::gemm(a, b, c);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 9; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 5; ++k) acc += a(i, k) * b(k, j);
      CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("parallel gemm variants are bit-identical to the serial references") {
  set_threads(2);
  for (uint64_t seed = 0; seed < 8; ++seed) {
    const Matrix a = random_matrix(257, 33, seed * 3 + 1);
    const Matrix b = random_matrix(33, 41, seed * 3 + 2);
    Matrix c1(257, 41), c2(257, 41);
    kernels::gemm_serial(a, b, c1);
    kernels::gemm(a, b, c2);
    CHECK(bit_equal(c1, c2));

    const Matrix g = random_matrix(257, 41, seed * 3 + 3);
    Matrix d1(33, 41), d2(33, 41);
    kernels::gemm_at_b_serial(a, g, d1);
    kernels::gemm_at_b(a, g, d2);
    CHECK(bit_equal(d1, d2));

    Matrix e1(257, 33), e2(257, 33);
    kernels::gemm_a_bt_serial(g, b, e1);
    kernels::gemm_a_bt(g, b, e2);
    CHECK(bit_equal(e1, e2));
  }
  set_threads(1);
}

TEST_CASE("transpose variants agree with explicit transposition") {
  const Matrix a = random_matrix(6, 4, 11);
  const Matrix b = random_matrix(6, 3, 12);
  Matrix at(4, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) at(j, i) = a(i, j);

  Matrix c1(4, 3), c2(4, 3);
  kernels::gemm_at_b(a, b, c1);
  kernels::gemm(at, b, c2);
  for (size_t k = 0; k < c1.size(); ++k)
    CHECK(c1.at_flat(k) == doctest::Approx(c2.at_flat(k)).epsilon(1e-14));

  const Matrix w = random_matrix(5, 4, 13);
  Matrix d1(6, 5), d2(6, 5);
  kernels::gemm_a_bt(a, w, d1);
  Matrix wt(4, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) wt(j, i) = w(i, j);
  kernels::gemm(a, wt, d2);
  for (size_t k = 0; k < d1.size(); ++k)
    CHECK(d1.at_flat(k) == doctest::Approx(d2.at_flat(k)).epsilon(1e-14));
}

TEST_CASE("gemm rejects shape mismatches") {
  const Matrix a = random_matrix(3, 4, 21);
  const Matrix b = random_matrix(5, 2, 22);
  Matrix c(3, 2);
  CHECK_THROWS_AS(kernels::gemm(a, b, c), std::invalid_argument);
}

TEST_CASE("hadamard multiplies elementwise and checks shapes") {
  const Matrix a = random_matrix(3, 3, 31);
  const Matrix b = random_matrix(3, 3, 32);
  const Matrix c = kernels::hadamard(a, b);
  for (size_t k = 0; k < c.size(); ++k)
    CHECK(c.at_flat(k) == a.at_flat(k) * b.at_flat(k));
  const Matrix bad = random_matrix(2, 3, 33);
  CHECK_THROWS_AS(kernels::hadamard(a, bad), std::invalid_argument);
}

#include "policyscope/fastmath.hpp"

TEST_CASE("fastmath matches reference values and saturates sanely") {
  CHECK(policyscope::fastmath::tanh(0.0) == 0.0);
  CHECK(policyscope::fastmath::exp(0.0) == 1.0);
  Rng rng(7);
  for (int i = 0; i < 20000; ++i) {
    const double x = rng.uniform(-30.0, 30.0);
    const double t = policyscope::fastmath::tanh(x);
    const double e = policyscope::fastmath::exp(x);
    CHECK(std::abs(t - std::tanh(x)) <= 1e-13 * std::max(1.0, std::abs(std::tanh(x))));
    CHECK(std::abs(e - std::exp(x)) <= 1e-12 * std::exp(x));
  }
  CHECK(policyscope::fastmath::exp(-800.0) == 0.0);
  CHECK(policyscope::fastmath::exp(750.0) ==
        std::numeric_limits<double>::infinity());
  CHECK(policyscope::fastmath::tanh(100.0) == 1.0);
  CHECK(policyscope::fastmath::tanh(-100.0) == -1.0);
  CHECK(std::isnan(policyscope::fastmath::tanh(std::nan(""))));
  CHECK(std::isnan(policyscope::fastmath::exp(std::nan(""))));
  CHECK(policyscope::fastmath::sigmoid(0.0) == 0.5);
}

TEST_CASE("fastmath is bit-identical under any loop chunking") {
  // vector lanes vs scalar epilogue vs thread chunks must all agree
  const int n = 4099;  // deliberately not a multiple of any lane width
  std::vector<double> x(n), serial(n), chunked(n, 0.0);
  Rng rng(8);
  for (int i = 0; i < n; ++i) x[i] = rng.uniform(-25.0, 25.0);
  for (int i = 0; i < n; ++i) serial[i] = policyscope::fastmath::tanh(x[i]);

  for (int offset : {0, 1, 3, 7, 13}) {
    for (int i = 0; i < offset; ++i) chunked[i] = policyscope::fastmath::tanh(x[i]);
    set_threads(2);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = offset; i < n; ++i) chunked[i] = policyscope::fastmath::tanh(x[i]);
    set_threads(1);
    CHECK(chunked == serial);
  }
}
