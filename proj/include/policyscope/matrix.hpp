#pragma once

#include <string>
#include <vector>

namespace policyscope {

// Dense row-major 2-D array of doubles. All numeric state in the project
// (weights, masks, sample batches, gradients) lives in this type.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}

  static Matrix row(const std::vector<double>& values) {
    Matrix m(1, static_cast<int>(values.size()));
    m.data_ = values;
    return m;
  }
  static Matrix column(const std::vector<double>& values) {
    Matrix m(static_cast<int>(values.size()), 1);
    m.data_ = values;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * cols_ + j]; }
  double& at_flat(size_t k) { return data_[k]; }
  double at_flat(size_t k) const { return data_[k]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row_ptr(int i) { return data_.data() + static_cast<size_t>(i) * cols_; }
  const double* row_ptr(int i) const { return data_.data() + static_cast<size_t>(i) * cols_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

namespace kernels {

// C = A * B. Each output row is an independent dot-product accumulation in a
// fixed k-order, so the parallel version is bit-identical to the serial one
// for any thread count.
void gemm(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_serial(const Matrix& a, const Matrix& b, Matrix& c);

// C = A^T * B (used for weight gradients).
void gemm_at_b(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_at_b_serial(const Matrix& a, const Matrix& b, Matrix& c);

// C = A * B^T (used for input gradients).
void gemm_a_bt(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_a_bt_serial(const Matrix& a, const Matrix& b, Matrix& c);

Matrix hadamard(const Matrix& a, const Matrix& b);

}  // namespace kernels

// Global worker-thread count for the OpenMP kernels. 1 disables parallelism.
void set_threads(int n);
int max_threads();

}  // namespace policyscope
