#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace slim {

/// Dense row-major matrix of doubles. Column vectors are n x 1 matrices.
class Matrix {
 public:
  Matrix() = default;
  /// Zero-filled. Both dimensions must be positive.
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, double fill);
  /// Row-major nested initializer: Matrix{{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix column(std::initializer_list<double> values);
  static Matrix column(std::span<const double> values);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  void fill(double value);
  /// In-place this += scale * other (optimizer and gradient accumulation path).
  void add_scaled(const Matrix& other, double scale = 1.0);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class ElementwiseOp { kAdd, kSub, kHadamard };

Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_transposed_a(const Matrix& a, const Matrix& b);
Matrix elementwise(const Matrix& a, const Matrix& b, ElementwiseOp op);
Matrix transpose(const Matrix& a);
Matrix scaled(const Matrix& a, double s);

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  return elementwise(a, b, ElementwiseOp::kAdd);
}
inline Matrix operator-(const Matrix& a, const Matrix& b) {
  return elementwise(a, b, ElementwiseOp::kSub);
}
inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  return elementwise(a, b, ElementwiseOp::kHadamard);
}

// Hot-path kernels used by the recurrent cell. Output buffers must already
// have the right size; these accumulate (+=) rather than overwrite.

/// out += A * x, where x is a column vector.
void matvec_acc(const Matrix& a, const Matrix& x, Matrix& out);
/// out += A^T * y.
void matvec_t_acc(const Matrix& a, const Matrix& y, Matrix& out);
/// A += y * x^T.
void outer_acc(const Matrix& y, const Matrix& x, Matrix& a);

/// Concatenate column vectors top to bottom.
Matrix vstack(const Matrix& top, const Matrix& bottom);

}  // namespace slim
