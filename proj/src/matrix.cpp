#include "slim/matrix.hpp"

#include <cmath>
#include <fmt/format.h>

#include "slim/error.hpp"

namespace slim {

Matrix::Matrix(std::size_t rows, std::size_t cols) : Matrix(rows, cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) {
    throw ConfigError(fmt::format("matrix dimensions must be positive, got {}x{}", rows, cols));
  }
  data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  if (rows_ == 0 || cols_ == 0) throw ConfigError("matrix literal must be non-empty");
  data_.reserve(rows_ * cols_);
  for (const auto& row : rows) {
    if (row.size() != cols_) throw ConfigError("ragged matrix literal");
    data_.insert(data_.end(), row.begin(), row.end());
  }
}

Matrix Matrix::column(std::initializer_list<double> values) {
  return column(std::span<const double>(values.begin(), values.size()));
}

Matrix Matrix::column(std::span<const double> values) {
  Matrix m(values.size(), 1);
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string Matrix::shape_string() const { return fmt::format("{}x{}", rows_, cols_); }

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Matrix::add_scaled(const Matrix& other, double scale) {
  if (!same_shape(other)) {
    throw ConfigError(fmt::format("add_scaled: shape mismatch {} vs {}", shape_string(),
                                  other.shape_string()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ConfigError(fmt::format("matmul: inner dimension mismatch {} x {}", a.shape_string(),
                                  b.shape_string()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_transposed_a(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ConfigError(fmt::format("matmul_transposed_a: row mismatch {}^T x {}",
                                  a.shape_string(), b.shape_string()));
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) acc += a(k, i) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix elementwise(const Matrix& a, const Matrix& b, ElementwiseOp op) {
  if (!a.same_shape(b)) {
    throw ConfigError(fmt::format("elementwise: shape mismatch {} vs {}", a.shape_string(),
                                  b.shape_string()));
  }
  Matrix out = a;
  auto dst = out.values();
  auto rhs = b.values();
  switch (op) {
    case ElementwiseOp::kAdd:
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += rhs[i];
      break;
    case ElementwiseOp::kSub:
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= rhs[i];
      break;
    case ElementwiseOp::kHadamard:
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= rhs[i];
      break;
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Matrix scaled(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

void matvec_acc(const Matrix& a, const Matrix& x, Matrix& out) {
  if (a.cols() != x.rows() || x.cols() != 1 || out.rows() != a.rows() || out.cols() != 1) {
    throw ConfigError(fmt::format("matvec: shapes {} * {} -> {}", a.shape_string(),
                                  x.shape_string(), out.shape_string()));
  }
  const std::size_t n = a.cols();
  const double* row = a.values().data();
  for (std::size_t i = 0; i < a.rows(); ++i, row += n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += row[k] * x[k];
    out[i] += acc;
  }
}

void matvec_t_acc(const Matrix& a, const Matrix& y, Matrix& out) {
  if (a.rows() != y.rows() || y.cols() != 1 || out.rows() != a.cols() || out.cols() != 1) {
    throw ConfigError(fmt::format("matvec_t: shapes {}^T * {} -> {}", a.shape_string(),
                                  y.shape_string(), out.shape_string()));
  }
  const std::size_t n = a.cols();
  const double* row = a.values().data();
  for (std::size_t i = 0; i < a.rows(); ++i, row += n) {
    const double yi = y[i];
    for (std::size_t k = 0; k < n; ++k) out[k] += row[k] * yi;
  }
}

void outer_acc(const Matrix& y, const Matrix& x, Matrix& a) {
  if (a.rows() != y.rows() || a.cols() != x.rows() || y.cols() != 1 || x.cols() != 1) {
    throw ConfigError(fmt::format("outer: {} x {}^T into {}", y.shape_string(),
                                  x.shape_string(), a.shape_string()));
  }
  const std::size_t n = a.cols();
  double* row = a.values().data();
  for (std::size_t i = 0; i < a.rows(); ++i, row += n) {
    const double yi = y[i];
    for (std::size_t k = 0; k < n; ++k) row[k] += yi * x[k];
  }
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) {
    throw ConfigError(fmt::format("vstack: column mismatch {} over {}", top.shape_string(),
                                  bottom.shape_string()));
  }
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.values().begin(), top.values().end(), out.values().begin());
  std::copy(bottom.values().begin(), bottom.values().end(),
            out.values().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

}  // namespace slim
