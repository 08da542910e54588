#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace dccd::linalg {

// Dense row-major matrix. Everything here targets the small sizes used by
// the statistical transforms (channel counts around 8, nothing past a few
// hundred rows); no attempt at blocking or sparsity.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw std::invalid_argument("matrix: ragged initializer");
      std::size_t c = 0;
      for (double v : row) m.at(r, c++) = v;
      ++r;
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

Matrix multiply(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& a);

// Raised when a pivot of the factorization is not strictly positive.
class NotPositiveDefiniteError : public std::runtime_error {
 public:
  explicit NotPositiveDefiniteError(std::size_t pivot_index)
      : std::runtime_error("cholesky: non-positive pivot at index " + std::to_string(pivot_index)),
        pivot(pivot_index) {}
  std::size_t pivot;
};

// Lower Cholesky factor with the convention Sigma = L * L^T.
struct SpdFactor {
  Matrix lower;
  std::size_t dim = 0;
};

// (1/S) * centered * centered^T over the columns of a C x S sample matrix.
// Row means are subtracted first unless the data is already centered.
Matrix covariance(const Matrix& samples, bool already_centered = false);

// Factors a symmetric matrix; the input is symmetrized before elimination
// and must be symmetric within 1e-8 relative tolerance.
SpdFactor cholesky(const Matrix& a);

// a + epsilon * I, epsilon > 0.
Matrix regularize_spd(const Matrix& a, double epsilon);

// Solves L * X = b by forward substitution.
Matrix solve_lower(const SpdFactor& l, const Matrix& b);

}  // namespace dccd::linalg
