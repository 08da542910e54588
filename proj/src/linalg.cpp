#include "dccd/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace dccd::linalg {

namespace {
constexpr double kSymmetryTol = 1e-8;  // relative to max |entry|

void require_symmetric(const Matrix& a, const char* who) {
  if (a.rows() != a.cols()) throw std::invalid_argument(std::string(who) + ": matrix not square");
  const double scale = std::max(max_abs(a), 1e-300);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      if (std::abs(a.at(i, j) - a.at(j, i)) > kSymmetryTol * scale) {
        throw std::invalid_argument(std::string(who) + ": matrix not symmetric");
      }
    }
  }
}
}  // namespace

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("multiply: dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, j) += aik * b.at(k, j);
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("subtract: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

bool all_finite(const Matrix& a) {
  for (double v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix covariance(const Matrix& samples, bool already_centered) {
  const std::size_t c = samples.rows();
  const std::size_t s = samples.cols();
  if (s == 0 || c == 0) throw std::invalid_argument("covariance: empty input");

  Matrix centered = samples;
  if (!already_centered) {
    for (std::size_t i = 0; i < c; ++i) {
      double mean = 0.0;
      for (std::size_t k = 0; k < s; ++k) mean += centered.at(i, k);
      mean /= static_cast<double>(s);
      for (std::size_t k = 0; k < s; ++k) centered.at(i, k) -= mean;
    }
  }

  // fill the upper triangle and mirror so the result is symmetric exactly
  Matrix out(c, c);
  const double inv_s = 1.0 / static_cast<double>(s);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i; j < c; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < s; ++k) dot += centered.at(i, k) * centered.at(j, k);
      out.at(i, j) = dot * inv_s;
      out.at(j, i) = out.at(i, j);
    }
  }
  return out;
}

SpdFactor cholesky(const Matrix& a) {
  require_symmetric(a, "cholesky");
  const std::size_t n = a.rows();

  Matrix sym(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));

  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double pivot = sym.at(j, j);
    for (std::size_t k = 0; k < j; ++k) pivot -= l.at(j, k) * l.at(j, k);
    if (!(pivot > 0.0)) throw NotPositiveDefiniteError(j);
    const double diag = std::sqrt(pivot);
    l.at(j, j) = diag;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = sym.at(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = v / diag;
    }
  }
  return SpdFactor{std::move(l), n};
}

Matrix regularize_spd(const Matrix& a, double epsilon) {
  require_symmetric(a, "regularize_spd");
  if (!(epsilon > 0.0)) throw std::invalid_argument("regularize_spd: epsilon must be positive");
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) out.at(i, i) += epsilon;
  return out;
}

Matrix solve_lower(const SpdFactor& l, const Matrix& b) {
  const std::size_t n = l.dim;
  if (l.lower.rows() != n || b.rows() != n) throw std::invalid_argument("solve_lower: dimension mismatch");
  Matrix x(n, b.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const double diag = l.lower.at(i, i);
    if (diag == 0.0) throw std::runtime_error("solve_lower: singular factor (zero diagonal)");
    for (std::size_t col = 0; col < b.cols(); ++col) {
      double v = b.at(i, col);
      for (std::size_t k = 0; k < i; ++k) v -= l.lower.at(i, k) * x.at(k, col);
      x.at(i, col) = v / diag;
    }
  }
  return x;
}

}  // namespace dccd::linalg
