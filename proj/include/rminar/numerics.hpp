#pragma once

// Small dense linear algebra: matrices here are at most a few dozen rows
// (companion matrices, their Kronecker squares, and (p+2)x(p+2) normal
// equations), so everything is plain row-major storage and O(n^3) kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "rminar/errors.hpp"

namespace rminar {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ == 0 ? 0 : init.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) fail(ErrorKind::InvalidSpec, "ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) fail(ErrorKind::InvalidSpec, "matrix product dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) fail(ErrorKind::InvalidSpec, "matrix-vector dimension mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

inline Vector operator*(const Matrix& a, const Vector& x) { return a * std::span<const double>(x); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double max_abs(const Matrix& m) { return max_abs(std::span<const double>(m.data())); }

/// Solves A x = b by Gaussian elimination with scaled partial pivoting,
/// followed by two rounds of iterative refinement.
/// Throws SingularMatrix when a pivot falls below 1e-12 of its row scale.
inline Vector solve(const Matrix& a, std::span<const double> b) {
  if (!a.square()) fail(ErrorKind::InvalidSpec, "solve: matrix is not square");
  const std::size_t n = a.rows();
  if (b.size() != n) fail(ErrorKind::InvalidSpec, "solve: right-hand side has wrong length");

  Matrix lu = a;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Vector scale(n);
  for (std::size_t i = 0; i < n; ++i) {
    scale[i] = max_abs(a.row(i));
    if (scale[i] == 0.0) fail(ErrorKind::SingularMatrix, "solve: zero row " + std::to_string(i));
  }

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = -1.0;
    for (std::size_t i = k; i < n; ++i) {
      const double r = std::abs(lu(i, k)) / scale[perm[i]];
      if (r > best) {
        best = r;
        piv = i;
      }
    }
    if (best < 1e-12) fail(ErrorKind::SingularMatrix, "solve: pivot below tolerance at column " + std::to_string(k));
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(piv, j));
      std::swap(perm[k], perm[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      lu(i, k) = f;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
    }
  }

  auto substitute = [&](std::span<const double> rhs) {
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = rhs[perm[i]];
      for (std::size_t j = 0; j < i; ++j) s -= lu(i, j) * y[j];
      y[i] = s;
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = y[i];
      for (std::size_t j = i + 1; j < n; ++j) s -= lu(i, j) * y[j];
      y[i] = s / lu(i, i);
    }
    return y;
  };

  Vector x = substitute(b);
  for (int round = 0; round < 2; ++round) {
    Vector r(n);
    for (std::size_t i = 0; i < n; ++i) {
      long double s = b[i];
      for (std::size_t j = 0; j < n; ++j) s -= static_cast<long double>(a(i, j)) * x[j];
      r[i] = static_cast<double>(s);
    }
    const Vector dx = substitute(r);
    for (std::size_t i = 0; i < n; ++i) x[i] += dx[i];
  }
  for (double v : x)
    if (!std::isfinite(v)) fail(ErrorKind::SingularMatrix, "solve: non-finite solution");
  return x;
}

inline Vector solve(const Matrix& a, const Vector& b) { return solve(a, std::span<const double>(b)); }

inline Matrix inverse(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix inv(n, n);
  Vector e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    const Vector col = solve(a, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

/// Block matrix [a_ij * B].
inline Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t r = 0; r < b.rows(); ++r)
        for (std::size_t s = 0; s < b.cols(); ++s) k(i * b.rows() + r, j * b.cols() + s) = aij * b(r, s);
    }
  return k;
}

/// Largest eigenvalue modulus. Companion matrices of signed coefficients
/// routinely have a complex-conjugate dominant pair, so this goes through a
/// Hessenberg-QR eigensolver rather than power iteration.
inline double spectral_radius(const Matrix& a) {
  if (!a.square()) fail(ErrorKind::InvalidSpec, "spectral_radius: matrix is not square");
  if (!a.all_finite()) fail(ErrorKind::InvalidSpec, "spectral_radius: non-finite entries");
  const std::size_t n = a.rows();
  if (n == 0 || max_abs(a) == 0.0) return 0.0;
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a(i, j);
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) fail(ErrorKind::NoConvergence, "spectral_radius: eigenvalue iteration failed");
  double rho = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) rho = std::max(rho, std::abs(es.eigenvalues()[i]));
  return rho;
}

struct NnlsResult {
  Vector x;
  std::vector<bool> at_bound;  ///< true where x_j is held at zero by the constraint
  std::size_t iterations = 0;
  /// max_j of |gradient_j| on free coordinates and max(gradient_j, 0) on bound
  /// ones, relative to the problem scale.
  double kkt_residual = 0.0;
};

/// Lawson-Hanson active-set NNLS on the normal-equation form
/// min 0.5 x'Gx - c'x subject to x >= 0, with G symmetric positive semidefinite.
inline NnlsResult nnls_gram(const Matrix& g, std::span<const double> c, std::size_t max_iterations = 0) {
  const std::size_t k = g.rows();
  if (!g.square() || c.size() != k) fail(ErrorKind::InvalidSpec, "nnls: dimension mismatch");
  if (max_iterations == 0) max_iterations = 30 * (k + 1);

  double scale = max_abs(c);
  for (std::size_t j = 0; j < k; ++j) scale = std::max(scale, std::abs(g(j, j)));
  if (scale == 0.0) scale = 1.0;
  const double tol = 1e-13 * scale;

  NnlsResult res;
  res.x.assign(k, 0.0);
  std::vector<bool> passive(k, false);

  auto gradient = [&](const Vector& x) {
    Vector w(k);
    for (std::size_t j = 0; j < k; ++j) {
      long double s = c[j];
      for (std::size_t l = 0; l < k; ++l) s -= static_cast<long double>(g(j, l)) * x[l];
      w[j] = static_cast<double>(s);
    }
    return w;
  };

  auto solve_passive = [&]() {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < k; ++j)
      if (passive[j]) idx.push_back(j);
    Matrix sub(idx.size(), idx.size());
    Vector rhs(idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a) {
      rhs[a] = c[idx[a]];
      for (std::size_t b = 0; b < idx.size(); ++b) sub(a, b) = g(idx[a], idx[b]);
    }
    Vector s(k, 0.0);
    if (!idx.empty()) {
      const Vector z = solve(sub, rhs);
      for (std::size_t a = 0; a < idx.size(); ++a) s[idx[a]] = z[a];
    }
    return s;
  };

  Vector w = gradient(res.x);
  std::size_t iter = 0;
  while (true) {
    std::size_t best = k;
    double best_w = tol;
    for (std::size_t j = 0; j < k; ++j)
      if (!passive[j] && w[j] > best_w) {
        best_w = w[j];
        best = j;
      }
    if (best == k) break;
    if (++iter > max_iterations) fail(ErrorKind::NoConvergence, "nnls: active-set iteration cap reached");
    passive[best] = true;

    Vector s = solve_passive();
    while (true) {
      bool feasible = true;
      for (std::size_t j = 0; j < k; ++j)
        if (passive[j] && s[j] <= 0.0) feasible = false;
      if (feasible) break;
      if (++iter > max_iterations) fail(ErrorKind::NoConvergence, "nnls: active-set iteration cap reached");
      double alpha = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j)
        if (passive[j] && s[j] <= 0.0) alpha = std::min(alpha, res.x[j] / (res.x[j] - s[j]));
      for (std::size_t j = 0; j < k; ++j) res.x[j] += alpha * (s[j] - res.x[j]);
      for (std::size_t j = 0; j < k; ++j)
        if (passive[j] && res.x[j] <= 1e-15 * (1.0 + max_abs(res.x))) {
          passive[j] = false;
          res.x[j] = 0.0;
        }
      s = solve_passive();
    }
    res.x = s;
    w = gradient(res.x);
  }

  res.iterations = iter;
  res.at_bound.resize(k);
  double kkt = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    res.at_bound[j] = !passive[j];
    kkt = std::max(kkt, passive[j] ? std::abs(w[j]) : std::max(w[j], 0.0));
  }
  res.kkt_residual = kkt / scale;
  return res;
}

/// min ||A x - b||_2 subject to x >= 0.
inline NnlsResult nnls(const Matrix& a, std::span<const double> b, std::size_t max_iterations = 0) {
  if (a.rows() != b.size()) fail(ErrorKind::InvalidSpec, "nnls: A.rows != b.length");
  const std::size_t k = a.cols();
  Matrix g(k, k);
  Vector c(k, 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) {
      c[j] += a(i, j) * b[i];
      for (std::size_t l = 0; l < k; ++l) g(j, l) += a(i, j) * a(i, l);
    }
  return nnls_gram(g, c, max_iterations);
}

inline NnlsResult nnls(const Matrix& a, const Vector& b, std::size_t max_iterations = 0) {
  return nnls(a, std::span<const double>(b), max_iterations);
}

}  // namespace rminar
