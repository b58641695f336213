#pragma once

// Dense 64-bit linear algebra used by every other module: a row-major Matrix,
// Cholesky solves, cyclic Jacobi eigendecomposition and power iteration.
// All reductions run in a fixed order so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rbr/error.hpp"

namespace rbr {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw Error(ErrorCode::DimensionMismatch, "matrix data length does not match shape");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  Vector col(std::size_t c) const {
    Vector v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ----------------------------------------------------------------------
// Vector helpers
// ----------------------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm1(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return s;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

inline double trace(const Matrix& m) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) t += m(i, i);
  return t;
}

// ----------------------------------------------------------------------
// Products
// ----------------------------------------------------------------------

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

/// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::DimensionMismatch, "matmul inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// aᵀ * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::DimensionMismatch, "matmul_tn row counts differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

/// a * bᵀ
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::DimensionMismatch, "matmul_nt column counts differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

/// aᵀa, exploiting symmetry.
inline Matrix gram(const Matrix& a) {
  const std::size_t n = a.cols();
  Matrix g(n, n);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    for (std::size_t i = 0; i < n; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto grow = g.row(i);
      for (std::size_t j = i; j < n; ++j) grow[j] += aki * arow[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

/// a * x
inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw Error(ErrorCode::DimensionMismatch, "matvec length mismatch");
  Vector out(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) out[r] = dot(a.row(r), x);
  return out;
}

/// aᵀ * x
inline Vector matvec_t(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw Error(ErrorCode::DimensionMismatch, "matvec_t length mismatch");
  Vector out(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    auto arow = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) out[c] += xr * arow[c];
  }
  return out;
}

inline Matrix add_diagonal(Matrix m, double value) {
  for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) m(i, i) += value;
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::DimensionMismatch, "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// ----------------------------------------------------------------------
// Cholesky
// ----------------------------------------------------------------------

/// Lower-triangular Cholesky factor of an SPD matrix, reusable across solves.
/// A pivot at or below 1e-12·trace/n triggers one retry with
/// 1e-10·trace/n added to the diagonal before NotPositiveDefinite is raised.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& m) {
    if (m.rows() != m.cols()) throw Error(ErrorCode::DimensionMismatch, "Cholesky needs a square matrix");
    check_symmetric(m);
    n_ = m.rows();
    const double mean_diag = n_ ? trace(m) / static_cast<double>(n_) : 0.0;
    const double floor = 1e-12 * mean_diag;
    if (!factor(m, 0.0, floor) && !factor(m, 1e-10 * mean_diag, floor))
      throw Error(ErrorCode::NotPositiveDefinite,
                  "pivot below " + std::to_string(floor) + " after jitter retry");
  }

  std::size_t size() const noexcept { return n_; }
  double jitter() const noexcept { return jitter_; }

  void solve_in_place(std::span<double> b) const {
    if (b.size() != n_) throw Error(ErrorCode::DimensionMismatch, "Cholesky rhs length mismatch");
    for (std::size_t i = 0; i < n_; ++i) {
      auto li = l_.row(i);
      double s = b[i];
      for (std::size_t k = 0; k < i; ++k) s -= li[k] * b[k];
      b[i] = s / li[i];
    }
    for (std::size_t ii = n_; ii-- > 0;) {
      double s = b[ii];
      for (std::size_t k = ii + 1; k < n_; ++k) s -= l_(k, ii) * b[k];
      b[ii] = s / l_(ii, ii);
    }
  }

  Vector solve(std::span<const double> b) const {
    Vector x(b.begin(), b.end());
    solve_in_place(x);
    return x;
  }

  /// Solves for every column of rhs at once; rows are swept so memory access stays contiguous.
  Matrix solve(const Matrix& rhs) const {
    if (rhs.rows() != n_) throw Error(ErrorCode::DimensionMismatch, "Cholesky rhs rows mismatch");
    Matrix x = rhs;
    const std::size_t k_cols = rhs.cols();
    for (std::size_t i = 0; i < n_; ++i) {
      auto xi = x.row(i);
      for (std::size_t k = 0; k < i; ++k) {
        const double lik = l_(i, k);
        if (lik == 0.0) continue;
        auto xk = x.row(k);
        for (std::size_t c = 0; c < k_cols; ++c) xi[c] -= lik * xk[c];
      }
      const double inv = 1.0 / l_(i, i);
      for (std::size_t c = 0; c < k_cols; ++c) xi[c] *= inv;
    }
    for (std::size_t ii = n_; ii-- > 0;) {
      auto xi = x.row(ii);
      for (std::size_t k = ii + 1; k < n_; ++k) {
        const double lki = l_(k, ii);
        if (lki == 0.0) continue;
        auto xk = x.row(k);
        for (std::size_t c = 0; c < k_cols; ++c) xi[c] -= lki * xk[c];
      }
      const double inv = 1.0 / l_(ii, ii);
      for (std::size_t c = 0; c < k_cols; ++c) xi[c] *= inv;
    }
    return x;
  }

 private:
  static void check_symmetric(const Matrix& m) {
    const double scale = std::max(1.0, max_abs(m.data()));
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (std::abs(m(i, j) - m(j, i)) > 1e-10 * scale)
          throw Error(ErrorCode::InvalidArgument, "matrix is not symmetric");
  }

  bool factor(const Matrix& m, double jitter, double floor) {
    l_ = Matrix(n_, n_);
    jitter_ = jitter;
    for (std::size_t j = 0; j < n_; ++j) {
      auto lj = l_.row(j);
      double d = m(j, j) + jitter - dot(lj.first(j), lj.first(j));
      if (!(d > floor)) return false;
      const double ljj = std::sqrt(d);
      lj[j] = ljj;
      for (std::size_t i = j + 1; i < n_; ++i) {
        auto li = l_.row(i);
        li[j] = (m(i, j) - dot(li.first(j), lj.first(j))) / ljj;
      }
    }
    return true;
  }

  std::size_t n_ = 0;
  double jitter_ = 0.0;
  Matrix l_;
};

/// Solves M·X = rhs for symmetric positive-definite M.
inline Matrix solve_spd(const Matrix& m, const Matrix& rhs) { return Cholesky(m).solve(rhs); }

inline Vector solve_spd(const Matrix& m, std::span<const double> rhs) { return Cholesky(m).solve(rhs); }

// ----------------------------------------------------------------------
// Symmetric eigendecomposition
// ----------------------------------------------------------------------

struct EigenDecomposition {
  Vector values;   // descending
  Matrix vectors;  // column i pairs with values[i]
};

namespace detail {

/// Householder reduction of symmetric v to tridiagonal form; on return v holds
/// the accumulated orthogonal transform, d the diagonal and e the subdiagonal
/// (e[0] = 0).
inline void tridiagonalize(Matrix& v, Vector& d, Vector& e) {
  const std::size_t n = v.rows();
  for (std::size_t j = 0; j < n; ++j) d[j] = v(n - 1, j);
  for (std::size_t i = n - 1; i > 0; --i) {
    double scale = 0.0, h = 0.0;
    for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (std::size_t j = 0; j < i; ++j) {
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
        v(j, i) = 0.0;
      }
    } else {
      for (std::size_t k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0.0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        v(j, i) = f;
        g = e[j] + v(j, j) * f;
        for (std::size_t k = j + 1; k < i; ++k) {
          g += v(k, j) * d[k];
          e[k] += v(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (std::size_t k = j; k < i; ++k) v(k, j) -= f * e[k] + g * d[k];
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
      }
    }
    d[i] = h;
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (std::size_t k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
      for (std::size_t j = 0; j <= i; ++j) {
        double g = 0.0;
        for (std::size_t k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (std::size_t k = 0; k <= i; ++k) v(k, j) -= g * d[k];
      }
    }
    for (std::size_t k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = v(n - 1, j);
    v(n - 1, j) = 0.0;
  }
  v(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

/// Implicit QL on the tridiagonal (d, e). w holds the transform transposed
/// (row k = k-th basis vector) and receives the eigenvectors as rows.
inline void tridiagonal_ql(Vector& d, Vector& e, Matrix& w) {
  const std::size_t n = d.size();
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  double f = 0.0, tst1 = 0.0;
  const double eps = std::ldexp(1.0, -52);
  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n - 1 && std::abs(e[m]) > eps * tst1) ++m;
    if (m > l) {
      std::size_t iter = 0;
      do {
        if (++iter > 60) throw Error(ErrorCode::NoConvergence, "tridiagonal QL iteration cap reached");
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0.0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        f += h;
        p = d[m];
        double c = 1.0, c2 = 1.0, c3 = 1.0, s = 0.0, s2 = 0.0;
        const double el1 = e[l + 1];
        for (std::size_t i = m; i-- > l;) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = std::hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          auto wi = w.row(i);
          auto wn = w.row(i + 1);
          for (std::size_t k = 0; k < n; ++k) {
            const double t = wn[k];
            wn[k] = s * wi[k] + c * t;
            wi[k] = c * wi[k] - s * t;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

}  // namespace detail

/// Householder tridiagonalization followed by implicit QL. Each eigenvector
/// is sign-normalized so that its largest-magnitude entry (first one on ties)
/// is positive.
inline EigenDecomposition eig_sym_descending(const Matrix& m) {
  if (m.rows() != m.cols()) throw Error(ErrorCode::DimensionMismatch, "eig_sym needs a square matrix");
  const std::size_t n = m.rows();
  if (n == 0) return {};
  Matrix a = m;
  for (std::size_t i = 0; i < n; ++i)  // symmetrize exactly
    for (std::size_t j = 0; j < i; ++j) a(i, j) = a(j, i) = 0.5 * (m(i, j) + m(j, i));
  for (double v : a.data())
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "eig_sym input has non-finite entries");
  Vector d(n), e(n);
  detail::tridiagonalize(a, d, e);
  Matrix vt = transpose(a);  // rows are eigenvectors
  detail::tridiagonal_ql(d, e, vt);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return d[x] > d[y]; });

  EigenDecomposition out{Vector(n), Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = order[i];
    out.values[i] = d[src];
    auto v = vt.row(src);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v[k]) > std::abs(v[arg])) arg = k;
    const double sign = v[arg] < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, i) = sign * v[k];
  }
  return out;
}

// ----------------------------------------------------------------------
// Spectral norm
// ----------------------------------------------------------------------

/// Largest eigenvalue of DᵀD by power iteration (at most 1000 steps).
inline double spectral_norm_sq(const Matrix& d, double tol = 1e-6) {
  if (d.empty()) throw Error(ErrorCode::InvalidArgument, "spectral_norm_sq of empty matrix");
  const std::size_t n = d.cols();
  // fixed, non-symmetric start so no eigenvector is orthogonal by construction
  Vector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * std::sin(1.0 + static_cast<double>(i));
  double nv = norm2(v);
  for (double& x : v) x /= nv;

  double lambda = 0.0;
  for (int it = 0; it < 1000; ++it) {
    Vector w = matvec_t(d, matvec(d, v));
    const double rayleigh = dot(v, w);
    const double nw = norm2(w);
    if (nw == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
    if (it > 0 && std::abs(rayleigh - lambda) < tol * std::abs(rayleigh)) {
      lambda = rayleigh;
      break;
    }
    lambda = rayleigh;
  }
  return lambda;
}

}  // namespace rbr
