#pragma once

// Dense row-major linear algebra used by the rest of the library.
//
// Random numbers: every stochastic component draws from `Rng`, which is
// std::mt19937_64 (fully specified by the C++ standard) seeded with the raw
// 64-bit seed. Conversions on top of the raw 64-bit words are fixed here so
// that a reimplementation can reproduce values exactly:
//   uniform()  = (word >> 11) * 2^-53                         in [0, 1)
//   normal()   = Box-Muller on two uniforms u1, u2:
//                r = sqrt(-2 ln(1 - u1)), t = 2*pi*u2,
//                returns r*cos(t), then r*sin(t) on the next call
//   below(n)   = word % n
//   shuffle    = Fisher-Yates from the last index down, j = below(i + 1)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "real/errors.hpp"

namespace real {

struct RngSeed {
  std::uint64_t value = 0;
  friend bool operator==(RngSeed, RngSeed) = default;
};

/// Derives an independent stream seed from a base seed and a stream tag.
inline RngSeed derive_seed(RngSeed base, std::uint64_t stream) {
  // splitmix64 finalizer over (base + golden * (stream + 1))
  std::uint64_t z = base.value + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return RngSeed{z ^ (z >> 31)};
}

class Rng {
 public:
  explicit Rng(RngSeed seed) : engine_(seed.value) {}

  std::uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorKind::shape, "matrix data length " + std::to_string(data_.size()) +
                                        " != " + std::to_string(rows_) + "x" +
                                        std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw Error(ErrorKind::shape, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diag(std::initializer_list<double> d) {
    Matrix m(d.size(), d.size());
    std::size_t i = 0;
    for (double v : d) {
      m(i, i) = v;
      ++i;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::string shape_str() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {
inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::shape, std::string(op) + ": shape mismatch a" + a.shape_str() +
                                      " vs b" + b.shape_str());
  }
}
}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::shape,
                "matmul: a" + a.shape_str() + " cols != b" + b.shape_str() + " rows");
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

/// aᵀ·b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::shape,
                "matmul_tn: a" + a.shape_str() + " rows != b" + b.shape_str() + " rows");
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ar = a.row(k).data();
    const double* br = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

/// a·bᵀ without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::shape,
                "matmul_nt: a" + a.shape_str() + " cols != b" + b.shape_str() + " cols");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "add");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "sub");
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return out;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

inline Matrix& operator+=(Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "add");
  auto o = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a;
}

/// a + s·I for square a.
inline Matrix add_diagonal(Matrix a, double s) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::shape, "add_diagonal: non-square " + a.shape_str());
  for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += s;
  return a;
}

inline Matrix symmetrize(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = 0.5 * (a(i, j) + a(j, i));
  return out;
}

inline Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.empty() && top.cols() == 0) return bottom;
  if (top.cols() != bottom.cols()) {
    throw Error(ErrorKind::shape, "vstack: " + top.shape_str() + " vs " + bottom.shape_str());
  }
  std::vector<double> data(top.values().begin(), top.values().end());
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return Matrix(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

/// Appends `extra` zero columns on the right.
inline Matrix pad_cols(const Matrix& a, std::size_t extra) {
  Matrix out(a.rows(), a.cols() + extra);
  for (std::size_t i = 0; i < a.rows(); ++i)
    std::copy(a.row(i).begin(), a.row(i).end(), out.row(i).begin());
  return out;
}

inline Matrix row_slice(const Matrix& a, std::size_t begin, std::size_t end) {
  Matrix out(end - begin, a.cols());
  std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(begin * a.cols()),
            a.values().begin() + static_cast<std::ptrdiff_t>(end * a.cols()),
            out.values().begin());
  return out;
}

inline Matrix select_rows(const Matrix& a, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = a.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

inline double frobenius(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

/// ‖a − b‖_F / ‖b‖_F, falling back to the absolute norm when b is zero.
inline double rel_frobenius(const Matrix& a, const Matrix& b) {
  const double denom = frobenius(b);
  const double num = frobenius(a - b);
  return denom > 0.0 ? num / denom : num;
}

inline bool all_finite(const Matrix& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](double v) { return std::isfinite(v); });
}

inline bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

/// Lower-triangular L with a = L·Lᵀ. Throws SingularError at the first
/// non-positive pivot.
inline Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::shape, "cholesky: non-square " + a.shape_str());
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) {
      std::ostringstream os;
      os << "cholesky: non-positive pivot " << d << " at index " << j;
      throw SingularError(j, os.str());
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      const double* li = l.row(i).data();
      const double* lj = l.row(j).data();
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      l(i, j) = s / ljj;
    }
  }
  return l;
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, returned
/// symmetrized as (M + Mᵀ)/2.
inline Matrix sym_inverse(const Matrix& a) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::shape, "sym_inverse: non-square " + a.shape_str());
  if (!is_symmetric(a, 1e-9 * std::max(1.0, max_abs(a)))) {
    throw Error(ErrorKind::parameter, "sym_inverse: input not symmetric");
  }
  const std::size_t n = a.rows();
  const Matrix l = cholesky(a);
  // Linv = L⁻¹ (lower triangular), then A⁻¹ = Linvᵀ·Linv.
  Matrix linv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    linv(j, j) = 1.0 / l(j, j);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = j; k < i; ++k) s -= l(i, k) * linv(k, j);
      linv(i, j) = s / l(i, i);
    }
  }
  Matrix inv = matmul_tn(linv, linv);
  return symmetrize(inv);
}

/// (XᵀX + ridge·I)⁻¹ formed without rounding the Gram matrix: accumulation,
/// Cholesky and the triangular inverse run in long double, and only the
/// result is rounded to double.
inline Matrix gram_inverse(const Matrix& x, double ridge) {
  if (x.empty()) throw Error(ErrorKind::shape, "gram_inverse: empty input " + x.shape_str());
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) {
    throw Error(ErrorKind::parameter, "gram_inverse: ridge must be finite and >= 0");
  }
  using ld = long double;
  const std::size_t n = x.cols();
  std::vector<ld> a(n * n, 0.0L);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = x.row(r).data();
    for (std::size_t i = 0; i < n; ++i) {
      const ld xi = xr[i];
      if (xi == 0.0L) continue;
      ld* ai = &a[i * n];
      for (std::size_t j = 0; j <= i; ++j) ai[j] += xi * static_cast<ld>(xr[j]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += ridge;

  std::vector<ld> l(n * n, 0.0L);
  for (std::size_t j = 0; j < n; ++j) {
    ld d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0.0L) || !std::isfinite(static_cast<double>(d))) {
      std::ostringstream os;
      os << "gram_inverse: non-positive pivot " << static_cast<double>(d) << " at index " << j;
      throw SingularError(j, os.str());
    }
    const ld ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      ld s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
  std::vector<ld> li(n * n, 0.0L);
  for (std::size_t j = 0; j < n; ++j) {
    li[j * n + j] = 1.0L / l[j * n + j];
    for (std::size_t i = j + 1; i < n; ++i) {
      ld s = 0.0L;
      for (std::size_t k = j; k < i; ++k) s -= l[i * n + k] * li[k * n + j];
      li[i * n + j] = s / l[i * n + i];
    }
  }
  Matrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      ld s = 0.0L;
      for (std::size_t k = i; k < n; ++k) s += li[k * n + i] * li[k * n + j];
      inv(i, j) = static_cast<double>(s);
      inv(j, i) = inv(i, j);
    }
  }
  return inv;
}

/// Entries i.i.d. normal(0, scale²) from Rng(seed), filled row-major.
inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double scale, RngSeed seed) {
  if (rows == 0 || cols == 0) {
    throw Error(ErrorKind::shape, "gaussian_matrix: zero dimension (" + std::to_string(rows) +
                                      "x" + std::to_string(cols) + ")");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorKind::parameter, "gaussian_matrix: scale must be positive and finite");
  }
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

}  // namespace real
