#pragma once

// Small dense kernels: row-major matrices, one-sided Jacobi SVD, cyclic
// Jacobi symmetric eigensolver. Sized for d <= 64.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "ftnode/error.hpp"

namespace ftnode {

using Vec = std::vector<double>;

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw InvalidInput("Mat: entry count does not match shape");
  }
  Mat(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw InvalidInput("Mat: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Mat diag(std::span<const double> d) {
    Mat m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Mat transpose(const Mat& m) {
  Mat t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dimensions differ");
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Vec matvec(const Mat& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw InvalidInput("matvec: dimension mismatch");
  Vec y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) y[i] += a(i, j) * x[j];
  return y;
}

inline Mat operator-(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("Mat subtraction: shape mismatch");
  Mat out = a;
  auto od = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return out;
}

inline double frobenius_norm(const Mat& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Determinant by Gaussian elimination with partial pivoting.
inline double determinant(Mat m) {
  if (m.rows() != m.cols()) throw InvalidInput("determinant: matrix is not square");
  const std::size_t n = m.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(m(i, k)) > std::abs(m(piv, k))) piv = i;
    if (m(piv, k) == 0.0) return 0.0;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
      det = -det;
    }
    det *= m(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m(i, k) / m(k, k);
      for (std::size_t j = k; j < n; ++j) m(i, j) -= f * m(k, j);
    }
  }
  return det;
}

struct SvdResult {
  Vec singular_values;  // descending
  Mat left_vectors;     // m x r, r = min(m, n)
  Mat right_vectors;    // n x r
};

namespace detail {

inline constexpr std::size_t kMaxDenseDim = 64;

inline void check_dense_input(const Mat& m, const char* who) {
  if (m.rows() == 0 || m.cols() == 0) throw InvalidInput(std::string(who) + ": empty matrix");
  if (m.rows() > kMaxDenseDim || m.cols() > kMaxDenseDim)
    throw InvalidInput(std::string(who) + ": dimension exceeds small dense regime");
  if (!m.all_finite()) throw InvalidInput(std::string(who) + ": non-finite entry");
}

// Fill zero columns of q (marked in `missing`) so that all columns are orthonormal.
inline void complete_orthonormal(Mat& q, const std::vector<bool>& missing) {
  const std::size_t n = q.rows();
  const std::size_t r = q.cols();
  std::size_t probe = 0;
  for (std::size_t j = 0; j < r; ++j) {
    if (!missing[j]) continue;
    for (; probe < n; ++probe) {
      Vec v(n, 0.0);
      v[probe] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < r; ++c) {
          if (c == j || (missing[c] && c > j)) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < n; ++i) proj += q(i, c) * v[i];
          for (std::size_t i = 0; i < n; ++i) v[i] -= proj * q(i, c);
        }
      }
      const double nv = norm2(v);
      if (nv > 1e-8) {
        for (std::size_t i = 0; i < n; ++i) q(i, j) = v[i] / nv;
        ++probe;
        break;
      }
    }
  }
}

// Flip columns so the first entry of each right vector above the noise floor is nonnegative.
inline void canonical_signs(Mat& right, Mat* left) {
  for (std::size_t j = 0; j < right.cols(); ++j) {
    for (std::size_t i = 0; i < right.rows(); ++i) {
      const double v = right(i, j);
      if (std::abs(v) <= 1e-14) continue;
      if (v < 0.0) {
        for (std::size_t k = 0; k < right.rows(); ++k) right(k, j) = -right(k, j);
        if (left)
          for (std::size_t k = 0; k < left->rows(); ++k) (*left)(k, j) = -(*left)(k, j);
      }
      break;
    }
  }
}

// Hestenes one-sided Jacobi on a tall (rows >= cols) matrix.
inline SvdResult svd_tall(const Mat& m) {
  const std::size_t rows = m.rows();
  const std::size_t n = m.cols();
  Mat a = m;
  Mat v = Mat::identity(n);
  constexpr double tol = 1e-15;
  constexpr int max_sweeps = 80;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += a(i, p) * a(i, p);
          beta += a(i, q) * a(i, q);
          gamma += a(i, p) * a(i, q);
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  Vec sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += a(i, j) * a(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult out;
  out.singular_values.resize(n);
  out.left_vectors = Mat(rows, n);
  out.right_vectors = Mat(n, n);
  std::vector<bool> missing(n, false);
  const double floor = (sigma[order[0]] > 0.0 ? sigma[order[0]] : 1.0) * 1e-300;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.singular_values[j] = sigma[src];
    for (std::size_t i = 0; i < n; ++i) out.right_vectors(i, j) = v(i, src);
    if (sigma[src] > floor) {
      for (std::size_t i = 0; i < rows; ++i) out.left_vectors(i, j) = a(i, src) / sigma[src];
    } else {
      missing[j] = true;
    }
  }
  if (std::find(missing.begin(), missing.end(), true) != missing.end())
    complete_orthonormal(out.left_vectors, missing);
  canonical_signs(out.right_vectors, &out.left_vectors);
  return out;
}

}  // namespace detail

/// Singular value decomposition m = U diag(sigma) V^T with sigma descending.
/// Right singular vectors are sign-normalized (first nonzero entry >= 0).
inline SvdResult svd(const Mat& m) {
  detail::check_dense_input(m, "svd");
  if (m.rows() >= m.cols()) return detail::svd_tall(m);
  SvdResult t = detail::svd_tall(transpose(m));
  SvdResult out{std::move(t.singular_values), std::move(t.right_vectors), std::move(t.left_vectors)};
  detail::canonical_signs(out.right_vectors, &out.left_vectors);
  return out;
}

inline double spectral_norm(const Mat& m) { return svd(m).singular_values.front(); }

struct SymEigResult {
  Vec eigenvalues;  // descending
  Mat eigenvectors; // columns
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline SymEigResult sym_eig(const Mat& m) {
  detail::check_dense_input(m, "sym_eig");
  if (m.rows() != m.cols()) throw InvalidInput("sym_eig: matrix is not square");
  const std::size_t n = m.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-12) throw InvalidInput("sym_eig: matrix is not symmetric");

  Mat a = m;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (m(i, j) + m(j, i));
  Mat v = Mat::identity(n);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diag += a(i, i) * a(i, i);
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    }
    if (off == 0.0 || off <= 1e-32 * diag) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymEigResult out{Vec(n), Mat(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.eigenvalues[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, j) = v(i, order[j]);
  }
  detail::canonical_signs(out.eigenvectors, nullptr);
  return out;
}

}  // namespace ftnode
