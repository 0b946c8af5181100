#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dsur/error.hpp"
#include "dsur/rng.hpp"

namespace dsur {

// Dense row-major array of doubles. Rank 1 and rank 2 are the only ranks the
// library uses, but the shape is kept general.
class Tensor {
public:
  Tensor() : shape_{0} {}

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (element_count(shape_) != values_.size())
      throw ShapeError("tensor: shape holds " + std::to_string(element_count(shape_)) +
                       " elements but " + std::to_string(values_.size()) + " values given");
  }

  static Tensor vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("tensor: ragged row list");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(v));
  }

  static Tensor identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return values_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }

  std::span<double> row(std::size_t i) { return {values_.data() + i * cols(), cols()}; }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * cols(), cols()};
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }

  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

// Unrolled dot product; four accumulators keep the loop vectorizable.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < n; ++k) s0 += a[k] * b[k];
  return (s0 + s1) + (s2 + s3);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  return dot(a.data(), b.data(), a.size());
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: rank-2 tensor required");
  Tensor t = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// Matrix-vector product for a rank-2 a and rank-1 x.
inline Tensor matvec(const Tensor& a, const Tensor& x) {
  if (a.rank() != 2 || a.cols() != x.size())
    throw ShapeError("matvec: cannot apply " + a.shape_string() + " to " + x.shape_string());
  Tensor y({a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.data() + i * a.cols(), x.data(), a.cols());
  return y;
}

inline double frobenius_norm(const Tensor& a) {
  return std::sqrt(dot(a.data(), a.data(), a.size()));
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("subtract: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

// Lower-triangular L with L L^T = a. Only the lower triangle of a is read.
namespace detail {

// acc[r][c] = sum_t a[t][r] * b[t][c] over two packed 4-row groups.
inline void outer_tile(const double* a, const double* b, std::size_t width, double* acc) {
  double c[16] = {};
  for (std::size_t t = 0; t < width; ++t) {
    const double* av = a + 4 * t;
    const double* bv = b + 4 * t;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t k = 0; k < 4; ++k) c[r * 4 + k] += av[r] * bv[k];
  }
  for (std::size_t i = 0; i < 16; ++i) acc[i] = c[i];
}

}  // namespace detail

// Blocked right-looking factorization: each 64-wide panel is factored, packed
// in interleaved groups of four rows, and used for a tiled trailing update.
// Factors in place, so large kernels need only one n x n buffer.
inline Tensor cholesky(Tensor&& a) {
  if (a.rank() != 2 || a.rows() != a.cols())
    throw ShapeError("cholesky: square matrix required, got " + a.shape_string());
  const std::size_t n = a.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  const double tol = 1e-14 * std::max(max_diag, 1e-300);

  constexpr std::size_t kPanel = 64;
  constexpr std::size_t kChunk = 64;  // packed groups kept hot per update sweep
  Tensor l = std::move(a);
  double* w = l.data();
  std::vector<double> pack;
  for (std::size_t j0 = 0; j0 < n; j0 += kPanel) {
    const std::size_t j1 = std::min(n, j0 + kPanel);
    const std::size_t width = j1 - j0;

    for (std::size_t i = j0; i < n; ++i) {
      double* li = w + i * n;
      const std::size_t stop = std::min(i, j1);
      for (std::size_t j = j0; j < stop; ++j) {
        const double* lj = w + j * n;
        li[j] = (li[j] - dot(li + j0, lj + j0, j - j0)) / lj[j];
      }
      if (i < j1) {
        const double pivot = li[i] - dot(li + j0, li + j0, i - j0);
        if (!(pivot > tol))
          throw DecompositionError("cholesky: matrix not positive definite at pivot " +
                                       std::to_string(i) + " (value " + std::to_string(pivot) + ")",
                                   i);
        li[i] = std::sqrt(pivot);
      }
    }
    if (j1 == n) break;

    const std::size_t m = n - j1;
    const std::size_t groups = (m + 3) / 4;
    pack.assign(groups * width * 4, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const double* src = w + (j1 + r) * n + j0;
      double* dst = pack.data() + (r / 4) * width * 4 + r % 4;
      for (std::size_t t = 0; t < width; ++t) dst[4 * t] = src[t];
    }
    double acc[16];
    for (std::size_t c0 = 0; c0 < groups; c0 += kChunk) {
      const std::size_t c1 = std::min(groups, c0 + kChunk);
      for (std::size_t gi = c0; gi < groups; ++gi) {
        const double* pa = pack.data() + gi * width * 4;
        for (std::size_t gj = c0; gj < std::min(c1, gi + 1); ++gj) {
          detail::outer_tile(pa, pack.data() + gj * width * 4, width, acc);
          for (std::size_t r = 0; r < 4; ++r) {
            const std::size_t i = j1 + 4 * gi + r;
            if (i >= n) break;
            for (std::size_t k = 0; k < 4; ++k) {
              const std::size_t j = j1 + 4 * gj + k;
              if (j > i) break;
              w[i * n + j] -= acc[r * 4 + k];
            }
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) w[i * n + j] = 0.0;
  return l;
}

inline Tensor cholesky(const Tensor& a) { return cholesky(Tensor(a)); }

// Solves (L L^T) x = b for every column of b given the Cholesky factor.
inline Tensor cholesky_solve(const Tensor& l, const Tensor& b) {
  const std::size_t n = l.rows();
  if (b.rows() != n) throw ShapeError("cholesky_solve: right-hand side has wrong length");
  const std::size_t m = b.rank() == 1 ? 1 : b.cols();
  Tensor x = b;
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x[i * m + c];
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k * m + c];
      x[i * m + c] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x[ii * m + c];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k * m + c];
      x[ii * m + c] = s / l(ii, ii);
    }
  }
  return x;
}

// mean + L eps with eps i.i.d. standard normal.
inline Tensor mvn_sample(const Tensor& mean, const Tensor& chol_lower, Rng& rng) {
  const std::size_t n = mean.size();
  if (chol_lower.rank() != 2 || chol_lower.rows() != n || chol_lower.cols() != n)
    throw ShapeError("mvn_sample: factor " + chol_lower.shape_string() +
                     " does not match mean of length " + std::to_string(n));
  std::vector<double> eps(n);
  for (auto& e : eps) e = rng.normal();
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i)
    out[i] = mean[i] + dot(chol_lower.data() + i * n, eps.data(), i + 1);
  return out;
}

}  // namespace dsur
