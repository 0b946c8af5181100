#pragma once

#include <atomic>
#include <cmath>
#include <iostream>
#include <vector>

#include "dsur/bspline.hpp"
#include "dsur/dataset.hpp"
#include "dsur/error.hpp"
#include "dsur/tensor.hpp"

namespace dsur {

// Linear function-on-scalar regression baseline:
//   y_h(s) ~ sum_j phi_j(s) * gamma_j^T [1, z_h, x(s)]
// with phi a tensor-product cubic B-spline basis over [0, 10]^2 and a ridge
// penalty on gamma.
struct FosrModel {
  std::size_t per_dim = 8;
  std::size_t p = 0, q = 0;
  double ridge = 1.0;
  Tensor coefficients;  // (1 + p + q) x per_dim^2
  double residual_var = 0.0;

  BSplineBasis spatial_basis() const { return BSplineBasis::uniform(0.0, 10.0, per_dim - 4, 4); }
  std::size_t regressors() const noexcept { return 1 + p + q; }
  std::size_t spatial_count() const noexcept { return per_dim * per_dim; }
};

namespace detail {

// Tensor-product spatial basis values (per_dim^2, row-major in (dim0, dim1)).
inline std::vector<double> spatial_features(const BSplineBasis& basis, double s1, double s2) {
  const auto a = basis.evaluate(s1), b = basis.evaluate(s2);
  std::vector<double> out(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i * b.size() + j] = a[i] * b[j];
  return out;
}

inline std::vector<double> fosr_regressors(std::span<const double> z, std::span<const double> x) {
  std::vector<double> r{1.0};
  r.insert(r.end(), z.begin(), z.end());
  r.insert(r.end(), x.begin(), x.end());
  return r;
}

}  // namespace detail

inline double predict_fosr(const FosrModel& m, std::span<const double> s, std::span<const double> x,
                           std::span<const double> z) {
  if (s.size() != 2 || x.size() != m.q || z.size() != m.p)
    throw ShapeError("predict_fosr: query dimensions do not match the model");
  static std::atomic<bool> warned{false};
  for (double v : s)
    if (v < 0.0 || v > 10.0) {
      if (!warned.exchange(true))
        std::cerr << "warning: site outside [0, 10]^2 clamped to the basis span\n";
      break;
    }
  const auto phi = detail::spatial_features(m.spatial_basis(), s[0], s[1]);
  const auto r = detail::fosr_regressors(z, x);
  double y = 0.0;
  for (std::size_t j = 0; j < phi.size(); ++j) {
    if (phi[j] == 0.0) continue;
    double g = 0.0;
    for (std::size_t c = 0; c < r.size(); ++c) g += m.coefficients(c, j) * r[c];
    y += phi[j] * g;
  }
  return y;
}

// prediction -/+ 1.96 residual sd.
inline std::pair<double, double> fosr_interval(const FosrModel& m, double prediction) {
  const double half = 1.96 * std::sqrt(m.residual_var);
  return {prediction - half, prediction + half};
}

// Ridge least squares via the normal equations (X^T X + ridge I) g = X^T y.
inline FosrModel fit_fosr(const Dataset& data, std::size_t per_dim = 8, double ridge = 1.0) {
  data.validate();
  if (!(ridge >= 0.0)) throw ConfigError("fit_fosr: ridge penalty must be nonnegative");
  if (per_dim < 4) throw ConfigError("fit_fosr: need at least 4 spatial basis functions per dimension");
  FosrModel m;
  m.per_dim = per_dim;
  m.p = data.p();
  m.q = data.q();
  m.ridge = ridge;
  const BSplineBasis basis = m.spatial_basis();
  const std::size_t nr = m.regressors(), ns = m.spatial_count(), dim = nr * ns;

  // Unknown index c * ns + j pairs regressor c with spatial function j.
  Tensor gram = Tensor::matrix(dim, dim);
  Tensor rhs({dim});
  std::vector<std::size_t> nz_idx;
  std::vector<double> nz_val;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto phi = detail::spatial_features(basis, data.sites(i, 0), data.sites(i, 1));
    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < ns; ++j)
      if (phi[j] != 0.0) active.push_back(j);
    for (std::size_t h = 0; h < data.sims(); ++h) {
      const auto r = detail::fosr_regressors(data.inputs.row(h), data.fine_covariates.row(i));
      nz_idx.clear();
      nz_val.clear();
      for (std::size_t c = 0; c < nr; ++c)
        for (std::size_t j : active) {
          nz_idx.push_back(c * ns + j);
          nz_val.push_back(r[c] * phi[j]);
        }
      const double y = data.responses(h, i);
      for (std::size_t a = 0; a < nz_idx.size(); ++a) {
        rhs[nz_idx[a]] += nz_val[a] * y;
        double* row = gram.data() + nz_idx[a] * dim;
        for (std::size_t b = 0; b < nz_idx.size(); ++b) row[nz_idx[b]] += nz_val[a] * nz_val[b];
      }
    }
  }
  for (std::size_t d = 0; d < dim; ++d) gram(d, d) += ridge;

  Tensor l;
  try {
    l = cholesky(gram);
  } catch (const DecompositionError& e) {
    throw NumericError(std::string("fit_fosr: singular normal equations (") + e.what() +
                       "); use a positive ridge penalty");
  }
  const Tensor g = cholesky_solve(l, rhs);
  m.coefficients = Tensor::matrix(nr, ns);
  for (std::size_t c = 0; c < nr; ++c)
    for (std::size_t j = 0; j < ns; ++j) m.coefficients(c, j) = g[c * ns + j];

  double sse = 0.0;
  for (std::size_t h = 0; h < data.sims(); ++h)
    for (std::size_t i = 0; i < data.n(); ++i) {
      const double r = data.responses(h, i) -
                       predict_fosr(m, data.sites.row(i), data.fine_covariates.row(i), data.inputs.row(h));
      sse += r * r;
    }
  m.residual_var = sse / static_cast<double>(data.pairs());
  return m;
}

// Predictions for every (simulation, site) pair: out(h, i).
inline Tensor predict_fosr_grid(const FosrModel& m, const Dataset& query) {
  Tensor out = Tensor::matrix(query.sims(), query.n());
  for (std::size_t h = 0; h < query.sims(); ++h)
    for (std::size_t i = 0; i < query.n(); ++i)
      out(h, i) = predict_fosr(m, query.sites.row(i), query.fine_covariates.row(i), query.inputs.row(h));
  return out;
}

}  // namespace dsur
