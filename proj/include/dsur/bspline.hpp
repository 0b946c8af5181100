#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "dsur/error.hpp"
#include "dsur/tensor.hpp"

namespace dsur {

// Clamped B-spline basis of a given order (degree + 1) on [lo, hi].
class BSplineBasis {
public:
  // `interior` equally spaced interior knots; boundary knots repeated `order` times.
  static BSplineBasis uniform(double lo, double hi, std::size_t interior, std::size_t order) {
    if (!(lo < hi)) throw ConfigError("bspline: empty knot span");
    if (order == 0) throw ConfigError("bspline: order must be positive");
    std::vector<double> knots(order, lo);
    for (std::size_t j = 1; j <= interior; ++j)
      knots.push_back(lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(interior + 1));
    knots.insert(knots.end(), order, hi);
    return BSplineBasis(std::move(knots), order);
  }

  BSplineBasis(std::vector<double> knots, std::size_t order) : knots_(std::move(knots)), order_(order) {
    if (knots_.size() < 2 * order_) throw ConfigError("bspline: too few knots for the order");
  }

  std::size_t order() const noexcept { return order_; }
  std::size_t count() const noexcept { return knots_.size() - order_; }
  double lo() const noexcept { return knots_[order_ - 1]; }
  double hi() const noexcept { return knots_[count()]; }
  const std::vector<double>& knots() const noexcept { return knots_; }

  // All basis values at x; x outside [lo, hi] is clamped to the boundary.
  std::vector<double> evaluate(double x) const {
    x = std::clamp(x, lo(), hi());
    const std::size_t p = order_ - 1;  // degree
    // Knot span s with knots[s] <= x < knots[s+1]; the right end uses the last span.
    std::size_t s = p;
    while (s + 1 < count() && x >= knots_[s + 1]) ++s;

    // Triangular Cox-de Boor evaluation of the order nonzero functions.
    std::vector<double> n(order_, 0.0), left(order_, 0.0), right(order_, 0.0);
    n[0] = 1.0;
    for (std::size_t j = 1; j <= p; ++j) {
      left[j] = x - knots_[s + 1 - j];
      right[j] = knots_[s + j] - x;
      double saved = 0.0;
      for (std::size_t r = 0; r < j; ++r) {
        const double temp = n[r] / (right[r + 1] + left[j - r]);
        n[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      n[j] = saved;
    }
    std::vector<double> out(count(), 0.0);
    for (std::size_t r = 0; r <= p; ++r) out[s - p + r] = n[r];
    return out;
  }

private:
  std::vector<double> knots_;
  std::size_t order_;
};

// Products of per-dimension basis values: feature k is
// prod_d B_{tuples[k][d]}(z_d), where a negative index leaves dimension d out
// of the product.
inline Tensor bspline_features(const Tensor& z, const BSplineBasis& basis,
                               const std::vector<std::vector<int>>& tuples) {
  std::vector<std::vector<double>> per_dim;
  per_dim.reserve(z.size());
  for (double v : z.values()) per_dim.push_back(basis.evaluate(v));
  Tensor out({tuples.size()});
  for (std::size_t k = 0; k < tuples.size(); ++k) {
    if (tuples[k].size() != z.size()) throw ShapeError("bspline_features: tuple length differs from input");
    double prod = 1.0;
    for (std::size_t d = 0; d < z.size(); ++d)
      if (tuples[k][d] >= 0) prod *= per_dim[d].at(static_cast<std::size_t>(tuples[k][d]));
    out[k] = prod;
  }
  return out;
}

}  // namespace dsur
