#pragma once

#include <cmath>
#include <span>
#include <string>

#include "dsur/error.hpp"

namespace dsur {

struct EvalReport {
  double rmspe = 0.0;
  double coverage = 0.0;
  double mean_length = 0.0;
  double misclass_rate = 0.0;
  std::size_t n_eval = 0;
};

namespace detail {
inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw UsageError(std::string(what) + ": sequences differ in length");
}
}  // namespace detail

inline double rmspe(std::span<const double> y_true, std::span<const double> y_pred) {
  detail::require_same_length(y_true.size(), y_pred.size(), "rmspe");
  if (y_true.empty()) throw UsageError("rmspe: empty input");
  double ss = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double d = y_true[i] - y_pred[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(y_true.size()));
}

// Fraction of truths inside their closed interval [lower, upper].
inline double coverage(std::span<const double> y_true, std::span<const double> lower,
                       std::span<const double> upper) {
  detail::require_same_length(y_true.size(), lower.size(), "coverage");
  detail::require_same_length(y_true.size(), upper.size(), "coverage");
  if (y_true.empty()) throw UsageError("coverage: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (lower[i] > upper[i])
      throw UsageError("coverage: lower bound exceeds upper bound at index " + std::to_string(i));
    if (lower[i] <= y_true[i] && y_true[i] <= upper[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(y_true.size());
}

inline double mean_interval_length(std::span<const double> lower, std::span<const double> upper) {
  detail::require_same_length(lower.size(), upper.size(), "mean_interval_length");
  if (lower.empty()) throw UsageError("mean_interval_length: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < lower.size(); ++i) total += upper[i] - lower[i];
  return total / static_cast<double>(lower.size());
}

// Fraction of points whose exceedance of the threshold (strict >) differs
// between truth and prediction.
inline double misclassification_rate(std::span<const double> y_true, std::span<const double> y_pred,
                                     double threshold = 4.0) {
  detail::require_same_length(y_true.size(), y_pred.size(), "misclassification_rate");
  if (y_true.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i)
    if ((y_true[i] > threshold) != (y_pred[i] > threshold)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(y_true.size());
}

inline EvalReport evaluate(std::span<const double> y_true, std::span<const double> mean,
                           std::span<const double> lower, std::span<const double> upper,
                           double threshold = 4.0) {
  EvalReport r;
  r.rmspe = rmspe(y_true, mean);
  r.coverage = coverage(y_true, lower, upper);
  r.mean_length = mean_interval_length(lower, upper);
  r.misclass_rate = misclassification_rate(y_true, mean, threshold);
  r.n_eval = y_true.size();
  return r;
}

}  // namespace dsur
