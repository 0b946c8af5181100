#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "dsur/dsur.hpp"

namespace dsur::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double relative_frobenius(const Tensor& got, const Tensor& want) {
  return frobenius_norm(got - want) / std::max(frobenius_norm(want), 1e-300);
}

// |a - b| / max(|a|, |b|, 1e-8)
inline double relative_gap(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dsur_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dsur::testing
