#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dsur/bspline.hpp"
#include "dsur/dataset.hpp"
#include "dsur/error.hpp"
#include "dsur/rng.hpp"
#include "dsur/tensor.hpp"

namespace dsur {

inline constexpr double kKernelJitter = 1e-8;

enum class TruthKind {
  Basis,  // f = sum_k B_k(z) eta_k(s), eta_k independent exponential-kernel GPs
  Gp,     // f drawn jointly over (s, z) from one exponential kernel
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct ScenarioSpec {
  std::string name = "custom";
  TruthKind kind = TruthKind::Basis;
  std::size_t n = 600, H = 100, H0 = 20;
  std::size_t p = 5, q = 2;
  double rho = 0.1;
  Range alpha2{5.0, 10.0};
  Range ell{4.0, 8.0};
  double noise_var = 1.0;
  Range beta{-1.5, 1.5};
  double beta0 = 0.5;
  std::size_t k_true = 25;
  // Input dimensions entering each truth product; 0 means all p.
  std::size_t interaction_order = 0;
  std::size_t spline_order = 4;
  std::size_t spline_knots = 5;
  Range knot_span{-3.0, 3.0};
  std::size_t gp_cap = 8000;  // largest joint dimension factorized for Gp truth
  std::uint64_t seed = 0;

  void validate() const {
    if (n == 0 || H == 0 || H0 == 0) throw ConfigError("scenario: n, H and H0 must be positive");
    if (p == 0) throw ConfigError("scenario: p must be positive");
    for (const auto* r : {&alpha2, &ell, &beta, &knot_span})
      if (!(r->lo <= r->hi)) throw ConfigError("scenario: range lower bound exceeds upper bound");
    if (alpha2.lo < 0.0) throw ConfigError("scenario: spatial variance must be nonnegative");
    if (!(ell.lo > 0.0)) throw ConfigError("scenario: spatial scale must be positive");
    if (!(noise_var > 0.0)) throw ConfigError("scenario: noise variance must be positive");
    if (!(knot_span.lo < knot_span.hi)) throw ConfigError("scenario: empty knot span");
    if (interaction_order > p)
      throw ConfigError("scenario: interaction order exceeds p");
    if (p > 1 && !(rho > -1.0 / static_cast<double>(p - 1) && rho < 1.0))
      throw ConfigError("scenario: input correlation makes the covariance indefinite");
    if (kind == TruthKind::Gp && n * (H + H0) > gp_cap)
      throw ConfigError("scenario: joint GP dimension " + std::to_string(n * (H + H0)) +
                        " exceeds the cap of " + std::to_string(gp_cap) +
                        "; reduce n or raise the cap");
  }

  // Named presets: s1..s7 (basis-expansion truth) and m1..m4 (mis-specified
  // joint GP truth).
  static ScenarioSpec preset(const std::string& id) {
    ScenarioSpec s;
    s.name = id;
    auto basis = [&](std::size_t n, std::size_t h, std::size_t h0, Range a, Range l, double d) {
      s.kind = TruthKind::Basis;
      s.n = n, s.H = h, s.H0 = h0, s.alpha2 = a, s.ell = l, s.noise_var = d;
    };
    auto gp = [&](std::size_t n, std::size_t h, std::size_t h0, double d) {
      s.kind = TruthKind::Gp;
      s.n = n, s.H = h, s.H0 = h0, s.alpha2 = {1.0, 5.0}, s.ell = {1.0, 5.0}, s.noise_var = d;
    };
    if (id == "s1") basis(600, 100, 20, {5, 10}, {4, 8}, 1.0);
    else if (id == "s2") basis(600, 100, 20, {0.5, 1}, {4, 8}, 1.0);
    else if (id == "s3") basis(600, 100, 20, {0.5, 1}, {0.5, 1}, 1.0);
    else if (id == "s4") basis(6000, 20, 20, {5, 10}, {4, 8}, 1.0);
    else if (id == "s5") basis(6000, 10, 20, {5, 10}, {4, 8}, 1.0);
    else if (id == "s6") basis(6000, 10, 20, {5, 10}, {4, 8}, 0.5);
    else if (id == "s7") basis(6000, 10, 20, {5, 10}, {4, 8}, 0.1);
    else if (id == "m1") gp(1000, 15, 5, 1.0);
    else if (id == "m2") gp(2000, 6, 4, 1.0);
    else if (id == "m3") gp(1000, 15, 5, 0.5);
    else if (id == "m4") gp(2000, 6, 4, 0.5);
    else throw ConfigError("unknown scenario '" + id + "' (expected s1..s7 or m1..m4)");
    return s;
  }
};

struct GeneratedTruth {
  ScenarioSpec spec;
  Dataset train;  // H simulations
  Dataset test;   // H0 simulations
  double beta0 = 0.0;
  std::vector<double> beta;
  Tensor f_train, f_test;          // sims x n
  Tensor noise_train, noise_test;  // sims x n
  std::vector<std::size_t> train_ids, test_ids;  // original simulation indices
  std::vector<std::vector<int>> basis_tuples;  // -1 marks an unused dimension
  std::vector<double> alpha2, ell;  // per basis function (Basis) or single entry (Gp)
  double snr = 0.0;  // var(f + x^T beta) / noise_var over all pairs
};

inline Tensor sample_locations(std::size_t n, Rng& rng) {
  Tensor s = Tensor::matrix(n, 2);
  for (auto& v : s.values()) v = rng.uniform(0.0, 10.0);
  return s;
}

// (1 - rho) I + rho 1 1^T.
inline Tensor compound_symmetric(std::size_t p, double rho) {
  Tensor c = Tensor::matrix(p, p, rho);
  for (std::size_t i = 0; i < p; ++i) c(i, i) = 1.0;
  return c;
}

inline Tensor sample_inputs(std::size_t count, std::size_t p, double rho, Rng& rng) {
  if (p > 1 && !(rho > -1.0 / static_cast<double>(p - 1) && rho < 1.0))
    throw ConfigError("sample_inputs: correlation " + std::to_string(rho) +
                      " is outside the positive-definite range");
  const Tensor l = cholesky(compound_symmetric(p, rho));
  const Tensor zero({p});
  Tensor z = Tensor::matrix(count, p);
  for (std::size_t h = 0; h < count; ++h) {
    const Tensor row = mvn_sample(zero, l, rng);
    std::copy_n(row.data(), p, z.data() + h * p);
  }
  return z;
}

// alpha2 * exp(-||s_i - s_j|| / ell) over the rows of `points`.
inline Tensor exponential_kernel(const Tensor& points, double alpha2, double ell) {
  const std::size_t n = points.rows(), d = points.cols();
  Tensor k = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    k(i, i) = alpha2;
    for (std::size_t j = 0; j < i; ++j) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = points(i, c) - points(j, c);
        sq += diff * diff;
      }
      k(i, j) = k(j, i) = alpha2 * std::exp(-std::sqrt(sq) / ell);
    }
  }
  return k;
}

inline Tensor sample_gp(const Tensor& points, double alpha2, double ell, Rng& rng) {
  if (!(alpha2 > 0.0) || !(ell > 0.0))
    throw ConfigError("GP sampler: variance and scale must be positive");
  Tensor k = exponential_kernel(points, alpha2, ell);
  for (std::size_t i = 0; i < k.rows(); ++i) k(i, i) += kKernelJitter;
  return mvn_sample(Tensor({points.rows()}), cholesky(std::move(k)), rng);
}

// One exponential-kernel GP draw at the given sites.
inline Tensor sample_coef_surface(const Tensor& sites, double alpha2, double ell, Rng& rng) {
  return sample_gp(sites, alpha2, ell, rng);
}

inline BSplineBasis truth_basis(const ScenarioSpec& spec) {
  return BSplineBasis::uniform(spec.knot_span.lo, spec.knot_span.hi, spec.spline_knots, spec.spline_order);
}

// Scenario data with its full ground truth. Every random component draws from
// its own child stream of spec.seed.
inline GeneratedTruth generate(const ScenarioSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  const std::size_t n = spec.n, total = spec.H + spec.H0;

  GeneratedTruth g;
  g.spec = spec;
  Rng site_rng = root.child(0), x_rng = root.child(1), z_rng = root.child(2), beta_rng = root.child(3);
  Rng hyper_rng = root.child(4), split_rng = root.child(5), noise_rng = root.child(6);

  const Tensor sites = sample_locations(n, site_rng);
  Tensor x = Tensor::matrix(n, spec.q);
  for (auto& v : x.values()) v = x_rng.normal();
  const Tensor z = sample_inputs(total, spec.p, spec.rho, z_rng);
  g.beta0 = spec.beta0;
  for (std::size_t j = 0; j < spec.q; ++j) g.beta.push_back(beta_rng.uniform(spec.beta.lo, spec.beta.hi));

  Tensor f = Tensor::matrix(total, n);
  if (spec.kind == TruthKind::Basis) {
    const BSplineBasis basis = truth_basis(spec);
    for (std::size_t k = 0; k < spec.k_true; ++k) {
      // `order` distinct dimensions, each with a uniform basis index.
      const std::size_t order = spec.interaction_order == 0 ? spec.p : spec.interaction_order;
      std::vector<std::size_t> dims(spec.p);
      std::iota(dims.begin(), dims.end(), std::size_t{0});
      if (order < spec.p) hyper_rng.shuffle(dims.begin(), dims.end());
      std::vector<int> tuple(spec.p, -1);
      for (std::size_t d = 0; d < order; ++d)
        tuple[dims[d]] = static_cast<int>(hyper_rng.below(basis.count()));
      g.basis_tuples.push_back(std::move(tuple));
      g.alpha2.push_back(hyper_rng.uniform(spec.alpha2.lo, spec.alpha2.hi));
      g.ell.push_back(hyper_rng.uniform(spec.ell.lo, spec.ell.hi));
    }
    Tensor features = Tensor::matrix(total, spec.k_true);
    for (std::size_t h = 0; h < total; ++h) {
      const Tensor zh = Tensor::vector({z.row(h).begin(), z.row(h).end()});
      const Tensor fh = bspline_features(zh, basis, g.basis_tuples);
      std::copy_n(fh.data(), spec.k_true, features.data() + h * spec.k_true);
    }
    for (std::size_t k = 0; k < spec.k_true; ++k) {
      if (g.alpha2[k] == 0.0) continue;
      // A surface multiplied by zero in every simulation never reaches f;
      // each surface owns its stream, so skipping it changes nothing else.
      bool used = false;
      for (std::size_t h = 0; h < total && !used; ++h) used = features(h, k) != 0.0;
      if (!used) continue;
      Rng surface_rng = root.child(100 + k);
      const Tensor eta = sample_coef_surface(sites, g.alpha2[k], g.ell[k], surface_rng);
      for (std::size_t h = 0; h < total; ++h) {
        const double b = features(h, k);
        if (b == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) f(h, i) += b * eta[i];
      }
    }
  } else {
    const double a2 = hyper_rng.uniform(spec.alpha2.lo, spec.alpha2.hi);
    const double l = hyper_rng.uniform(spec.ell.lo, spec.ell.hi);
    g.alpha2 = {a2};
    g.ell = {l};
    if (a2 > 0.0) {
      Tensor points = Tensor::matrix(total * n, 2 + spec.p);
      for (std::size_t h = 0; h < total; ++h)
        for (std::size_t i = 0; i < n; ++i) {
          double* row = points.data() + (h * n + i) * (2 + spec.p);
          row[0] = sites(i, 0);
          row[1] = sites(i, 1);
          std::copy_n(z.data() + h * spec.p, spec.p, row + 2);
        }
      Rng surface_rng = root.child(100);
      f = Tensor({total, n}, [&] {
        Tensor draw = sample_gp(points, a2, l, surface_rng);
        return std::vector<double>(draw.values().begin(), draw.values().end());
      }());
    }
  }

  const double noise_sd = std::sqrt(spec.noise_var);
  Tensor noise = Tensor::matrix(total, n);
  for (auto& v : noise.values()) v = noise_sd * noise_rng.normal();
  std::vector<double> fixed(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = g.beta0;
    for (std::size_t j = 0; j < spec.q; ++j) v += x(i, j) * g.beta[j];
    fixed[i] = v;
  }
  Tensor y = Tensor::matrix(total, n);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t h = 0; h < total; ++h)
    for (std::size_t i = 0; i < n; ++i) {
      y(h, i) = (fixed[i] + f(h, i)) + noise(h, i);
      const double signal = fixed[i] - g.beta0 + f(h, i);
      sum += signal;
      sum_sq += signal * signal;
    }
  const double cnt = static_cast<double>(total * n);
  g.snr = (sum_sq / cnt - (sum / cnt) * (sum / cnt)) / spec.noise_var;

  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  split_rng.shuffle(perm.begin(), perm.end());
  g.train_ids.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(spec.H));
  g.test_ids.assign(perm.begin() + static_cast<std::ptrdiff_t>(spec.H), perm.end());
  std::sort(g.train_ids.begin(), g.train_ids.end());
  std::sort(g.test_ids.begin(), g.test_ids.end());

  auto assemble = [&](const std::vector<std::size_t>& ids, Dataset& d, Tensor& f_out, Tensor& noise_out) {
    d.sites = sites;
    d.fine_covariates = x;
    d.inputs = Tensor::matrix(ids.size(), spec.p);
    d.responses = Tensor::matrix(ids.size(), n);
    f_out = Tensor::matrix(ids.size(), n);
    noise_out = Tensor::matrix(ids.size(), n);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      std::copy_n(z.data() + ids[r] * spec.p, spec.p, d.inputs.data() + r * spec.p);
      std::copy_n(y.data() + ids[r] * n, n, d.responses.data() + r * n);
      std::copy_n(f.data() + ids[r] * n, n, f_out.data() + r * n);
      std::copy_n(noise.data() + ids[r] * n, n, noise_out.data() + r * n);
    }
  };
  assemble(g.train_ids, g.train, g.f_train, g.noise_train);
  assemble(g.test_ids, g.test, g.f_test, g.noise_test);
  return g;
}

}  // namespace dsur
