#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support.hpp"

using namespace dsur;

namespace {

// Cox-de Boor recursion straight from the definition.
double cox_de_boor(const std::vector<double>& t, std::size_t i, std::size_t order, double x) {
  if (order == 1) return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  double v = 0.0;
  const double d1 = t[i + order - 1] - t[i], d2 = t[i + order] - t[i + 1];
  if (d1 > 0) v += (x - t[i]) / d1 * cox_de_boor(t, i, order - 1, x);
  if (d2 > 0) v += (t[i + order] - x) / d2 * cox_de_boor(t, i + 1, order - 1, x);
  return v;
}

double correlation(const Tensor& z, std::size_t a, std::size_t b) {
  const std::size_t n = z.rows();
  double ma = 0, mb = 0;
  for (std::size_t r = 0; r < n; ++r) {
    ma += z(r, a);
    mb += z(r, b);
  }
  ma /= n;
  mb /= n;
  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t r = 0; r < n; ++r) {
    saa += (z(r, a) - ma) * (z(r, a) - ma);
    sbb += (z(r, b) - mb) * (z(r, b) - mb);
    sab += (z(r, a) - ma) * (z(r, b) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

ScenarioSpec small_spec(std::uint64_t seed = 0) {
  ScenarioSpec s;
  s.n = 40;
  s.H = 6;
  s.H0 = 3;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Locations, SupportAndMean) {
  Rng rng(1);
  const Tensor s = sample_locations(100000, rng);
  double m0 = 0, m1 = 0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    ASSERT_GE(s(i, 0), 0.0);
    ASSERT_LE(s(i, 0), 10.0);
    ASSERT_GE(s(i, 1), 0.0);
    ASSERT_LE(s(i, 1), 10.0);
    m0 += s(i, 0);
    m1 += s(i, 1);
  }
  EXPECT_NEAR(m0 / 1e5, 5.0, 0.03);
  EXPECT_NEAR(m1 / 1e5, 5.0, 0.03);
  Rng a(2), b(2);
  EXPECT_EQ(sample_locations(10, a), sample_locations(10, b));
}

TEST(Inputs, IndependentWhenRhoIsZero) {
  Rng rng(3);
  const Tensor z = sample_inputs(100000, 5, 0.0, rng);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) EXPECT_NEAR(correlation(z, a, b), 0.0, 0.02);
}

TEST(Inputs, CompoundSymmetricCorrelation) {
  Rng rng(4);
  const Tensor z = sample_inputs(100000, 5, 0.1, rng);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) EXPECT_NEAR(correlation(z, a, b), 0.1, 0.02);
  EXPECT_NO_THROW(cholesky(compound_symmetric(5, 0.1)));
}

TEST(Inputs, RhoOutsidePositiveDefiniteRange) {
  Rng rng(5);
  EXPECT_THROW(sample_inputs(3, 5, -0.25, rng), ConfigError);
  EXPECT_THROW(sample_inputs(3, 5, 1.0, rng), ConfigError);
  EXPECT_NO_THROW(sample_inputs(3, 5, -0.2 + 1e-9, rng));
}

TEST(BSpline, MatchesRecursionOracle) {
  const auto basis = BSplineBasis::uniform(-3.0, 3.0, 5, 4);
  ASSERT_EQ(basis.count(), 9u);
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const double x = rng.uniform(-3.0, 3.0);
    const auto got = basis.evaluate(x);
    for (std::size_t i = 0; i < basis.count(); ++i)
      EXPECT_NEAR(got[i], cox_de_boor(basis.knots(), i, 4, x), 1e-12) << "x=" << x << " i=" << i;
  }
}

TEST(BSpline, PartitionOfUnityAndRange) {
  const auto basis = BSplineBasis::uniform(-3.0, 3.0, 5, 4);
  for (double x = -3.0; x <= 3.0; x += 0.0137) {
    const auto v = basis.evaluate(x);
    double s = 0.0;
    for (double b : v) {
      EXPECT_GE(b, 0.0);
      EXPECT_LE(b, 1.0);
      s += b;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  // Right end and clamping.
  EXPECT_NEAR(basis.evaluate(3.0).back(), 1.0, 1e-15);
  EXPECT_EQ(basis.evaluate(7.0), basis.evaluate(3.0));
  EXPECT_EQ(basis.evaluate(-9.0), basis.evaluate(-3.0));
}

TEST(BSpline, TensorProductFeatures) {
  const auto basis = BSplineBasis::uniform(-3.0, 3.0, 5, 4);
  Rng rng(7);
  const std::vector<std::vector<int>> tuples{{0, 1, 2}, {4, 4, 4}, {8, -1, 3}, {-1, -1, -1}};
  for (int t = 0; t < 50; ++t) {
    const Tensor z = Tensor::vector({rng.normal(), rng.normal(), rng.normal()});
    const Tensor f = bspline_features(z, basis, tuples);
    for (std::size_t k = 0; k < tuples.size(); ++k) {
      double want = 1.0;
      for (std::size_t d = 0; d < 3; ++d)
        if (tuples[k][d] >= 0) want *= cox_de_boor(basis.knots(), tuples[k][d], 4, std::clamp(z[d], -3.0, 3.0));
      EXPECT_NEAR(f[k], want, 1e-12);
      EXPECT_GE(f[k], 0.0);
      EXPECT_LE(f[k], 1.0);
    }
  }
  EXPECT_THROW(bspline_features(Tensor::vector({0.0, 0.0}), basis, tuples), ShapeError);
}

TEST(CoefSurface, KernelDiagonalAndPositivity) {
  Rng rng(8);
  const Tensor k = exponential_kernel(sample_locations(6, rng), 2.5, 3.0);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(k(i, i), 2.5);
  EXPECT_THROW(sample_coef_surface(sample_locations(3, rng), 0.0, 1.0, rng), ConfigError);
}

TEST(CoefSurface, CoincidentSitesAgree) {
  Rng rng(9);
  Tensor sites = sample_locations(5, rng);
  sites(3, 0) = sites(1, 0);
  sites(3, 1) = sites(1, 1);
  for (int t = 0; t < 20; ++t) {
    const Tensor eta = sample_coef_surface(sites, 7.0, 5.0, rng);
    EXPECT_LT(std::abs(eta[3] - eta[1]), 1e-3);
  }
}

TEST(CoefSurface, EmpiricalCovarianceMatchesKernel) {
  Rng rng(10);
  const Tensor sites = sample_locations(5, rng);
  const Tensor k = exponential_kernel(sites, 6.0, 5.0);
  const int draws = 10000;
  Tensor acc = Tensor::matrix(5, 5);
  std::vector<double> mean(5, 0.0);
  std::vector<Tensor> all;
  for (int d = 0; d < draws; ++d) {
    all.push_back(sample_coef_surface(sites, 6.0, 5.0, rng));
    for (std::size_t i = 0; i < 5; ++i) mean[i] += all.back()[i] / draws;
  }
  for (const auto& e : all)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) acc(i, j) += (e[i] - mean[i]) * (e[j] - mean[j]) / (draws - 1);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(acc(i, j), k(i, j), 0.1 * k(i, j)) << i << "," << j;
}

TEST(Presets, ScenarioValues) {
  const auto s1 = ScenarioSpec::preset("s1");
  EXPECT_EQ(s1.n, 600u);
  EXPECT_EQ(s1.H, 100u);
  EXPECT_EQ(s1.H0, 20u);
  EXPECT_EQ(s1.alpha2.lo, 5.0);
  EXPECT_EQ(s1.alpha2.hi, 10.0);
  EXPECT_EQ(s1.ell.lo, 4.0);
  EXPECT_EQ(s1.ell.hi, 8.0);
  EXPECT_EQ(s1.noise_var, 1.0);
  const auto s7 = ScenarioSpec::preset("s7");
  EXPECT_EQ(s7.n, 6000u);
  EXPECT_EQ(s7.H, 10u);
  EXPECT_EQ(s7.H0, 20u);
  EXPECT_EQ(s7.noise_var, 0.1);
  const auto m2 = ScenarioSpec::preset("m2");
  EXPECT_EQ(m2.kind, TruthKind::Gp);
  EXPECT_EQ(m2.n * (m2.H + m2.H0), 20000u);
  EXPECT_THROW(ScenarioSpec::preset("s99"), ConfigError);
}

TEST(Generate, DegenerateRangesCollapseToIntercept) {
  ScenarioSpec s = small_spec(3);
  s.alpha2 = {0.0, 0.0};
  s.beta = {0.0, 0.0};
  s.noise_var = 1e-30;
  const auto g = generate(s);
  for (const Dataset* d : {&g.train, &g.test})
    for (double y : d->responses.values()) EXPECT_NEAR(y, 0.5, 1e-12);
}

TEST(Generate, ResponseDecompositionIsExact) {
  for (auto kind : {TruthKind::Basis, TruthKind::Gp}) {
    ScenarioSpec s = small_spec(4);
    s.kind = kind;
    s.interaction_order = 2;
    const auto g = generate(s);
    for (int split = 0; split < 2; ++split) {
      const Dataset& d = split ? g.test : g.train;
      const Tensor& f = split ? g.f_test : g.f_train;
      const Tensor& e = split ? g.noise_test : g.noise_train;
      for (std::size_t h = 0; h < d.sims(); ++h)
        for (std::size_t i = 0; i < d.n(); ++i) {
          double fixed = g.beta0;
          for (std::size_t j = 0; j < s.q; ++j) fixed += d.fine_covariates(i, j) * g.beta[j];
          ASSERT_EQ(d.responses(h, i), (fixed + f(h, i)) + e(h, i));
        }
    }
  }
}

TEST(Generate, TruthIsSumOfSurfacesTimesFeatures) {
  ScenarioSpec s = small_spec(5);
  s.interaction_order = 2;
  const auto g = generate(s);
  const auto basis = truth_basis(s);
  // Recover each surface from the generator's own stream layout.
  std::vector<Tensor> eta(s.k_true);
  for (std::size_t k = 0; k < s.k_true; ++k) {
    Rng surface_rng = Rng(s.seed).child(100 + k);
    eta[k] = sample_coef_surface(g.train.sites, g.alpha2[k], g.ell[k], surface_rng);
  }
  for (std::size_t h = 0; h < g.train.sims(); ++h) {
    const Tensor zh = Tensor::vector({g.train.inputs.row(h).begin(), g.train.inputs.row(h).end()});
    const Tensor b = bspline_features(zh, basis, g.basis_tuples);
    for (std::size_t i = 0; i < g.train.n(); ++i) {
      double want = 0.0;
      for (std::size_t k = 0; k < s.k_true; ++k) want += b[k] * eta[k][i];
      EXPECT_NEAR(g.f_train(h, i), want, 1e-10);
    }
  }
}

TEST(Generate, HyperparametersWithinRanges) {
  const auto g = generate(small_spec(6));
  ASSERT_EQ(g.alpha2.size(), 25u);
  ASSERT_EQ(g.basis_tuples.size(), 25u);
  for (std::size_t k = 0; k < 25; ++k) {
    EXPECT_GE(g.alpha2[k], 5.0);
    EXPECT_LE(g.alpha2[k], 10.0);
    EXPECT_GE(g.ell[k], 4.0);
    EXPECT_LE(g.ell[k], 8.0);
    for (int idx : g.basis_tuples[k]) {
      EXPECT_GE(idx, 0);
      EXPECT_LT(idx, 9);
    }
  }
  for (double b : g.beta) {
    EXPECT_GE(b, -1.5);
    EXPECT_LE(b, 1.5);
  }
}

TEST(Generate, InteractionOrderLimitsActiveDimensions) {
  ScenarioSpec s = small_spec(7);
  s.interaction_order = 2;
  const auto g = generate(s);
  for (const auto& t : g.basis_tuples) EXPECT_EQ(std::count_if(t.begin(), t.end(), [](int v) { return v >= 0; }), 2);
  s.interaction_order = 6;
  EXPECT_THROW(generate(s), ConfigError);
}

TEST(Generate, SplitIsPartition) {
  const auto g = generate(small_spec(8));
  EXPECT_EQ(g.train_ids.size(), 6u);
  EXPECT_EQ(g.test_ids.size(), 3u);
  std::set<std::size_t> all(g.train_ids.begin(), g.train_ids.end());
  all.insert(g.test_ids.begin(), g.test_ids.end());
  EXPECT_EQ(all.size(), 9u);
  EXPECT_EQ(*all.rbegin(), 8u);
}

TEST(Generate, SeedDeterminism) {
  for (auto kind : {TruthKind::Basis, TruthKind::Gp}) {
    ScenarioSpec s = small_spec(9);
    s.kind = kind;
    const auto a = generate(s), b = generate(s);
    EXPECT_EQ(a.train.responses, b.train.responses);
    EXPECT_EQ(a.test.responses, b.test.responses);
    EXPECT_EQ(a.train.inputs, b.train.inputs);
    EXPECT_EQ(a.f_test, b.f_test);
    EXPECT_EQ(a.train_ids, b.train_ids);
    EXPECT_EQ(a.snr, b.snr);
    s.seed = 10;
    EXPECT_NE(generate(s).train.responses, a.train.responses);
  }
}

TEST(Generate, GpCapIsEnforced) {
  ScenarioSpec s = ScenarioSpec::preset("m2");
  try {
    generate(s);
    FAIL() << "expected a configuration error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("reduce n"), std::string::npos);
  }
  s.n = 300;
  s.gp_cap = 3000;
  EXPECT_NO_THROW(s.validate());
}

TEST(Generate, ScenarioSixSignalToNoise) {
  // Full-size draw at the default seed; roughly a minute and a half.
  const auto g = generate(ScenarioSpec::preset("s6"));
  std::cout << "scenario 6 empirical SNR " << g.snr << "\n";
  EXPECT_TRUE(std::isfinite(g.snr));
  EXPECT_GE(g.snr, 2.0);
  EXPECT_LE(g.snr, 5.0);
}
