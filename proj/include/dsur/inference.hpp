#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dsur/dataset.hpp"
#include "dsur/error.hpp"
#include "dsur/model.hpp"
#include "dsur/parallel.hpp"
#include "dsur/rng.hpp"

namespace dsur {

// Divisor of the residual sum of squares in the per-draw noise variance:
// Half uses 2nH, Full uses nH.
enum class NoiseNormalizer { Half, Full };

struct InferenceConfig {
  std::size_t draws = 500;
  NoiseNormalizer normalizer = NoiseNormalizer::Full;
  double noise_floor = 1e-8;
  std::size_t samples_per_draw = 0;  // 0 picks enough to reach 100 samples per point
  double level = 0.95;
};

struct PosteriorDraw {
  SurrogateParams masked_params;
  double noise_var = 0.0;
};

struct Posterior {
  ModelConfig config;
  Standardizer standardizer;
  std::vector<PosteriorDraw> draws;
};

// F dropout-mask draws of the fitted parameters, each paired with the noise
// variance of its masked predictions on the training data.
inline Posterior draw_posterior(const Surrogate& fitted, const Dataset& data, std::size_t draws,
                                Rng& rng, NoiseNormalizer normalizer = NoiseNormalizer::Full,
                                double noise_floor = 1e-8) {
  if (draws == 0) throw ConfigError("draw_posterior: at least one draw is required");
  data.validate();
  const Tensor sites = fitted.standardizer.sites(data.sites);
  const Tensor inputs = fitted.standardizer.inputs(data.inputs);
  const double denom = (normalizer == NoiseNormalizer::Half ? 2.0 : 1.0) * static_cast<double>(data.pairs());

  Posterior post{fitted.config, fitted.standardizer, std::vector<PosteriorDraw>(draws)};
  const std::uint64_t base = rng.next_u64();
  parallel_for(draws, [&](std::size_t f) {
    Rng draw_rng(derive_seed(base, f));
    const SurrogateMask mask = sample_mask(fitted.config, fitted.params, draw_rng);
    PosteriorDraw& d = post.draws[f];
    d.masked_params = apply_mask(fitted.params, mask);
    const Tensor pred = predict_grid(d.masked_params, sites, data.fine_covariates, inputs);
    double sse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double r = data.responses[i] - pred[i];
      sse += r * r;
    }
    d.noise_var = std::max(sse / denom, noise_floor);
  });
  return post;
}

// Composition sampling at one query point: per draw, samples_per_draw values
// from Normal(masked prediction, noise variance of that draw).
inline std::vector<double> predictive_samples(const Posterior& post, const Tensor& s, const Tensor& x,
                                              const Tensor& z, Rng& rng,
                                              std::size_t samples_per_draw = 1) {
  if (post.draws.empty()) throw UsageError("predictive_samples: no posterior draws");
  const Tensor s_std = post.standardizer.sites(s);
  const Tensor z_std = post.standardizer.inputs(z);
  std::vector<double> out;
  out.reserve(post.draws.size() * samples_per_draw);
  for (const auto& d : post.draws) {
    const double mean = predict_mean(d.masked_params, s_std, x, z_std);
    const double sd = std::sqrt(d.noise_var);
    for (std::size_t r = 0; r < samples_per_draw; ++r) out.push_back(rng.normal(mean, sd));
  }
  return out;
}

struct PredictiveSummary {
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
};

// Type-7 (linear interpolation) sample quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline PredictiveSummary summarize(std::span<const double> samples, double level = 0.95) {
  if (samples.size() < 2) throw UsageError("summarize: at least two samples are required");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("summarize: level must lie in (0, 1)");
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double tail = 0.5 * (1.0 - level);
  PredictiveSummary s;
  s.mean = std::clamp(mean, sorted.front(), sorted.back());
  s.sd = std::sqrt(ss / (n - 1.0));
  s.lower = quantile_sorted(sorted, tail);
  s.upper = quantile_sorted(sorted, 1.0 - tail);
  s.level = level;
  return s;
}

// Predictive summaries for every (simulation, site) pair of a query dataset
// (its responses are ignored): result[h * n + i]. Noise for draw f at query
// simulation h comes from its own stream, so the output does not depend on
// the thread count.
inline std::vector<PredictiveSummary> predict_dataset(const Posterior& post, const Dataset& query,
                                                      std::uint64_t seed,
                                                      std::size_t samples_per_draw = 1,
                                                      double level = 0.95) {
  if (post.draws.empty()) throw UsageError("predict: no posterior draws");
  const std::size_t n = query.n(), sims = query.sims();
  const std::size_t per_point = post.draws.size() * samples_per_draw;
  const Tensor sites = post.standardizer.sites(query.sites);
  const Tensor inputs = post.standardizer.inputs(query.inputs);

  std::vector<PredictiveSummary> result(n * sims);
  // Simulations are processed in chunks to bound the sample buffer.
  const std::size_t budget = std::size_t{1} << 23;
  const std::size_t chunk = std::max<std::size_t>(1, budget / std::max<std::size_t>(1, n * per_point));
  for (std::size_t h0 = 0; h0 < sims; h0 += chunk) {
    const std::size_t hn = std::min(chunk, sims - h0);
    Tensor z = Tensor::matrix(hn, inputs.cols());
    std::copy_n(inputs.data() + h0 * inputs.cols(), hn * inputs.cols(), z.data());
    std::vector<double> samples(hn * n * per_point);  // [point][draw * spd + r]
    parallel_for(post.draws.size(), [&](std::size_t f) {
      const PosteriorDraw& d = post.draws[f];
      const Tensor mean = predict_grid(d.masked_params, sites, query.fine_covariates, z);
      const double sd = std::sqrt(d.noise_var);
      for (std::size_t h = 0; h < hn; ++h) {
        Rng noise(derive_seed(derive_seed(seed, f), h0 + h));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t r = 0; r < samples_per_draw; ++r)
            samples[(h * n + i) * per_point + f * samples_per_draw + r] = noise.normal(mean(h, i), sd);
      }
    });
    parallel_for(hn * n, [&](std::size_t pt) {
      result[h0 * n + pt] = summarize({samples.data() + pt * per_point, per_point}, level);
    });
  }
  return result;
}

}  // namespace dsur
