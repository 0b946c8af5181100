#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsur/error.hpp"
#include "dsur/rng.hpp"
#include "dsur/tensor.hpp"

namespace dsur {

enum class Activation { ReLU, Linear, SoftPlus };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Linear: return "linear";
    case Activation::SoftPlus: return "softplus";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu" || s == "ReLU") return Activation::ReLU;
  if (s == "linear" || s == "Linear") return Activation::Linear;
  if (s == "softplus" || s == "SoftPlus") return Activation::SoftPlus;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::Linear: return x;
    case Activation::SoftPlus: return softplus(x);
  }
  return x;
}

// Derivative with respect to the pre-activation. ReLU'(0) is taken as 0.
inline double activate_grad(Activation kind, double x) {
  switch (kind) {
    case Activation::ReLU: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Linear: return 1.0;
    case Activation::SoftPlus: return 1.0 / (1.0 + std::exp(-x));
  }
  return 1.0;
}

inline Tensor activate(Activation kind, const Tensor& x) {
  Tensor y = x;
  if (kind != Activation::Linear)
    for (auto& v : y.values()) v = activate(kind, v);
  return y;
}

struct DenseLayer {
  Tensor weights;  // out x in
  Tensor bias;     // out
  Activation activation = Activation::Linear;

  std::size_t in() const noexcept { return weights.cols(); }
  std::size_t out() const noexcept { return weights.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Uniform Glorot weights, zero bias.
inline DenseLayer glorot_layer(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  DenseLayer layer{Tensor::matrix(out, in), Tensor({out}), act};
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (auto& w : layer.weights.values()) w = rng.uniform(-limit, limit);
  return layer;
}

// Entry-wise keep/drop indicators shaped like one layer's parameters.
struct LayerMask {
  Tensor weights;
  Tensor bias;
  friend bool operator==(const LayerMask&, const LayerMask&) = default;
};

struct DropoutMask {
  std::vector<LayerMask> layers;
  std::vector<double> keep;  // retention probability per layer

  friend bool operator==(const DropoutMask&, const DropoutMask&) = default;
};

// Independent Bernoulli(1 - rate) entries for every weight and bias element.
// Layers with rate 0 consume no random numbers.
inline DropoutMask sample_mask(std::span<const double> rates, std::span<const DenseLayer> layers,
                               Rng& rng) {
  if (rates.size() != layers.size())
    throw ConfigError("sample_mask: " + std::to_string(rates.size()) + " rates for " +
                      std::to_string(layers.size()) + " layers");
  DropoutMask mask;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const double rate = rates[l];
    if (!(rate >= 0.0 && rate < 1.0))
      throw ConfigError("sample_mask: dropout rate " + std::to_string(rate) +
                        " outside [0, 1) at layer " + std::to_string(l));
    LayerMask m{Tensor(layers[l].weights.shape(), 1.0), Tensor(layers[l].bias.shape(), 1.0)};
    if (rate > 0.0) {
      const double keep = 1.0 - rate;
      for (auto& v : m.weights.values()) v = rng.bernoulli(keep) ? 1.0 : 0.0;
      for (auto& v : m.bias.values()) v = rng.bernoulli(keep) ? 1.0 : 0.0;
    }
    mask.layers.push_back(std::move(m));
    mask.keep.push_back(1.0 - rate);
  }
  return mask;
}

inline void check_mask(const DropoutMask& mask, std::span<const DenseLayer> layers) {
  if (mask.layers.size() != layers.size()) throw ShapeError("dropout mask layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (!mask.layers[l].weights.same_shape(layers[l].weights) ||
        !mask.layers[l].bias.same_shape(layers[l].bias))
      throw ShapeError("dropout mask shape mismatch at layer " + std::to_string(l));
}

inline DenseLayer apply_mask(const DenseLayer& layer, const LayerMask& m) {
  DenseLayer out = layer;
  for (std::size_t i = 0; i < out.weights.size(); ++i) out.weights[i] *= m.weights[i];
  for (std::size_t i = 0; i < out.bias.size(); ++i) out.bias[i] *= m.bias[i];
  return out;
}

inline std::vector<DenseLayer> apply_mask(std::span<const DenseLayer> layers,
                                          const DropoutMask& mask) {
  check_mask(mask, layers);
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) out.push_back(apply_mask(layers[l], mask.layers[l]));
  return out;
}

// Everything backward() needs from a forward pass.
struct ForwardCache {
  std::vector<Tensor> inputs;   // input to each layer, batch x in
  std::vector<Tensor> pre;      // pre-activations, batch x out
  std::vector<Tensor> weights;  // weights actually used (masked if a mask was given)
  std::vector<Activation> activations;
  std::optional<DropoutMask> mask;
  Tensor output;
  bool valid = false;
};

namespace detail {

inline Tensor as_batch(const Tensor& x) {
  if (x.rank() == 2) return x;
  if (x.rank() == 1) return Tensor({1, x.size()}, std::vector<double>(x.values().begin(), x.values().end()));
  throw ShapeError("forward: input must be rank 1 or 2, got " + x.shape_string());
}

// y = x W^T + b, row by row.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.rows(), in = w.cols(), out = w.rows();
  Tensor y = Tensor::matrix(batch, out);
  for (std::size_t r = 0; r < batch; ++r) {
    const double* xr = x.data() + r * in;
    double* yr = y.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) yr[o] = dot(xr, w.data() + o * in, in) + b[o];
  }
  return y;
}

}  // namespace detail

// Applies the layer stack to a batch (rows) or a single vector. A mask, when
// given, zeroes the corresponding weight and bias entries before use.
inline ForwardCache forward(std::span<const DenseLayer> layers, const Tensor& input,
                            const DropoutMask* mask = nullptr) {
  if (layers.empty()) throw ShapeError("forward: empty layer stack");
  if (mask) check_mask(*mask, layers);
  ForwardCache cache;
  Tensor x = detail::as_batch(input);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& layer = layers[l];
    if (x.cols() != layer.in())
      throw ShapeError("forward: layer " + std::to_string(l) + " expects width " +
                       std::to_string(layer.in()) + ", got " + std::to_string(x.cols()));
    Tensor w = layer.weights;
    Tensor b = layer.bias;
    if (mask) {
      const LayerMask& m = mask->layers[l];
      for (std::size_t i = 0; i < w.size(); ++i) w[i] *= m.weights[i];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] *= m.bias[i];
    }
    Tensor pre = detail::affine(x, w, b);
    Tensor post = activate(layer.activation, pre);
    cache.inputs.push_back(std::move(x));
    cache.pre.push_back(std::move(pre));
    cache.weights.push_back(std::move(w));
    cache.activations.push_back(layer.activation);
    x = std::move(post);
  }
  if (mask) cache.mask = *mask;
  cache.output = std::move(x);
  cache.valid = true;
  return cache;
}

struct LayerGrad {
  Tensor weights;
  Tensor bias;
};

struct BackwardResult {
  std::vector<LayerGrad> layers;
  Tensor input_grad;  // batch x in
};

// Reverse-mode pass: upstream is dObjective/dOutput (batch x out). Gradients
// are with respect to the unmasked parameters, so masked entries get zero.
inline BackwardResult backward(const ForwardCache& cache, const Tensor& upstream) {
  if (!cache.valid) throw UsageError("backward: no cached forward pass");
  Tensor delta = detail::as_batch(upstream);
  if (!delta.same_shape(cache.output))
    throw ShapeError("backward: upstream gradient " + delta.shape_string() +
                     " does not match output " + cache.output.shape_string());

  const std::size_t depth = cache.pre.size();
  BackwardResult result;
  result.layers.resize(depth);
  for (std::size_t l = depth; l-- > 0;) {
    const Tensor& pre = cache.pre[l];
    const Tensor& x = cache.inputs[l];
    const Tensor& w = cache.weights[l];
    const std::size_t batch = x.rows(), in = w.cols(), out = w.rows();
    const Activation act = cache.activations[l];
    if (act != Activation::Linear)
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= activate_grad(act, pre[i]);

    LayerGrad g{Tensor::matrix(out, in), Tensor({out})};
    Tensor dx = Tensor::matrix(batch, in);
    for (std::size_t r = 0; r < batch; ++r) {
      const double* xr = x.data() + r * in;
      const double* dr = delta.data() + r * out;
      double* dxr = dx.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        g.bias[o] += d;
        double* gw = g.weights.data() + o * in;
        const double* wo = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          gw[i] += d * xr[i];
          dxr[i] += d * wo[i];
        }
      }
    }
    if (cache.mask) {
      const LayerMask& m = cache.mask->layers[l];
      for (std::size_t i = 0; i < g.weights.size(); ++i) g.weights[i] *= m.weights[i];
      for (std::size_t i = 0; i < g.bias.size(); ++i) g.bias[i] *= m.bias[i];
    }
    result.layers[l] = std::move(g);
    delta = std::move(dx);
  }
  result.input_grad = std::move(delta);
  return result;
}

struct AdamConfig {
  double base_lr = 1e-2;
  std::uint64_t decay_steps = 10000;
  double decay_rate = 0.97;
  bool staircase = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

// base_lr * decay_rate^(step / decay_steps); the exponent is an integer
// division when staircase is set.
inline double lr_at(const AdamConfig& cfg, std::uint64_t step) {
  double exponent = static_cast<double>(step) / static_cast<double>(cfg.decay_steps);
  if (cfg.staircase) exponent = std::floor(exponent);
  return cfg.base_lr * std::pow(cfg.decay_rate, exponent);
}

inline double lr_at(const AdamState& state, std::uint64_t step) { return lr_at(state.config, step); }

// One bias-corrected Adam update. The learning rate is evaluated at the
// state's current step, which then advances by one. No parameter is touched
// if any gradient entry is non-finite.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                      AdamState& state) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(grads[k]))
      throw ShapeError("adam_step: gradient shape mismatch for parameter " + std::to_string(k));
    if (!grads[k].all_finite())
      throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(k));
  }
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->shape(), 0.0);
      state.second_moment.emplace_back(p->shape(), 0.0);
    }
  } else if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks a different parameter set");
  }

  const AdamConfig& c = state.config;
  const double lr = lr_at(c, state.step);
  const double t = static_cast<double>(state.step + 1);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / corr1;
      const double v_hat = v[i] / corr2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
  ++state.step;
}

}  // namespace dsur
