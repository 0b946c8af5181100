#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dsur/dataset.hpp"
#include "dsur/error.hpp"
#include "dsur/nn.hpp"
#include "dsur/rng.hpp"
#include "dsur/tensor.hpp"
#include "json.hpp"

namespace dsur {

// One branch network. dropout[l] is the entry-wise drop rate applied to the
// parameters of layer l; a drop rate on layer l+1 plays the role of dropout
// after hidden layer l.
struct BranchConfig {
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;
  std::vector<double> dropout;

  std::size_t depth() const noexcept { return widths.size(); }
  std::size_t output_width() const noexcept { return widths.empty() ? 0 : widths.back(); }

  // Layers 1..L-1 get rate p, the first layer none: dropout follows every
  // hidden layer but never precedes the first.
  static BranchConfig stack(std::vector<std::size_t> widths, std::vector<Activation> acts, double p) {
    std::vector<double> rates(widths.size(), p);
    if (!rates.empty()) rates.front() = 0.0;
    return {std::move(widths), std::move(acts), std::move(rates)};
  }
};

struct HeadConfig {
  Activation activation = Activation::Linear;
  // Fix the multiply-layer weight at 1 so the head is exactly
  // beta0 + x^T beta + eta(s)^T B(z).
  bool pin_multiply_weight = false;
};

struct ModelConfig {
  std::size_t p = 5;  // simulation-input dimension
  std::size_t q = 2;  // fine-scale covariates
  BranchConfig basis;
  BranchConfig coef;
  HeadConfig head;

  std::size_t k() const noexcept { return basis.output_width(); }

  void validate() const {
    for (const BranchConfig* b : {&basis, &coef}) {
      if (b->widths.empty()) throw ConfigError("model: branch has no layers");
      if (b->activations.size() != b->widths.size())
        throw ConfigError("model: branch widths and activations differ in length");
      if (b->dropout.size() != b->widths.size())
        throw ConfigError("model: branch widths and dropout rates differ in length");
      for (auto w : b->widths)
        if (w == 0) throw ConfigError("model: layer width must be positive");
      for (double r : b->dropout)
        if (!(r >= 0.0 && r < 1.0)) throw ConfigError("model: dropout rate outside [0, 1)");
    }
    if (basis.output_width() != coef.output_width())
      throw ConfigError("model: branch output widths differ (" + std::to_string(basis.output_width()) +
                        " vs " + std::to_string(coef.output_width()) + ")");
    if (p == 0) throw ConfigError("model: input dimension must be positive");
  }

  // Basis 32-16-8, coefficient 64-32-16-8, dropout 0.1, linear head.
  static ModelConfig simulation_default(std::size_t p = 5, std::size_t q = 2) {
    using A = Activation;
    ModelConfig c;
    c.p = p;
    c.q = q;
    c.basis = BranchConfig::stack({32, 16, 8}, {A::ReLU, A::ReLU, A::Linear}, 0.1);
    c.coef = BranchConfig::stack({64, 32, 16, 8}, {A::ReLU, A::ReLU, A::ReLU, A::Linear}, 0.1);
    return c;
  }

  // Both branches five layers deep ending in 8, softplus head.
  static ModelConfig real_data_default(std::size_t p, std::size_t q) {
    using A = Activation;
    ModelConfig c;
    c.p = p;
    c.q = q;
    const std::vector<A> acts{A::ReLU, A::ReLU, A::ReLU, A::ReLU, A::Linear};
    c.basis = BranchConfig::stack({128, 64, 32, 16, 8}, acts, 0.1);
    c.coef = BranchConfig::stack({128, 64, 32, 16, 8}, acts, 0.1);
    c.head.activation = A::SoftPlus;
    return c;
  }
};

struct SurrogateParams {
  std::vector<DenseLayer> basis;
  std::vector<DenseLayer> coef;
  DenseLayer head;  // (1 + q) -> 1; input is [eta^T B, x_1..x_q]

  // Every trainable tensor in a fixed order: basis (W, b) per layer, then
  // coefficient branch, then head.
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto* branch : {&basis, &coef})
      for (auto& l : *branch) {
        out.push_back(&l.weights);
        out.push_back(&l.bias);
      }
    out.push_back(&head.weights);
    out.push_back(&head.bias);
    return out;
  }

  std::vector<const Tensor*> tensors() const {
    auto* self = const_cast<SurrogateParams*>(this);
    auto t = self->tensors();
    return {t.begin(), t.end()};
  }

  std::vector<std::string> tensor_names() const {
    std::vector<std::string> names;
    auto add = [&](const std::string& branch, std::size_t n) {
      for (std::size_t l = 0; l < n; ++l) {
        names.push_back(branch + "[" + std::to_string(l) + "].weights");
        names.push_back(branch + "[" + std::to_string(l) + "].bias");
      }
    };
    add("basis", basis.size());
    add("coef", coef.size());
    names.push_back("head.weights");
    names.push_back("head.bias");
    return names;
  }

  friend bool operator==(const SurrogateParams&, const SurrogateParams&) = default;
};

struct SurrogateMask {
  DropoutMask basis;
  DropoutMask coef;
};

inline SurrogateMask sample_mask(const ModelConfig& cfg, const SurrogateParams& params, Rng& rng) {
  SurrogateMask m;
  m.basis = sample_mask(cfg.basis.dropout, params.basis, rng);
  m.coef = sample_mask(cfg.coef.dropout, params.coef, rng);
  return m;
}

// Branch and head parameters with the mask entries zeroed.
inline SurrogateParams apply_mask(const SurrogateParams& params, const SurrogateMask& mask) {
  SurrogateParams out;
  out.basis = apply_mask(params.basis, mask.basis);
  out.coef = apply_mask(params.coef, mask.coef);
  out.head = params.head;
  return out;
}

inline std::vector<DenseLayer> build_branch(std::size_t in, const BranchConfig& cfg, Rng& rng) {
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < cfg.depth(); ++l) {
    layers.push_back(glorot_layer(in, cfg.widths[l], cfg.activations[l], rng));
    in = cfg.widths[l];
  }
  return layers;
}

inline SurrogateParams build(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  SurrogateParams params;
  params.basis = build_branch(cfg.p, cfg.basis, rng);
  params.coef = build_branch(2, cfg.coef, rng);
  params.head = glorot_layer(1 + cfg.q, 1, cfg.head.activation, rng);
  if (cfg.head.pin_multiply_weight) params.head.weights[0] = 1.0;
  return params;
}

// B(z) for one input vector or a batch of rows.
inline Tensor basis_forward(const SurrogateParams& params, const Tensor& z,
                            const DropoutMask* mask = nullptr) {
  Tensor out = forward(params.basis, z, mask).output;
  if (z.rank() == 1) return Tensor::vector({out.values().begin(), out.values().end()});
  return out;
}

// eta(s) for one site or a batch of rows.
inline Tensor coef_forward(const SurrogateParams& params, const Tensor& s,
                           const DropoutMask* mask = nullptr) {
  if (s.rank() == 1 && s.size() != 2) throw ShapeError("coef_forward: a site has two coordinates");
  Tensor out = forward(params.coef, s, mask).output;
  if (s.rank() == 1) return Tensor::vector({out.values().begin(), out.values().end()});
  return out;
}

inline double head_output(const DenseLayer& head, double multiply, std::span<const double> x) {
  double pre = head.bias[0] + head.weights[0] * multiply;
  for (std::size_t j = 0; j < x.size(); ++j) pre += head.weights[j + 1] * x[j];
  return activate(head.activation, pre);
}

inline double predict_mean(const SurrogateParams& params, const Tensor& s, const Tensor& x,
                           const Tensor& z, const SurrogateMask* mask = nullptr) {
  if (x.size() + 1 != params.head.in())
    throw ShapeError("predict_mean: expected " + std::to_string(params.head.in() - 1) +
                     " fine-scale covariates, got " + std::to_string(x.size()));
  const Tensor eta = coef_forward(params, s, mask ? &mask->coef : nullptr);
  const Tensor b = basis_forward(params, z, mask ? &mask->basis : nullptr);
  if (eta.size() != b.size()) throw ShapeError("predict_mean: branch widths differ");
  return head_output(params.head, dot(eta.values(), b.values()), x.values());
}

// Predictions for every (simulation, site) pair of a grid: out(h, i).
// Each branch runs once per distinct input, which is what makes full-data
// evaluation cheap.
inline Tensor predict_grid(const SurrogateParams& params, const Tensor& sites, const Tensor& x,
                           const Tensor& z, const SurrogateMask* mask = nullptr) {
  const Tensor eta = forward(params.coef, sites, mask ? &mask->coef : nullptr).output;
  const Tensor b = forward(params.basis, z, mask ? &mask->basis : nullptr).output;
  const std::size_t n = sites.rows(), sims = z.rows(), k = eta.cols();
  if (b.cols() != k) throw ShapeError("predict_grid: branch widths differ");
  if (x.rows() != n || x.cols() + 1 != params.head.in())
    throw ShapeError("predict_grid: fine covariates " + x.shape_string() + " do not match");
  std::vector<double> fixed(n);
  for (std::size_t i = 0; i < n; ++i) fixed[i] = dot(params.head.weights.data() + 1, x.data() + i * x.cols(), x.cols());
  const double w0 = params.head.weights[0], b0 = params.head.bias[0];
  Tensor out = Tensor::matrix(sims, n);
  for (std::size_t h = 0; h < sims; ++h) {
    const double* bh = b.data() + h * k;
    for (std::size_t i = 0; i < n; ++i) {
      const double pre = b0 + w0 * dot(eta.data() + i * k, bh, k) + fixed[i];
      out(h, i) = activate(params.head.activation, pre);
    }
  }
  return out;
}

// Per-coordinate affine map to zero mean and unit variance, fitted on
// training sites and inputs. Responses are never transformed.
struct Standardizer {
  std::vector<double> site_mean{0.0, 0.0}, site_scale{1.0, 1.0};
  std::vector<double> input_mean, input_scale;

  static Standardizer identity(std::size_t p) {
    Standardizer s;
    s.input_mean.assign(p, 0.0);
    s.input_scale.assign(p, 1.0);
    return s;
  }

  static Standardizer fit(const Dataset& data) {
    Standardizer s;
    auto column_stats = [](const Tensor& t, std::vector<double>& mean, std::vector<double>& scale) {
      const std::size_t r = t.rows(), c = t.cols();
      mean.assign(c, 0.0);
      scale.assign(c, 1.0);
      for (std::size_t j = 0; j < c; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < r; ++i) m += t(i, j);
        m /= static_cast<double>(r);
        double v = 0.0;
        for (std::size_t i = 0; i < r; ++i) v += (t(i, j) - m) * (t(i, j) - m);
        v /= static_cast<double>(r);
        mean[j] = m;
        scale[j] = v > 1e-24 ? std::sqrt(v) : 1.0;
      }
    };
    column_stats(data.sites, s.site_mean, s.site_scale);
    column_stats(data.inputs, s.input_mean, s.input_scale);
    return s;
  }

  Tensor sites(const Tensor& raw) const { return apply(raw, site_mean, site_scale); }
  Tensor inputs(const Tensor& raw) const { return apply(raw, input_mean, input_scale); }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;

private:
  static Tensor apply(const Tensor& raw, const std::vector<double>& mean,
                      const std::vector<double>& scale) {
    Tensor out = raw;
    const std::size_t c = raw.rank() == 1 ? raw.size() : raw.cols();
    if (c != mean.size()) throw ShapeError("standardize: width mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % c]) / scale[i % c];
    return out;
  }
};

// A fitted surrogate: architecture, standardization constants and weights.
struct Surrogate {
  ModelConfig config;
  Standardizer standardizer;
  SurrogateParams params;

  double predict_mean(const Tensor& s, const Tensor& x, const Tensor& z,
                      const SurrogateMask* mask = nullptr) const {
    return dsur::predict_mean(params, standardizer.sites(s), x, standardizer.inputs(z), mask);
  }

  Tensor predict_grid(const Dataset& data, const SurrogateMask* mask = nullptr) const {
    return dsur::predict_grid(params, standardizer.sites(data.sites), data.fine_covariates,
                              standardizer.inputs(data.inputs), mask);
  }
};

// ---------------------------------------------------------------------------
// Model files: the line "DSUR1" followed by a JSON document.

inline constexpr std::string_view kModelMagic = "DSUR1";

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("values").get<std::vector<double>>());
}

inline nlohmann::json layers_to_json(const std::vector<DenseLayer>& layers) {
  auto arr = nlohmann::json::array();
  for (const auto& l : layers)
    arr.push_back({{"weights", tensor_to_json(l.weights)},
                   {"bias", tensor_to_json(l.bias)},
                   {"activation", std::string(to_string(l.activation))}});
  return arr;
}

inline std::vector<DenseLayer> layers_from_json(const nlohmann::json& j) {
  std::vector<DenseLayer> out;
  for (const auto& l : j)
    out.push_back({tensor_from_json(l.at("weights")), tensor_from_json(l.at("bias")),
                   parse_activation(l.at("activation").get<std::string>())});
  return out;
}

inline nlohmann::json branch_to_json(const BranchConfig& b) {
  std::vector<std::string> acts;
  for (auto a : b.activations) acts.emplace_back(to_string(a));
  return {{"widths", b.widths}, {"activations", acts}, {"dropout", b.dropout}};
}

inline BranchConfig branch_from_json(const nlohmann::json& j) {
  BranchConfig b;
  b.widths = j.at("widths").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations")) b.activations.push_back(parse_activation(a.get<std::string>()));
  b.dropout = j.at("dropout").get<std::vector<double>>();
  return b;
}

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"p", c.p},
          {"q", c.q},
          {"basis", detail::branch_to_json(c.basis)},
          {"coef", detail::branch_to_json(c.coef)},
          {"head", {{"activation", std::string(to_string(c.head.activation))},
                    {"pin_multiply_weight", c.head.pin_multiply_weight}}}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.p = j.at("p").get<std::size_t>();
  c.q = j.at("q").get<std::size_t>();
  c.basis = detail::branch_from_json(j.at("basis"));
  c.coef = detail::branch_from_json(j.at("coef"));
  c.head.activation = parse_activation(j.at("head").at("activation").get<std::string>());
  c.head.pin_multiply_weight = j.at("head").value("pin_multiply_weight", false);
  return c;
}

inline std::string serialize(const Surrogate& m) {
  nlohmann::json j;
  j["config"] = to_json(m.config);
  j["standardizer"] = {{"site_mean", m.standardizer.site_mean},
                       {"site_scale", m.standardizer.site_scale},
                       {"input_mean", m.standardizer.input_mean},
                       {"input_scale", m.standardizer.input_scale}};
  j["params"] = {{"basis", detail::layers_to_json(m.params.basis)},
                 {"coef", detail::layers_to_json(m.params.coef)},
                 {"head", detail::layers_to_json({m.params.head})}};
  return std::string(kModelMagic) + "\n" + j.dump(1) + "\n";
}

inline Surrogate deserialize(const std::string& text) {
  const auto eol = text.find('\n');
  const std::string header = text.substr(0, eol);
  if (header != kModelMagic) {
    if (header.rfind("DSUR", 0) == 0)
      throw FormatError("model file version '" + header + "' is not supported (expected " +
                        std::string(kModelMagic) + ")");
    throw FormatError("not a model file (missing " + std::string(kModelMagic) + " header)");
  }
  try {
    const auto j = nlohmann::json::parse(text.substr(eol == std::string::npos ? text.size() : eol + 1));
    Surrogate m;
    m.config = model_config_from_json(j.at("config"));
    const auto& s = j.at("standardizer");
    m.standardizer.site_mean = s.at("site_mean").get<std::vector<double>>();
    m.standardizer.site_scale = s.at("site_scale").get<std::vector<double>>();
    m.standardizer.input_mean = s.at("input_mean").get<std::vector<double>>();
    m.standardizer.input_scale = s.at("input_scale").get<std::vector<double>>();
    const auto& p = j.at("params");
    m.params.basis = detail::layers_from_json(p.at("basis"));
    m.params.coef = detail::layers_from_json(p.at("coef"));
    auto head = detail::layers_from_json(p.at("head"));
    if (head.size() != 1) throw FormatError("model file: expected exactly one head layer");
    m.params.head = std::move(head.front());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
}

}  // namespace dsur
