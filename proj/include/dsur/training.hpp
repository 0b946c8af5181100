#pragma once

#include <algorithm>
#include <charconv>
#include <numeric>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dsur/dataset.hpp"
#include "dsur/error.hpp"
#include "dsur/model.hpp"
#include "dsur/nn.hpp"
#include "dsur/rng.hpp"

namespace dsur {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 500;
  AdamConfig adam{};  // 1e-2, decay 0.97 every 10,000 steps
  // Uniform overrides for every branch layer; unset means p_l / (2 n H).
  std::optional<double> weight_penalty;
  std::optional<double> bias_penalty;
  bool dropout_in_training = true;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
  std::size_t validation_sims = 0;
  std::uint64_t seed = 0;

  static TrainConfig simulation_default() { return {}; }

  static TrainConfig real_data_default() {
    TrainConfig c;
    c.adam.decay_steps = 5000;
    c.adam.decay_rate = 0.96;
    return c;
  }

  void validate() const {
    if (batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
    if (!(adam.base_lr > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (adam.decay_steps == 0) throw ConfigError("train: decay steps must be positive");
    if (!(adam.decay_rate > 0.0 && adam.decay_rate <= 1.0))
      throw ConfigError("train: decay rate must lie in (0, 1]");
    if ((weight_penalty && *weight_penalty < 0.0) || (bias_penalty && *bias_penalty < 0.0))
      throw ConfigError("train: penalties must be nonnegative");
  }
};

// Squared-L2 penalty weights for each branch layer.
struct Penalties {
  std::vector<double> basis_weights, basis_bias, coef_weights, coef_bias;

  static Penalties none(const ModelConfig& m) {
    return {std::vector<double>(m.basis.depth()), std::vector<double>(m.basis.depth()),
            std::vector<double>(m.coef.depth()), std::vector<double>(m.coef.depth())};
  }

  static Penalties resolve(const ModelConfig& m, const TrainConfig& t, std::size_t pairs) {
    Penalties pen = none(m);
    const double denom = 2.0 * static_cast<double>(pairs);
    auto fill = [&](const BranchConfig& b, std::vector<double>& w, std::vector<double>& bias) {
      for (std::size_t l = 0; l < b.depth(); ++l) {
        w[l] = t.weight_penalty.value_or(b.dropout[l] / denom);
        bias[l] = t.bias_penalty.value_or(b.dropout[l] / denom);
      }
    };
    fill(m.basis, pen.basis_weights, pen.basis_bias);
    fill(m.coef, pen.coef_weights, pen.coef_bias);
    return pen;
  }
};

// (site, simulation) index of one observation.
struct Observation {
  std::size_t site = 0;
  std::size_t sim = 0;
  friend bool operator==(const Observation&, const Observation&) = default;
  friend auto operator<=>(const Observation&, const Observation&) = default;
};

// Network-ready view of a dataset: standardized sites and inputs.
struct PreparedData {
  Tensor sites;  // standardized
  Tensor x;
  Tensor inputs;  // standardized
  Tensor responses;

  static PreparedData from(const Dataset& d, const Standardizer& s) {
    return {s.sites(d.sites), d.fine_covariates, s.inputs(d.inputs), d.responses};
  }
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;  // SurrogateParams::tensors() order
};

namespace detail {

inline double penalty_value(const SurrogateParams& params, const Penalties& pen) {
  double total = 0.0;
  auto add = [&](const std::vector<DenseLayer>& layers, const std::vector<double>& lw,
                 const std::vector<double>& lb) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (lw[l] != 0.0) total += lw[l] * dot(layers[l].weights.values(), layers[l].weights.values());
      if (lb[l] != 0.0) total += lb[l] * dot(layers[l].bias.values(), layers[l].bias.values());
    }
  };
  add(params.basis, pen.basis_weights, pen.basis_bias);
  add(params.coef, pen.coef_weights, pen.coef_bias);
  return total;
}

// Distinct values of key(batch[r]) in first-seen order plus the row -> slot map.
template <class Key>
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> unique_rows(
    std::span<const Observation> batch, Key key, std::size_t universe) {
  std::vector<std::size_t> slot_of(universe, SIZE_MAX), distinct, row_slot(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const std::size_t k = key(batch[r]);
    if (slot_of[k] == SIZE_MAX) {
      slot_of[k] = distinct.size();
      distinct.push_back(k);
    }
    row_slot[r] = slot_of[k];
  }
  return {std::move(distinct), std::move(row_slot)};
}

inline Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  Tensor out = Tensor::matrix(rows.size(), t.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(t.data() + rows[r] * t.cols(), t.cols(), out.data() + r * t.cols());
  return out;
}

}  // namespace detail

// Penalized loss over a batch with the noise variance fixed at 1:
//   1/(2|batch|) sum (y - yhat)^2 + sum_l lambda_l (||W_l||^2 + ||b_l||^2)
// plus its exact gradient. The mask, if given, is applied to both branches.
inline LossAndGrad loss_and_grad(const SurrogateParams& params, const PreparedData& data,
                                 std::span<const Observation> batch, const Penalties& pen,
                                 const SurrogateMask* mask = nullptr, bool pin_multiply_weight = false,
                                 bool want_grad = true) {
  if (batch.empty()) throw UsageError("loss: empty batch");
  const auto [sites, site_slot] =
      detail::unique_rows(batch, [](const Observation& o) { return o.site; }, data.sites.rows());
  const auto [sims, sim_slot] =
      detail::unique_rows(batch, [](const Observation& o) { return o.sim; }, data.inputs.rows());

  const ForwardCache coef = forward(params.coef, detail::gather_rows(data.sites, sites), mask ? &mask->coef : nullptr);
  const ForwardCache basis = forward(params.basis, detail::gather_rows(data.inputs, sims), mask ? &mask->basis : nullptr);
  const Tensor& eta = coef.output;
  const Tensor& bz = basis.output;
  const std::size_t k = eta.cols(), q = data.x.cols();
  if (bz.cols() != k) throw ShapeError("loss: branch widths differ");

  const DenseLayer& head = params.head;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double sse = 0.0;
  Tensor d_eta = Tensor::matrix(sites.size(), k);
  Tensor d_bz = Tensor::matrix(sims.size(), k);
  Tensor g_head_w(head.weights.shape()), g_head_b(head.bias.shape());

  for (std::size_t r = 0; r < batch.size(); ++r) {
    const Observation& o = batch[r];
    const double* er = eta.data() + site_slot[r] * k;
    const double* br = bz.data() + sim_slot[r] * k;
    const double u = dot(er, br, k);
    const double* xr = data.x.data() + o.site * q;
    double pre = head.bias[0] + head.weights[0] * u;
    for (std::size_t j = 0; j < q; ++j) pre += head.weights[j + 1] * xr[j];
    const double yhat = activate(head.activation, pre);
    const double resid = yhat - data.responses(o.sim, o.site);
    if (!std::isfinite(yhat)) throw NumericError("loss: non-finite prediction");
    sse += resid * resid;
    if (!want_grad) continue;
    const double d_pre = resid * inv_b * activate_grad(head.activation, pre);
    g_head_b[0] += d_pre;
    g_head_w[0] += d_pre * u;
    for (std::size_t j = 0; j < q; ++j) g_head_w[j + 1] += d_pre * xr[j];
    const double du = d_pre * head.weights[0];
    double* de = d_eta.data() + site_slot[r] * k;
    double* db = d_bz.data() + sim_slot[r] * k;
    for (std::size_t c = 0; c < k; ++c) {
      de[c] += du * br[c];
      db[c] += du * er[c];
    }
  }

  LossAndGrad out;
  out.loss = 0.5 * sse * inv_b + detail::penalty_value(params, pen);
  if (!want_grad) return out;

  const BackwardResult g_coef = backward(coef, d_eta);
  const BackwardResult g_basis = backward(basis, d_bz);
  auto emit = [&](const std::vector<DenseLayer>& layers, const BackwardResult& g,
                  const std::vector<double>& lw, const std::vector<double>& lb) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Tensor gw = g.layers[l].weights;
      Tensor gb = g.layers[l].bias;
      for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += 2.0 * lw[l] * layers[l].weights[i];
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += 2.0 * lb[l] * layers[l].bias[i];
      out.grads.push_back(std::move(gw));
      out.grads.push_back(std::move(gb));
    }
  };
  emit(params.basis, g_basis, pen.basis_weights, pen.basis_bias);
  emit(params.coef, g_coef, pen.coef_weights, pen.coef_bias);
  if (pin_multiply_weight) g_head_w[0] = 0.0;
  out.grads.push_back(std::move(g_head_w));
  out.grads.push_back(std::move(g_head_b));
  return out;
}

inline double loss(const SurrogateParams& params, const PreparedData& data,
                   std::span<const Observation> batch, const Penalties& pen,
                   const SurrogateMask* mask = nullptr) {
  return loss_and_grad(params, data, batch, pen, mask, false, false).loss;
}

// Mean of (y - yhat)^2 / 2 over every pair of a prepared dataset.
inline double half_mse(const SurrogateParams& params, const PreparedData& data) {
  const Tensor pred = predict_grid(params, data.sites, data.x, data.inputs);
  double sse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = data.responses[i] - pred[i];
    sse += r * r;
  }
  return 0.5 * sse / static_cast<double>(pred.size());
}

inline std::vector<Observation> all_observations(std::size_t n, std::size_t sims) {
  std::vector<Observation> obs;
  obs.reserve(n * sims);
  for (std::size_t h = 0; h < sims; ++h)
    for (std::size_t i = 0; i < n; ++i) obs.push_back({i, h});
  return obs;
}

// Reorders one epoch's observations in place; every pair appears exactly once.
inline void shuffle_epoch(std::vector<Observation>& order, Rng& rng) { rng.shuffle(order.begin(), order.end()); }

struct TrainLogRow {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainResult {
  Surrogate model;
  std::vector<TrainLogRow> log;
  std::vector<std::size_t> validation_sims;  // indices into the training dataset
};

inline void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& log) {
  os << "epoch,step,lr,train_loss,val_loss\n";
  char buf[64];
  auto num = [&](double v) {
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  for (const auto& r : log)
    os << r.epoch << ',' << r.step << ',' << num(r.lr) << ',' << num(r.train_loss) << ','
       << (r.val_loss ? num(*r.val_loss) : std::string()) << '\n';
}

namespace detail {

inline Dataset select_sims(const Dataset& d, const std::vector<std::size_t>& sims) {
  Dataset out{d.sites, d.fine_covariates, Tensor::matrix(sims.size(), d.p()), Tensor::matrix(sims.size(), d.n())};
  for (std::size_t r = 0; r < sims.size(); ++r) {
    std::copy_n(d.inputs.data() + sims[r] * d.p(), d.p(), out.inputs.data() + r * d.p());
    std::copy_n(d.responses.data() + sims[r] * d.n(), d.n(), out.responses.data() + r * d.n());
  }
  return out;
}

inline void clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += dot(g.values(), g.values());
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& g : grads)
    for (auto& v : g.values()) v *= scale;
}

}  // namespace detail

// Mini-batch Adam on the penalized loss over shuffled (site, simulation)
// pairs. Deterministic given cfg.seed.
inline TrainResult train(const Dataset& full, const ModelConfig& model_cfg, const TrainConfig& cfg) {
  full.validate();
  model_cfg.validate();
  cfg.validate();
  if (full.p() != model_cfg.p || full.q() != model_cfg.q)
    throw ConfigError("train: dataset has p=" + std::to_string(full.p()) + ", q=" +
                      std::to_string(full.q()) + " but the model expects p=" +
                      std::to_string(model_cfg.p) + ", q=" + std::to_string(model_cfg.q));
  const Rng root(cfg.seed);

  TrainResult result;
  std::vector<std::size_t> train_ids(full.sims());
  std::iota(train_ids.begin(), train_ids.end(), std::size_t{0});
  if (cfg.validation_sims > 0) {
    if (cfg.validation_sims >= full.sims())
      throw ConfigError("train: validation set would leave no training simulations");
    Rng split = root.child(3);
    split.shuffle(train_ids.begin(), train_ids.end());
    result.validation_sims.assign(train_ids.end() - static_cast<std::ptrdiff_t>(cfg.validation_sims), train_ids.end());
    train_ids.resize(full.sims() - cfg.validation_sims);
    std::sort(train_ids.begin(), train_ids.end());
    std::sort(result.validation_sims.begin(), result.validation_sims.end());
  }
  const Dataset data = detail::select_sims(full, train_ids);
  if (cfg.batch_size > data.pairs())
    throw ConfigError("train: batch size exceeds the " + std::to_string(data.pairs()) + " training pairs");

  Surrogate& model = result.model;
  model.config = model_cfg;
  model.standardizer = Standardizer::fit(data);
  Rng init_rng = root.child(0);
  model.params = build(model_cfg, init_rng);

  const PreparedData prepared = PreparedData::from(data, model.standardizer);
  std::optional<PreparedData> val;
  if (!result.validation_sims.empty())
    val = PreparedData::from(detail::select_sims(full, result.validation_sims), model.standardizer);
  const Penalties pen = Penalties::resolve(model_cfg, cfg, data.pairs());

  AdamState adam{cfg.adam, {}, {}, 0};
  auto record = [&](std::size_t epoch) {
    TrainLogRow row;
    row.epoch = epoch;
    row.step = adam.step;
    row.lr = lr_at(adam, adam.step);
    row.train_loss = half_mse(model.params, prepared) + detail::penalty_value(model.params, pen);
    if (val) row.val_loss = half_mse(model.params, *val);
    if (!std::isfinite(row.train_loss))
      throw NumericError("train: loss diverged at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(adam.step));
    result.log.push_back(row);
  };
  record(0);

  std::vector<Observation> order = all_observations(data.n(), data.sims());
  Rng shuffle_rng = root.child(1);
  Rng mask_rng = root.child(2);
  std::vector<Tensor*> tensors = model.params.tensors();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_epoch(order, shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const std::span<const Observation> batch(order.data() + start, len);
      std::optional<SurrogateMask> mask;
      if (cfg.dropout_in_training) mask = sample_mask(model_cfg, model.params, mask_rng);
      LossAndGrad lg = loss_and_grad(model.params, prepared, batch, pen, mask ? &*mask : nullptr,
                                     model_cfg.head.pin_multiply_weight);
      if (!std::isfinite(lg.loss))
        throw NumericError("train: loss diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(adam.step));
      if (cfg.clip_norm > 0.0) detail::clip_global_norm(lg.grads, cfg.clip_norm);
      try {
        adam_step(tensors, lg.grads, adam);
      } catch (const NumericError& e) {
        throw NumericError("train: epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(adam.step) + ": " + e.what());
      }
    }
    record(epoch);
  }
  return result;
}

}  // namespace dsur
