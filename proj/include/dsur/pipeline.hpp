#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsur/datagen.hpp"
#include "dsur/fosr.hpp"
#include "dsur/inference.hpp"
#include "dsur/io.hpp"
#include "dsur/metrics.hpp"
#include "dsur/model.hpp"
#include "dsur/parallel.hpp"
#include "dsur/training.hpp"

namespace dsur {

// Predictive rows for every (simulation, site) pair of a query dataset.
inline std::vector<io::PredictionRow> to_rows(const std::vector<PredictiveSummary>& summaries,
                                              const Dataset& query, const std::vector<std::size_t>& sim_ids) {
  std::vector<io::PredictionRow> rows;
  rows.reserve(summaries.size());
  for (std::size_t h = 0; h < query.sims(); ++h)
    for (std::size_t i = 0; i < query.n(); ++i) {
      const auto& s = summaries[h * query.n() + i];
      rows.push_back({sim_ids[h], i, s.mean, s.sd, s.lower, s.upper});
    }
  return rows;
}

// Total predictive samples per point when the caller leaves it automatic:
// one per draw, or enough noise replicates to reach 100 samples for small F.
inline std::size_t auto_samples_per_draw(std::size_t draws) {
  return draws >= 100 ? 1 : (100 + draws - 1) / draws;
}

inline std::vector<io::PredictionRow> predict_surrogate(const Surrogate& model, const Dataset& train,
                                                        const Dataset& query,
                                                        const std::vector<std::size_t>& query_ids,
                                                        const InferenceConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const Posterior post = draw_posterior(model, train, cfg.draws, rng, cfg.normalizer, cfg.noise_floor);
  const std::size_t spd = cfg.samples_per_draw ? cfg.samples_per_draw : auto_samples_per_draw(cfg.draws);
  return to_rows(predict_dataset(post, query, rng.next_u64(), spd, cfg.level), query, query_ids);
}

inline std::vector<io::PredictionRow> predict_baseline(const FosrModel& m, const Dataset& query,
                                                       const std::vector<std::size_t>& query_ids) {
  const Tensor pred = predict_fosr_grid(m, query);
  std::vector<io::PredictionRow> rows;
  const double sd = std::sqrt(m.residual_var);
  for (std::size_t h = 0; h < query.sims(); ++h)
    for (std::size_t i = 0; i < query.n(); ++i) {
      const auto [lo, hi] = fosr_interval(m, pred(h, i));
      rows.push_back({query_ids[h], i, pred(h, i), sd, lo, hi});
    }
  return rows;
}

inline EvalReport evaluate_rows(const std::vector<io::PredictionRow>& rows, const Dataset& truth_data,
                                const std::vector<std::size_t>& ids, double threshold = 4.0) {
  std::map<std::pair<std::size_t, std::size_t>, double> truth;
  for (std::size_t h = 0; h < truth_data.sims(); ++h)
    for (std::size_t i = 0; i < truth_data.n(); ++i) truth[{ids[h], i}] = truth_data.responses(h, i);
  return io::evaluate_predictions(rows, truth, threshold);
}

// ---------------------------------------------------------------------------
// Benchmark tables.

struct BenchConfig {
  std::vector<std::string> scenarios;
  std::vector<std::string> methods;  // "deepsurrogate", "fosr"
  std::uint64_t seed = 0;
  std::optional<std::size_t> n, H, H0;  // desk-scale overrides
  TrainConfig train{};
  InferenceConfig inference{};
  std::size_t fosr_per_dim = 8;
  double fosr_ridge = 1.0;
  double threshold = 4.0;
};

struct BenchCell {
  std::string scenario, method;
  EvalReport report;
};

inline void validate_methods(const std::vector<std::string>& methods) {
  if (methods.empty()) throw UsageError("bench: empty method list");
  for (const auto& m : methods)
    if (m != "deepsurrogate" && m != "fosr")
      throw UsageError("bench: unknown method '" + m + "' (expected deepsurrogate or fosr)");
}

inline ScenarioSpec bench_spec(const BenchConfig& cfg, std::size_t index) {
  ScenarioSpec spec = ScenarioSpec::preset(cfg.scenarios[index]);
  if (cfg.n) spec.n = *cfg.n;
  if (cfg.H) spec.H = *cfg.H;
  if (cfg.H0) spec.H0 = *cfg.H0;
  spec.seed = derive_seed(cfg.seed, index);
  return spec;
}

// One row per scenario, one block per method. Scenarios run concurrently,
// each with seeds derived from the master seed.
inline std::vector<BenchCell> run_bench(const BenchConfig& cfg) {
  validate_methods(cfg.methods);
  if (cfg.scenarios.empty()) throw UsageError("bench: empty scenario list");
  for (std::size_t s = 0; s < cfg.scenarios.size(); ++s) bench_spec(cfg, s).validate();

  std::vector<std::vector<BenchCell>> per_scenario(cfg.scenarios.size());
  parallel_for(cfg.scenarios.size(), [&](std::size_t s) {
    const ScenarioSpec spec = bench_spec(cfg, s);
    const GeneratedTruth g = generate(spec);
    for (const auto& method : cfg.methods) {
      std::vector<io::PredictionRow> rows;
      if (method == "deepsurrogate") {
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(spec.seed, 1);
        const auto fit = train(g.train, ModelConfig::simulation_default(spec.p, spec.q), tc);
        rows = predict_surrogate(fit.model, g.train, g.test, g.test_ids, cfg.inference, derive_seed(spec.seed, 2));
      } else {
        rows = predict_baseline(fit_fosr(g.train, cfg.fosr_per_dim, cfg.fosr_ridge), g.test, g.test_ids);
      }
      per_scenario[s].push_back({cfg.scenarios[s], method, evaluate_rows(rows, g.test, g.test_ids, cfg.threshold)});
    }
  });
  std::vector<BenchCell> cells;
  for (auto& v : per_scenario) cells.insert(cells.end(), v.begin(), v.end());
  return cells;
}

inline std::string bench_csv(const std::vector<BenchCell>& cells) {
  std::string out = "scenario,method,rmspe,coverage,mean_length,misclass_rate,n_eval\n";
  for (const auto& c : cells)
    out += c.scenario + ',' + c.method + ',' + io::num(c.report.rmspe) + ',' + io::num(c.report.coverage) + ',' +
           io::num(c.report.mean_length) + ',' + io::num(c.report.misclass_rate) + ',' +
           std::to_string(c.report.n_eval) + '\n';
  return out;
}

// Markdown table: scenarios as rows, methods as columns; the lowest RMSPE in
// each row is set in bold.
inline std::string bench_markdown(const std::vector<BenchCell>& cells, const std::vector<std::string>& methods) {
  auto fixed = [](double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return std::string(buf);
  };
  std::string out = "| Scenario | Metric |";
  for (const auto& m : methods) out += " " + m + " |";
  out += "\n|---|---|";
  for (std::size_t i = 0; i < methods.size(); ++i) out += "---|";
  out += '\n';
  std::vector<std::string> order;
  for (const auto& c : cells)
    if (std::find(order.begin(), order.end(), c.scenario) == order.end()) order.push_back(c.scenario);
  for (const auto& sc : order) {
    std::vector<const BenchCell*> row;
    for (const auto& m : methods)
      for (const auto& c : cells)
        if (c.scenario == sc && c.method == m) row.push_back(&c);
    double best = std::numeric_limits<double>::infinity();
    for (const auto* c : row) best = std::min(best, c->report.rmspe);
    out += "| " + sc + " | RMSPE |";
    for (const auto* c : row) {
      const auto v = fixed(c->report.rmspe, 4);
      out += c->report.rmspe == best ? " **" + v + "** |" : " " + v + " |";
    }
    out += "\n| | Coverage |";
    for (const auto* c : row) out += " " + fixed(c->report.coverage, 4) + " |";
    out += "\n| | Length |";
    for (const auto* c : row) out += " " + fixed(c->report.mean_length, 4) + " |";
    out += '\n';
  }
  return out;
}

}  // namespace dsur
