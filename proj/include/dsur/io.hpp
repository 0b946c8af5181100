#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dsur/datagen.hpp"
#include "dsur/dataset.hpp"
#include "dsur/error.hpp"
#include "dsur/inference.hpp"
#include "dsur/metrics.hpp"
#include "dsur/model.hpp"
#include "dsur/training.hpp"
#include "json.hpp"

namespace dsur::io {

namespace fs = std::filesystem;
using nlohmann::json;

// Shortest representation that parses back to the same double.
inline std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw FormatError(where + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::size_t parse_index(std::string_view s, const std::string& where) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw FormatError(where + ": cannot parse index '" + std::string(s) + "'");
  return v;
}

// Writes through a temporary file and renames it into place.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write " + tmp.string());
    os << content;
    if (!os) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    throw FormatError("csv: missing column '" + std::string(name) + "'");
  }
};

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline CsvTable read_csv(const fs::path& path) {
  std::istringstream is(read_file(path));
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (first) {
      t.header = std::move(fields);
      first = false;
      continue;
    }
    if (fields.size() != t.header.size())
      throw FormatError(path.string() + ": row has " + std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (first) throw FormatError(path.string() + ": missing header row");
  return t;
}

// ---------------------------------------------------------------------------
// Dataset directories: sites.csv, inputs.csv, responses.csv (+ truth.json).

struct DataBundle {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_ids, test_ids;  // sim_id of each row
  bool test_has_responses = false;
};

inline std::string sites_csv(const Dataset& d) {
  std::string out = "site_id,s1,s2";
  for (std::size_t j = 0; j < d.q(); ++j) out += ",x" + std::to_string(j + 1);
  out += '\n';
  for (std::size_t i = 0; i < d.n(); ++i) {
    out += std::to_string(i) + ',' + num(d.sites(i, 0)) + ',' + num(d.sites(i, 1));
    for (std::size_t j = 0; j < d.q(); ++j) out += ',' + num(d.fine_covariates(i, j));
    out += '\n';
  }
  return out;
}

inline void write_dataset_dir(const fs::path& dir, const Dataset& train, const std::vector<std::size_t>& train_ids,
                              const Dataset& test, const std::vector<std::size_t>& test_ids) {
  write_file_atomic(dir / "sites.csv", sites_csv(train));
  // Rows ordered by sim_id so the files do not reveal the split order.
  std::map<std::size_t, std::pair<const Dataset*, std::size_t>> sims;
  for (std::size_t r = 0; r < train_ids.size(); ++r) sims[train_ids[r]] = {&train, r};
  for (std::size_t r = 0; r < test_ids.size(); ++r) sims[test_ids[r]] = {&test, r};

  std::string inputs = "sim_id,split";
  for (std::size_t j = 0; j < train.p(); ++j) inputs += ",z" + std::to_string(j + 1);
  inputs += '\n';
  std::string responses = "sim_id,site_id,y\n";
  for (const auto& [id, src] : sims) {
    const auto& [d, r] = src;
    inputs += std::to_string(id) + (d == &train ? ",train" : ",test");
    for (std::size_t j = 0; j < d->p(); ++j) inputs += ',' + num(d->inputs(r, j));
    inputs += '\n';
    for (std::size_t i = 0; i < d->n(); ++i)
      responses += std::to_string(id) + ',' + std::to_string(i) + ',' + num(d->responses(r, i)) + '\n';
  }
  write_file_atomic(dir / "inputs.csv", inputs);
  write_file_atomic(dir / "responses.csv", responses);
}

inline DataBundle read_dataset_dir(const fs::path& dir) {
  const CsvTable sites = read_csv(dir / "sites.csv");
  const CsvTable inputs = read_csv(dir / "inputs.csv");
  if (sites.header.size() < 3 || sites.header[0] != "site_id")
    throw FormatError("sites.csv: expected header site_id,s1,s2,x1..xq");
  if (inputs.header.size() < 3 || inputs.header[0] != "sim_id" || inputs.header[1] != "split")
    throw FormatError("inputs.csv: expected header sim_id,split,z1..zp");
  const std::size_t n = sites.rows.size(), q = sites.header.size() - 3, p = inputs.header.size() - 2;

  Tensor s = Tensor::matrix(n, 2), x = Tensor::matrix(n, q);
  std::vector<bool> seen(n, false);
  for (const auto& row : sites.rows) {
    const std::size_t id = parse_index(row[0], "sites.csv");
    if (id >= n || seen[id]) throw FormatError("sites.csv: site ids must be 0..n-1 without repeats");
    seen[id] = true;
    s(id, 0) = parse_double(row[1], "sites.csv");
    s(id, 1) = parse_double(row[2], "sites.csv");
    for (std::size_t j = 0; j < q; ++j) x(id, j) = parse_double(row[3 + j], "sites.csv");
  }

  DataBundle b;
  std::map<std::size_t, std::vector<double>> z_of;
  for (const auto& row : inputs.rows) {
    const std::size_t id = parse_index(row[0], "inputs.csv");
    if (z_of.count(id)) throw FormatError("inputs.csv: duplicate sim_id " + row[0]);
    std::vector<double> z(p);
    for (std::size_t j = 0; j < p; ++j) z[j] = parse_double(row[2 + j], "inputs.csv");
    z_of[id] = std::move(z);
    if (row[1] == "train") b.train_ids.push_back(id);
    else if (row[1] == "test") b.test_ids.push_back(id);
    else throw FormatError("inputs.csv: split must be 'train' or 'test', got '" + row[1] + "'");
  }
  std::sort(b.train_ids.begin(), b.train_ids.end());
  std::sort(b.test_ids.begin(), b.test_ids.end());

  auto make = [&](const std::vector<std::size_t>& ids) {
    Dataset d{s, x, Tensor::matrix(ids.size(), p), Tensor({ids.size(), n}, std::numeric_limits<double>::quiet_NaN())};
    for (std::size_t r = 0; r < ids.size(); ++r) std::copy_n(z_of[ids[r]].data(), p, d.inputs.data() + r * p);
    return d;
  };
  b.train = make(b.train_ids);
  b.test = make(b.test_ids);

  std::map<std::size_t, std::pair<Dataset*, std::size_t>> where;
  for (std::size_t r = 0; r < b.train_ids.size(); ++r) where[b.train_ids[r]] = {&b.train, r};
  for (std::size_t r = 0; r < b.test_ids.size(); ++r) where[b.test_ids[r]] = {&b.test, r};
  if (fs::exists(dir / "responses.csv")) {
    const CsvTable resp = read_csv(dir / "responses.csv");
    const std::size_t c_sim = resp.column("sim_id"), c_site = resp.column("site_id"), c_y = resp.column("y");
    for (const auto& row : resp.rows) {
      const std::size_t sim = parse_index(row[c_sim], "responses.csv");
      const std::size_t site = parse_index(row[c_site], "responses.csv");
      const auto it = where.find(sim);
      if (it == where.end() || site >= n) throw FormatError("responses.csv: unknown sim_id or site_id");
      it->second.first->responses(it->second.second, site) = parse_double(row[c_y], "responses.csv");
    }
  }
  if (!b.train_ids.empty() && !b.train.responses.all_finite())
    throw FormatError("responses.csv: training simulations have missing responses");
  b.test_has_responses = !b.test_ids.empty() && b.test.responses.all_finite();
  return b;
}

// ---------------------------------------------------------------------------
// JSON views of configuration and results.

inline std::string to_string(TruthKind k) { return k == TruthKind::Basis ? "basis" : "gp"; }

inline json to_json(const ScenarioSpec& s) {
  json j = {{"name", s.name},
          {"kind", to_string(s.kind)},
          {"n", s.n},
          {"H", s.H},
          {"H0", s.H0},
          {"p", s.p},
          {"q", s.q},
          {"rho", s.rho},
          {"alpha2_range", {s.alpha2.lo, s.alpha2.hi}},
          {"ell_range", {s.ell.lo, s.ell.hi}},
          {"noise_var", s.noise_var},
          {"beta_range", {s.beta.lo, s.beta.hi}},
          {"beta0", s.beta0},
          {"k_true", s.k_true},
          {"interaction_order", s.interaction_order},
          {"spline_order", s.spline_order},
          {"spline_knots", s.spline_knots},
          {"knot_span", {s.knot_span.lo, s.knot_span.hi}},
          {"gp_cap", s.gp_cap},
          {"seed", s.seed}};
  return j;
}

namespace detail {
inline Range range_from(const json& j, const char* key, Range fallback) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 2) throw ConfigError(std::string(key) + " must be a [lo, hi] pair");
  return {a[0].get<double>(), a[1].get<double>()};
}
}  // namespace detail

// Starts from "preset" when given (an unknown id is an error) and applies the
// remaining keys; "name" is a free label.
inline ScenarioSpec scenario_from_json(const json& j) {
  ScenarioSpec s;
  try {
    if (j.contains("preset")) s = ScenarioSpec::preset(j.at("preset").get<std::string>());
    s.name = j.value("name", s.name);
    if (j.contains("kind")) {
      const auto k = j.at("kind").get<std::string>();
      if (k == "basis") s.kind = TruthKind::Basis;
      else if (k == "gp") s.kind = TruthKind::Gp;
      else throw ConfigError("scenario kind must be 'basis' or 'gp'");
    }
    s.n = j.value("n", s.n);
    s.H = j.value("H", s.H);
    s.H0 = j.value("H0", s.H0);
    s.p = j.value("p", s.p);
    s.q = j.value("q", s.q);
    s.rho = j.value("rho", s.rho);
    s.alpha2 = detail::range_from(j, "alpha2_range", s.alpha2);
    s.ell = detail::range_from(j, "ell_range", s.ell);
    s.noise_var = j.value("noise_var", s.noise_var);
    s.beta = detail::range_from(j, "beta_range", s.beta);
    s.beta0 = j.value("beta0", s.beta0);
    s.k_true = j.value("k_true", s.k_true);
    s.interaction_order = j.value("interaction_order", s.interaction_order);
    s.spline_order = j.value("spline_order", s.spline_order);
    s.spline_knots = j.value("spline_knots", s.spline_knots);
    s.knot_span = detail::range_from(j, "knot_span", s.knot_span);
    s.gp_cap = j.value("gp_cap", s.gp_cap);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario config: ") + e.what());
  }
  return s;
}

inline json to_json(const TrainConfig& t) {
  json j = {{"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"base_lr", t.adam.base_lr},
            {"decay_steps", t.adam.decay_steps},
            {"decay_rate", t.adam.decay_rate},
            {"staircase", t.adam.staircase},
            {"dropout_in_training", t.dropout_in_training},
            {"clip_norm", t.clip_norm},
            {"validation_sims", t.validation_sims},
            {"seed", t.seed}};
  j["weight_penalty"] = t.weight_penalty ? json(*t.weight_penalty) : json(nullptr);
  j["bias_penalty"] = t.bias_penalty ? json(*t.bias_penalty) : json(nullptr);
  return j;
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig t = {}) {
  try {
    t.batch_size = j.value("batch_size", t.batch_size);
    t.epochs = j.value("epochs", t.epochs);
    t.adam.base_lr = j.value("base_lr", t.adam.base_lr);
    t.adam.decay_steps = j.value("decay_steps", t.adam.decay_steps);
    t.adam.decay_rate = j.value("decay_rate", t.adam.decay_rate);
    t.adam.staircase = j.value("staircase", t.adam.staircase);
    t.dropout_in_training = j.value("dropout_in_training", t.dropout_in_training);
    t.clip_norm = j.value("clip_norm", t.clip_norm);
    t.validation_sims = j.value("validation_sims", t.validation_sims);
    t.seed = j.value("seed", t.seed);
    if (j.contains("weight_penalty") && !j["weight_penalty"].is_null()) t.weight_penalty = j["weight_penalty"].get<double>();
    if (j.contains("bias_penalty") && !j["bias_penalty"].is_null()) t.bias_penalty = j["bias_penalty"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return t;
}

inline json to_json(const InferenceConfig& c) {
  return {{"draws", c.draws},
          {"noise_normalizer", c.normalizer == NoiseNormalizer::Half ? "half" : "full"},
          {"noise_floor", c.noise_floor},
          {"samples_per_draw", c.samples_per_draw},
          {"level", c.level}};
}

inline InferenceConfig inference_config_from_json(const json& j, InferenceConfig c = {}) {
  try {
    c.draws = j.value("draws", c.draws);
    if (j.contains("noise_normalizer")) {
      const auto v = j.at("noise_normalizer").get<std::string>();
      if (v == "half") c.normalizer = NoiseNormalizer::Half;
      else if (v == "full") c.normalizer = NoiseNormalizer::Full;
      else throw ConfigError("noise_normalizer must be 'half' or 'full'");
    }
    c.noise_floor = j.value("noise_floor", c.noise_floor);
    c.samples_per_draw = j.value("samples_per_draw", c.samples_per_draw);
    c.level = j.value("level", c.level);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("inference config: ") + e.what());
  }
  return c;
}

inline json truth_sidecar(const GeneratedTruth& g) {
  return {{"beta0", g.beta0},
          {"beta", g.beta},
          {"spec", to_json(g.spec)},
          {"seed", g.spec.seed},
          {"basis_tuples", g.basis_tuples},
          {"alpha2", g.alpha2},
          {"ell", g.ell},
          {"train_sims", g.train_ids},
          {"test_sims", g.test_ids},
          {"snr", g.snr}};
}

inline void write_generated(const fs::path& dir, const GeneratedTruth& g) {
  write_dataset_dir(dir, g.train, g.train_ids, g.test, g.test_ids);
  write_file_atomic(dir / "truth.json", truth_sidecar(g).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Predictions and evaluation reports.

struct PredictionRow {
  std::size_t sim_id = 0, site_id = 0;
  double mean = 0.0, sd = 0.0, lower = 0.0, upper = 0.0;
};

inline std::string predictions_csv(const std::vector<PredictionRow>& rows) {
  std::string out = "sim_id,site_id,mean,sd,lower,upper\n";
  for (const auto& r : rows)
    out += std::to_string(r.sim_id) + ',' + std::to_string(r.site_id) + ',' + num(r.mean) + ',' + num(r.sd) +
           ',' + num(r.lower) + ',' + num(r.upper) + '\n';
  return out;
}

inline std::vector<PredictionRow> read_predictions(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cs = t.column("sim_id"), ci = t.column("site_id"), cm = t.column("mean"),
                    csd = t.column("sd"), cl = t.column("lower"), cu = t.column("upper");
  std::vector<PredictionRow> rows;
  rows.reserve(t.rows.size());
  for (const auto& r : t.rows)
    rows.push_back({parse_index(r[cs], "predictions"), parse_index(r[ci], "predictions"),
                    parse_double(r[cm], "predictions"), parse_double(r[csd], "predictions"),
                    parse_double(r[cl], "predictions"), parse_double(r[cu], "predictions")});
  return rows;
}

inline json to_json(const EvalReport& r) {
  return {{"rmspe", r.rmspe},
          {"coverage", r.coverage},
          {"mean_length", r.mean_length},
          {"misclass_rate", r.misclass_rate},
          {"n_eval", r.n_eval}};
}

inline std::string eval_csv(const EvalReport& r) {
  return "rmspe,coverage,mean_length,misclass_rate,n_eval\n" + num(r.rmspe) + ',' + num(r.coverage) + ',' +
         num(r.mean_length) + ',' + num(r.misclass_rate) + ',' + std::to_string(r.n_eval) + '\n';
}

// Responses of every (sim_id, site_id) in a dataset directory.
inline std::map<std::pair<std::size_t, std::size_t>, double> read_responses(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cs = t.column("sim_id"), ci = t.column("site_id"), cy = t.column("y");
  std::map<std::pair<std::size_t, std::size_t>, double> out;
  for (const auto& r : t.rows)
    out[{parse_index(r[cs], "responses.csv"), parse_index(r[ci], "responses.csv")}] =
        parse_double(r[cy], "responses.csv");
  return out;
}

inline EvalReport evaluate_predictions(const std::vector<PredictionRow>& preds,
                                       const std::map<std::pair<std::size_t, std::size_t>, double>& truth,
                                       double threshold) {
  std::vector<double> y, mean, lower, upper;
  for (const auto& p : preds) {
    const auto it = truth.find({p.sim_id, p.site_id});
    if (it == truth.end())
      throw FormatError("no true response for sim " + std::to_string(p.sim_id) + ", site " +
                        std::to_string(p.site_id));
    y.push_back(it->second);
    mean.push_back(p.mean);
    lower.push_back(p.lower);
    upper.push_back(p.upper);
  }
  return evaluate(y, mean, lower, upper, threshold);
}

}  // namespace dsur::io
