// dsur: generate scenario data, train and query surrogates, evaluate, and
// assemble benchmark tables.
//
// Every command accepts --config (JSON), --seed and --out; flags override
// values from the config file and the resolved settings are echoed into
// <out>/manifest.json.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsur/dsur.hpp"

namespace {

namespace fs = std::filesystem;
using dsur::io::json;

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    json j = json::parse(dsur::io::read_file(path));
    if (!j.is_object()) throw dsur::ConfigError("config " + path + ": top level must be an object");
    return j;
  } catch (const json::parse_error& e) {
    throw dsur::ConfigError("config " + path + ": " + e.what());
  }
}

json section(const json& cfg, const char* key) {
  if (!cfg.contains(key)) return json::object();
  if (!cfg.at(key).is_object()) throw dsur::ConfigError(std::string("config: '") + key + "' must be an object");
  return cfg.at(key);
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const json& cfg, std::uint64_t fallback) {
  if (flag) return *flag;
  if (cfg.contains("seed")) {
    try {
      return cfg.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw dsur::ConfigError(std::string("config: seed: ") + e.what());
    }
  }
  return fallback;
}

void write_manifest(const fs::path& out, const std::string& command, std::uint64_t seed, json resolved,
                    json inputs = json::object()) {
  json m = {{"command", command},
            {"format", dsur::kModelMagic},
            {"seed", seed},
            {"config", std::move(resolved)},
            {"inputs", std::move(inputs)}};
  dsur::io::write_file_atomic(out / "manifest.json", m.dump(2) + "\n");
}

dsur::NoiseNormalizer parse_normalizer(const std::string& v) {
  if (v == "half") return dsur::NoiseNormalizer::Half;
  if (v == "full") return dsur::NoiseNormalizer::Full;
  throw dsur::ConfigError("--normalizer must be 'half' or 'full', got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

dsur::ModelConfig model_profile(const std::string& profile, std::size_t p, std::size_t q) {
  if (profile == "simulation") return dsur::ModelConfig::simulation_default(p, q);
  if (profile == "real") return dsur::ModelConfig::real_data_default(p, q);
  throw dsur::ConfigError("profile must be 'simulation' or 'real', got '" + profile + "'");
}

// ---------------------------------------------------------------------------

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON configuration file");
  cmd->add_option("--seed", c.seed, "Master seed (overrides the config file)");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

struct GenerateArgs {
  Common common;
  std::string scenario;
  std::optional<std::size_t> n, H, H0;
};

int cmd_generate(const GenerateArgs& a) {
  const json cfg = load_config(a.common.config);
  json sc = section(cfg, "scenario");
  if (!a.scenario.empty()) sc["preset"] = a.scenario;
  if (!sc.contains("preset") && !sc.contains("name"))
    throw dsur::ConfigError("generate: no scenario given (use --scenario or scenario.preset)");
  dsur::ScenarioSpec spec = dsur::io::scenario_from_json(sc);
  if (a.n) spec.n = *a.n;
  if (a.H) spec.H = *a.H;
  if (a.H0) spec.H0 = *a.H0;
  spec.seed = resolve_seed(a.common.seed, cfg, spec.seed);
  spec.validate();

  const dsur::GeneratedTruth g = dsur::generate(spec);
  const fs::path out = a.common.out;
  fs::create_directories(out);
  dsur::io::write_generated(out, g);
  write_manifest(out, "generate", spec.seed, {{"scenario", dsur::io::to_json(spec)}});
  std::cout << "generated " << spec.name << ": n=" << spec.n << " H=" << spec.H << " H0=" << spec.H0
            << " snr=" << dsur::io::num(g.snr) << " -> " << out.string() << "\n";
  return 0;
}

struct TrainArgs {
  Common common;
  std::string data;
  std::string profile = "simulation";
  std::optional<std::size_t> epochs, batch_size, validation_sims;
  std::optional<double> lr;
};

int cmd_train(const TrainArgs& a) {
  const json cfg = load_config(a.common.config);
  const std::string profile = a.profile != "simulation" ? a.profile : cfg.value("profile", a.profile);
  dsur::TrainConfig tc = profile == "real" ? dsur::TrainConfig::real_data_default()
                                           : dsur::TrainConfig::simulation_default();
  tc = dsur::io::train_config_from_json(section(cfg, "train"), tc);
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.validation_sims) tc.validation_sims = *a.validation_sims;
  if (a.lr) tc.adam.base_lr = *a.lr;
  tc.seed = resolve_seed(a.common.seed, cfg, tc.seed);
  tc.validate();

  const dsur::io::DataBundle data = dsur::io::read_dataset_dir(a.data);
  if (data.train.sims() == 0) throw dsur::UsageError("train: dataset has no training simulations");
  const dsur::ModelConfig mc = model_profile(profile, data.train.p(), data.train.q());
  const dsur::TrainResult fit = dsur::train(data.train, mc, tc);

  const fs::path out = a.common.out;
  fs::create_directories(out);
  dsur::io::write_file_atomic(out / "model.dsur", dsur::serialize(fit.model));
  std::ostringstream log;
  dsur::write_train_log(log, fit.log);
  dsur::io::write_file_atomic(out / "train_log.csv", log.str());
  write_manifest(out, "train", tc.seed,
                 {{"profile", profile}, {"train", dsur::io::to_json(tc)}, {"model", dsur::to_json(mc)}},
                 {{"data", a.data}});
  std::cout << "trained " << tc.epochs << " epochs, final loss " << dsur::io::num(fit.log.back().train_loss)
            << " -> " << (out / "model.dsur").string() << "\n";
  return 0;
}

struct PredictArgs {
  Common common;
  std::string model, data, split = "test";
  std::optional<std::size_t> draws, samples_per_draw;
  std::optional<std::string> normalizer;
};

int cmd_predict(const PredictArgs& a) {
  const json cfg = load_config(a.common.config);
  dsur::InferenceConfig ic = dsur::io::inference_config_from_json(section(cfg, "inference"));
  if (a.draws) ic.draws = *a.draws;
  if (a.samples_per_draw) ic.samples_per_draw = *a.samples_per_draw;
  if (a.normalizer) ic.normalizer = parse_normalizer(*a.normalizer);
  const std::uint64_t seed = resolve_seed(a.common.seed, cfg, 0);
  if (a.split != "test" && a.split != "train") throw dsur::ConfigError("--split must be 'test' or 'train'");

  const dsur::Surrogate model = dsur::deserialize(dsur::io::read_file(a.model));
  const dsur::io::DataBundle data = dsur::io::read_dataset_dir(a.data);
  if (data.train.sims() == 0) throw dsur::UsageError("predict: the noise estimate needs training simulations");
  const bool test = a.split == "test";
  const dsur::Dataset& query = test ? data.test : data.train;
  const auto& ids = test ? data.test_ids : data.train_ids;
  if (query.sims() == 0) throw dsur::UsageError("predict: no " + a.split + " simulations in " + a.data);

  const auto rows = dsur::predict_surrogate(model, data.train, query, ids, ic, seed);
  const fs::path out = a.common.out;
  fs::create_directories(out);
  dsur::io::write_file_atomic(out / "predictions.csv", dsur::io::predictions_csv(rows));
  json resolved = {{"inference", dsur::io::to_json(ic)}, {"split", a.split}};
  resolved["inference"]["samples_per_draw"] = ic.samples_per_draw ? ic.samples_per_draw
                                                                   : dsur::auto_samples_per_draw(ic.draws);
  write_manifest(out, "predict", seed, resolved, {{"model", a.model}, {"data", a.data}});
  std::cout << "predicted " << rows.size() << " points -> " << (out / "predictions.csv").string() << "\n";
  return 0;
}

struct EvalArgs {
  Common common;
  std::string predictions, data;
  std::optional<double> threshold;
};

int cmd_eval(const EvalArgs& a) {
  const json cfg = load_config(a.common.config);
  double threshold = 4.0;
  try {
    threshold = a.threshold ? *a.threshold : cfg.value("threshold", threshold);
  } catch (const json::exception& e) {
    throw dsur::ConfigError(std::string("config: threshold: ") + e.what());
  }
  const auto preds = dsur::io::read_predictions(a.predictions);
  const auto truth = dsur::io::read_responses(fs::path(a.data) / "responses.csv");
  const dsur::EvalReport r = dsur::io::evaluate_predictions(preds, truth, threshold);

  const fs::path out = a.common.out;
  fs::create_directories(out);
  dsur::io::write_file_atomic(out / "eval.json", dsur::io::to_json(r).dump(2) + "\n");
  dsur::io::write_file_atomic(out / "eval.csv", dsur::io::eval_csv(r));
  write_manifest(out, "eval", resolve_seed(a.common.seed, cfg, 0), {{"threshold", threshold}},
                 {{"predictions", a.predictions}, {"data", a.data}});
  std::cout << "rmspe " << dsur::io::num(r.rmspe) << " coverage " << dsur::io::num(r.coverage) << " length "
            << dsur::io::num(r.mean_length) << " misclass " << dsur::io::num(r.misclass_rate) << "\n";
  return 0;
}

struct BenchArgs {
  Common common;
  std::optional<std::string> scenarios, methods;
  std::optional<std::size_t> n, H, H0, epochs, draws;
};

int cmd_bench(const BenchArgs& a) {
  const json cfg = load_config(a.common.config);
  const json b = section(cfg, "bench");
  dsur::BenchConfig bc;
  try {
    bc.scenarios = b.value("scenarios", std::vector<std::string>{"s6", "s7"});
    bc.methods = b.value("methods", std::vector<std::string>{"deepsurrogate", "fosr"});
    if (b.contains("n")) bc.n = b.at("n").get<std::size_t>();
    if (b.contains("H")) bc.H = b.at("H").get<std::size_t>();
    if (b.contains("H0")) bc.H0 = b.at("H0").get<std::size_t>();
    bc.fosr_per_dim = b.value("fosr_per_dim", bc.fosr_per_dim);
    bc.fosr_ridge = b.value("fosr_ridge", bc.fosr_ridge);
    bc.threshold = cfg.value("threshold", bc.threshold);
  } catch (const json::exception& e) {
    throw dsur::ConfigError(std::string("bench config: ") + e.what());
  }
  if (a.scenarios) bc.scenarios = split_list(*a.scenarios);
  if (a.methods) bc.methods = split_list(*a.methods);
  if (a.n) bc.n = *a.n;
  if (a.H) bc.H = *a.H;
  if (a.H0) bc.H0 = *a.H0;
  bc.train = dsur::io::train_config_from_json(section(cfg, "train"));
  if (a.epochs) bc.train.epochs = *a.epochs;
  bc.train.validate();
  bc.inference = dsur::io::inference_config_from_json(section(cfg, "inference"));
  if (a.draws) bc.inference.draws = *a.draws;
  bc.seed = resolve_seed(a.common.seed, cfg, 0);

  const auto cells = dsur::run_bench(bc);
  const fs::path out = a.common.out;
  fs::create_directories(out);
  const std::string md = dsur::bench_markdown(cells, bc.methods);
  dsur::io::write_file_atomic(out / "table.md", md);
  dsur::io::write_file_atomic(out / "table.csv", dsur::bench_csv(cells));
  json scen = json::array();
  for (std::size_t s = 0; s < bc.scenarios.size(); ++s) scen.push_back(dsur::io::to_json(dsur::bench_spec(bc, s)));
  write_manifest(out, "bench", bc.seed,
                 {{"scenarios", scen},
                  {"methods", bc.methods},
                  {"train", dsur::io::to_json(bc.train)},
                  {"inference", dsur::io::to_json(bc.inference)},
                  {"fosr_per_dim", bc.fosr_per_dim},
                  {"fosr_ridge", bc.fosr_ridge},
                  {"threshold", bc.threshold}});
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dsur: two-branch neural surrogates for spatial functional outputs"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Simulate a scenario dataset");
  add_common(g, gen.common);
  g->add_option("--scenario", gen.scenario, "Preset id: s1..s7, m1..m4");
  g->add_option("--n", gen.n, "Number of spatial sites");
  g->add_option("--H", gen.H, "Training simulations");
  g->add_option("--H0", gen.H0, "Test simulations");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fit a surrogate to a dataset directory");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--profile", tr.profile, "Architecture and schedule: simulation or real")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "Training epochs");
  t->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  t->add_option("--lr", tr.lr, "Base learning rate");
  t->add_option("--validation-sims", tr.validation_sims, "Training simulations held out for the validation loss");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Posterior predictive summaries for a dataset");
  add_common(p, pr.common);
  p->add_option("--model", pr.model, "Model file written by train")->required();
  p->add_option("--data", pr.data, "Dataset directory")->required();
  p->add_option("--split", pr.split, "Simulations to predict: test or train")->capture_default_str();
  p->add_option("--draws", pr.draws, "Posterior draws F (default 500)");
  p->add_option("--samples-per-draw", pr.samples_per_draw, "Noise samples per draw (0 = automatic)");
  p->add_option("--normalizer", pr.normalizer, "Noise variance divisor: full (nH) or half (2nH)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predictions against true responses");
  add_common(e, ev.common);
  e->add_option("--predictions", ev.predictions, "predictions.csv")->required();
  e->add_option("--data", ev.data, "Dataset directory holding responses.csv")->required();
  e->add_option("--threshold", ev.threshold, "Exceedance threshold (default 4.0)");

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Generate, fit and score scenarios for several methods");
  add_common(b, be.common);
  b->add_option("--scenarios", be.scenarios, "Comma-separated preset ids (default s6,s7)");
  b->add_option("--methods", be.methods, "Comma-separated: deepsurrogate,fosr");
  b->add_option("--n", be.n, "Override the number of sites");
  b->add_option("--H", be.H, "Override training simulations");
  b->add_option("--H0", be.H0, "Override test simulations");
  b->add_option("--epochs", be.epochs, "Training epochs");
  b->add_option("--draws", be.draws, "Posterior draws F");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*p) return cmd_predict(pr);
    if (*e) return cmd_eval(ev);
    if (*b) return cmd_bench(be);
  } catch (const dsur::ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const dsur::UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 2;
  } catch (const dsur::ShapeError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 2;
  } catch (const dsur::NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return 3;
  } catch (const dsur::DecompositionError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return 3;
  } catch (const dsur::FormatError& err) {
    std::cerr << "format error: " << err.what() << "\n";
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
