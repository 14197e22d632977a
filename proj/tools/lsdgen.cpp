// lsdgen: data generation, training, sampling, evaluation and serving.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lsd/lsd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Relative corpus paths resolve under LSDGEN_DATA_DIR when it is set.
fs::path data_path(const std::string& p) {
  const char* root = std::getenv("LSDGEN_DATA_DIR");
  if (root && *root && fs::path(p).is_relative()) return fs::path(root) / p;
  return p;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw lsd::SchemaError(path.string(), e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct LoadedModel {
  lsd::Model<float> model;
  lsd::GrammarConfig grammar;
};

LoadedModel load_model(const std::string& checkpoint) {
  auto ck = lsd::load_checkpoint<float>(checkpoint);
  const std::string g = ck.state.extra.value("grammar", std::string("chairish"));
  return {std::move(ck.model), lsd::resolve_grammar(g)};
}

json sample_json(const lsd::DecodeResult& r, std::optional<std::uint64_t> seed = std::nullopt) {
  json j = {{"shape", lsd::to_json_value(r.shape)}, {"z", r.trace.z.z}};
  if (seed) j["seed"] = *seed;
  return j;
}

/// Re-decodes a sample file written by `sample`; the stored shape must match.
lsd::DecodeResult read_sample(const lsd::Model<float>& model, const fs::path& path) {
  const json j = read_json_file(path);
  if (!j.contains("z") || !j["z"].is_array()) throw lsd::SchemaError(path.string() + ": z", "expected an array of latents");
  lsd::LatentSequence z;
  try {
    z.z = j["z"].get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw lsd::SchemaError(path.string() + ": z", e.what());
  }
  const std::string category = j.contains("shape") ? j["shape"].value("category", std::string()) : std::string();
  auto r = lsd::decode_shape(model, z, lsd::DecodeOptions{category, std::nullopt});
  if (j.contains("shape") && lsd::to_json_value(r.shape) != j["shape"])
    throw lsd::SchemaError(path.string(), "stored shape does not match its latents for this checkpoint");
  return r;
}

lsd::TrainConfig train_config(const std::string& config_path) {
  lsd::TrainConfig cfg;
  cfg.model = lsd::desk_hyperparams();
  if (!config_path.empty()) {
    const json j = read_json_file(config_path);
    cfg = lsd::train_config_from_json(j.contains("train") ? j["train"] : j, cfg);
  }
  return cfg;
}

lsd::EvalConfig eval_config(const std::string& config_path) {
  lsd::EvalConfig e;
  if (config_path.empty()) return e;
  const json j = read_json_file(config_path);
  if (!j.contains("eval")) return e;
  const auto& v = j["eval"];
  e.n_samples = v.value("n_samples", e.n_samples);
  e.n_points = v.value("n_points", e.n_points);
  e.conditional = v.value("conditional", e.conditional);
  e.conditioning_shapes = v.value("conditioning_shapes", e.conditioning_shapes);
  e.samples_per_condition = v.value("samples_per_condition", e.samples_per_condition);
  e.depth = v.value("depth", e.depth);
  e.encoder_seed = v.value("encoder_seed", e.encoder_seed);
  if (v.value("normalization", std::string("per-pair")) == "per-sample")
    e.normalization = lsd::DiversityNormalization::PerSample;
  return e;
}

/// Training and test shapes: from a corpus directory when given, otherwise
/// generated from the grammar.
std::pair<std::vector<lsd::PartHierarchy>, std::vector<lsd::PartHierarchy>> load_data(const lsd::TrainConfig& cfg,
                                                                                      const lsd::GrammarConfig& g) {
  if (!cfg.corpus.empty()) {
    const auto dir = data_path(cfg.corpus);
    auto train = lsd::read_corpus(dir, "train").shapes;
    auto test = lsd::read_corpus(dir, "test").shapes;
    if (train.empty()) train = lsd::read_corpus(dir).shapes;
    return {std::move(train), std::move(test)};
  }
  auto [train, test] = lsd::split(lsd::generate(g, cfg.n_shapes, cfg.seed), cfg.train_fraction, cfg.seed);
  return {std::move(train.shapes), std::move(test.shapes)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical part-structure VAE: data, training, sampling, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out, "output path");

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  std::string grammar = "chairish";
  int n_shapes = 500;
  double train_fraction = 0.9;
  gen->add_option("--grammar", grammar, "grammar name or JSON path");
  gen->add_option("--n", n_shapes, "number of shapes")->check(CLI::PositiveNumber);
  gen->add_option("--train-fraction", train_fraction, "train split fraction")->check(CLI::Range(0.0, 1.0));

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::optional<int> epochs, batch_size, d_cut, warmup;
  std::optional<double> lr;
  std::optional<std::string> corpus, train_grammar;
  std::string resume;
  bool no_lstm = false;
  train->add_option("--grammar", train_grammar, "grammar name or JSON path");
  train->add_option("--corpus", corpus, "corpus directory (relative to LSDGEN_DATA_DIR when set)");
  train->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
  train->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
  train->add_option("--lr", lr);
  train->add_option("--kl-warmup", warmup);
  train->add_flag("--no-lstm", no_lstm, "ablation: no encoding/decoding LSTMs");
  train->add_option("--d-cut", d_cut, "ablation: probabilistic child decoding only down to this depth");
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  // sample
  auto* sample = app.add_subcommand("sample", "unconditional or conditional samples");
  std::string checkpoint, input, input_b;
  int n_samples = 10, depth = 1;
  sample->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  sample->add_option("--n", n_samples)->check(CLI::PositiveNumber);
  sample->add_option("--conditional", input, "sample file to condition on");
  sample->add_option("--depth", depth, "conditioning depth D: depths < D are kept")->check(CLI::PositiveNumber);

  // resample
  auto* resample = app.add_subcommand("resample", "regenerate the sub-tree below one node");
  int node_id = 0;
  resample->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  resample->add_option("--input", input, "sample file")->required()->check(CLI::ExistingFile);
  resample->add_option("--node", node_id, "node id")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "metric report against a test corpus");
  bool conditional = false, ablation = false;
  std::optional<int> eval_n;
  eval->add_option("--checkpoint", checkpoint)->check(CLI::ExistingFile);
  eval->add_option("--corpus", corpus, "corpus directory (test split is used)");
  eval->add_option("--n", eval_n, "number of generated samples")->check(CLI::PositiveNumber);
  eval->add_flag("--conditional", conditional, "conditional mode (diversity over conditioning groups)");
  eval->add_option("--depth", depth)->check(CLI::PositiveNumber);
  eval->add_flag("--ablation", ablation, "train and evaluate the ablation variants");
  eval->add_option("--grammar", train_grammar, "grammar name or JSON path");

  // interp
  auto* interp = app.add_subcommand("interp", "interpolate one latent between two samples");
  int steps = 5;
  interp->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  interp->add_option("--a", input, "sample file providing the base latents and z_a")->required()->check(CLI::ExistingFile);
  interp->add_option("--b", input_b, "sample file providing z_b")->required()->check(CLI::ExistingFile);
  interp->add_option("--depth", depth, "latent index to interpolate")->check(CLI::NonNegativeNumber);
  interp->add_option("--steps", steps)->check(CLI::Range(2, 1000));

  // time
  auto* timing = app.add_subcommand("time", "conditional vs rejection sampling time over epsilon");
  int n_conditioning = 10, per_shape = 5, max_tries = 10000;
  timing->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  timing->add_option("--conditioning", n_conditioning, "number of conditioning shapes")->check(CLI::PositiveNumber);
  timing->add_option("--samples", per_shape, "samples per conditioning shape")->check(CLI::PositiveNumber);
  timing->add_option("--depth", depth)->check(CLI::PositiveNumber);
  timing->add_option("--max-tries", max_tries)->check(CLI::PositiveNumber);

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP JSON service");
  int port = 8080;
  std::string host = "127.0.0.1";
  serve->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port);
  serve->add_option("--host", host);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      const auto g = lsd::resolve_grammar(grammar);
      const std::uint64_t s = seed.value_or(0);
      const auto ds = lsd::generate(g, n_shapes, s);
      auto [tr, te] = lsd::split(ds, train_fraction, s);
      lsd::Dataset all{ds.category, s, tr.shapes, tr.tags};
      all.shapes.insert(all.shapes.end(), te.shapes.begin(), te.shapes.end());
      all.tags.insert(all.tags.end(), te.tags.begin(), te.tags.end());
      const auto dir = data_path(out.empty() ? "corpus/" + g.category : out);
      lsd::write_corpus(dir, all);
      std::cout << "wrote " << all.shapes.size() << " shapes (" << tr.shapes.size() << " train, " << te.shapes.size()
                << " test) to " << dir.string() << '\n';
      return kOk;
    }

    if (*train) {
      auto cfg = train_config(config_path);
      if (train_grammar) cfg.grammar = *train_grammar;
      if (corpus) cfg.corpus = *corpus;
      if (seed) cfg.seed = *seed;
      if (epochs) cfg.epochs = *epochs;
      if (batch_size) cfg.batch_size = *batch_size;
      if (lr) cfg.lr = *lr;
      if (warmup) cfg.kl_warmup_epochs = *warmup;
      if (no_lstm) cfg.model.no_lstm = true, cfg.model.latent_dim = cfg.model.feature_dim;
      if (d_cut) cfg.model.d_cut = *d_cut;
      cfg.checkpoint_dir = out.empty() ? "checkpoints" : out;
      if (cfg.log_csv.empty()) cfg.log_csv = (fs::path(cfg.checkpoint_dir) / "train_log.csv").string();
      const auto g = lsd::resolve_grammar(cfg.grammar);
      cfg.model = lsd::fit_to_grammar(cfg.model, g);
      try {
        cfg.check();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      auto [train_shapes, test_shapes] = load_data(cfg, g);
      std::optional<lsd::Trainer<float>> trainer;
      if (!resume.empty()) {
        auto ck = lsd::load_checkpoint<float>(resume);
        trainer.emplace(cfg, train_shapes, std::move(ck));
      } else {
        trainer.emplace(cfg, train_shapes);
      }
      const std::vector<lsd::PartHierarchy> subset(
          train_shapes.begin(), train_shapes.begin() + std::min<std::ptrdiff_t>(cfg.eval_shapes, train_shapes.size()));
      const double before = lsd::evaluate_loss(trainer->model(), subset, cfg.weights, cfg.seed).total;
      std::cout << "eval loss before: " << before << '\n';
      trainer->run([](const lsd::EpochLog& l) {
        std::cout << "epoch " << l.epoch << " loss " << l.mean.total << " (" << l.seconds << " s)\n";
      });
      const double after = lsd::evaluate_loss(trainer->model(), subset, cfg.weights, cfg.seed).total;
      std::cout << "eval loss after: " << after << " (ratio " << after / before << ")\n";
      write_text(fs::path(cfg.checkpoint_dir) / "summary.json",
                 json({{"eval_loss_before", before}, {"eval_loss_after", after}, {"epochs", trainer->epoch()},
                       {"steps", trainer->step()}})
                         .dump(2));
      return kOk;
    }

    if (*sample) {
      const auto m = load_model(checkpoint);
      const std::uint64_t s = seed.value_or(0);
      const fs::path dir = out.empty() ? "samples" : out;
      std::optional<lsd::DecodeResult> cond;
      if (!input.empty()) cond = read_sample(m.model, input);
      for (int i = 0; i < n_samples; ++i) {
        const auto si = lsd::derive_seed(s, i);
        const auto r = cond ? lsd::sample_conditional(m.model, *cond, depth, si)
                            : lsd::sample_unconditional(m.model, si, m.grammar.category);
        char name[32];
        std::snprintf(name, sizeof name, "sample_%04d.json", i);
        write_text(dir / name, sample_json(r, si).dump(2) + "\n");
      }
      std::cout << "wrote " << n_samples << " samples to " << dir.string() << '\n';
      return kOk;
    }

    if (*resample) {
      const auto m = load_model(checkpoint);
      const auto base = read_sample(m.model, input);
      if (!base.shape.contains(node_id)) throw UsageError("unknown node id " + std::to_string(node_id));
      const int d = base.shape.node(node_id).depth;
      if (static_cast<std::size_t>(d) + 1 >= base.trace.z.size()) throw UsageError("node is at the deepest level and has no sub-tree");
      const std::uint64_t s = seed.value_or(0);
      const auto r = lsd::resample_subtree(m.model, base.shape, base.trace, node_id,
                                           lsd::resample_suffix(base.trace.z.size(), d, m.model.hp().latent_dim, s));
      const json j = {{"shape", lsd::to_json_value(r.shape)}, {"node_id", node_id}, {"seed", s}};
      if (out.empty())
        std::cout << j.dump(2) << '\n';
      else
        write_text(out, j.dump(2) + "\n");
      return kOk;
    }

    if (*eval) {
      auto ecfg = eval_config(config_path);
      if (eval_n) ecfg.n_samples = *eval_n;
      if (conditional) ecfg.conditional = true;
      ecfg.depth = depth;
      if (seed) ecfg.seed = *seed;
      const fs::path dir = out.empty() ? "eval" : out;
      if (ablation) {
        auto cfg = train_config(config_path);
        if (train_grammar) cfg.grammar = *train_grammar;
        if (corpus) cfg.corpus = *corpus;
        if (seed) cfg.seed = *seed;
        const auto g = lsd::resolve_grammar(cfg.grammar);
        cfg.model = lsd::fit_to_grammar(cfg.model, g);
        cfg.check();
        auto [tr, te] = load_data(cfg, g);
        const auto rows = lsd::run_ablation(cfg, tr, te, ecfg, g.category);
        std::ostringstream csv;
        lsd::write_ablation_csv(csv, rows);
        write_text(dir / "ablation.csv", csv.str());
        std::cout << csv.str();
        return kOk;
      }
      if (checkpoint.empty()) throw UsageError("eval needs --checkpoint (or --ablation)");
      const auto m = load_model(checkpoint);
      std::vector<lsd::PartHierarchy> test;
      if (corpus) {
        test = lsd::read_corpus(data_path(*corpus), "test").shapes;
      } else {
        auto cfg = train_config(config_path);
        cfg.grammar = m.grammar.category;
        test = load_data(cfg, m.grammar).second;
      }
      if (test.empty()) throw std::runtime_error("no test shapes");
      const auto report = lsd::evaluate_model(m.model, test, ecfg, m.grammar.category,
                                              ecfg.conditional ? "conditional" : "unconditional");
      std::ostringstream csv;
      lsd::write_eval_csv_header(csv);
      lsd::write_eval_csv_row(csv, report);
      write_text(dir / "report.csv", csv.str());
      write_text(dir / "report.json", lsd::to_json(report).dump(2) + "\n");
      std::cout << csv.str();
      return kOk;
    }

    if (*interp) {
      const auto m = load_model(checkpoint);
      const auto a = read_sample(m.model, input);
      const auto b = read_sample(m.model, input_b);
      if (static_cast<std::size_t>(depth) >= a.trace.z.size() || static_cast<std::size_t>(depth) >= b.trace.z.size())
        throw UsageError("--depth beyond the latent sequence");
      const auto shapes = lsd::interpolate_latents(m.model, a.trace.z, a.trace.z[depth], b.trace.z[depth], depth, steps,
                                                   m.grammar.category);
      const fs::path dir = out.empty() ? "interp" : out;
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "step_%03zu.json", i);
        write_text(dir / name, lsd::to_json(shapes[i], 2) + "\n");
      }
      std::cout << "wrote " << shapes.size() << " shapes to " << dir.string() << '\n';
      return kOk;
    }

    if (*timing) {
      const auto m = load_model(checkpoint);
      const std::uint64_t s = seed.value_or(0);
      std::vector<lsd::DecodeResult> conds;
      for (int i = 0; i < n_conditioning; ++i)
        conds.push_back(lsd::sample_unconditional(m.model, lsd::derive_seed(s ^ 0xC0DEULL, i), m.grammar.category));
      lsd::TimingConfig tc;
      tc.depth = depth;
      tc.samples_per_shape = per_shape;
      tc.rejection.max_tries = max_tries;
      tc.seed = s;
      const auto rows = lsd::timing_experiment(m.model, conds, tc);
      std::ostringstream csv;
      lsd::write_timing_csv(csv, rows);
      write_text(out.empty() ? fs::path("timing.csv") : fs::path(out), csv.str());
      std::cout << csv.str();
      return kOk;
    }

    if (*serve) {
      const auto m = load_model(checkpoint);
      lsd::SessionStore<float> store(m.model, m.grammar.category, seed.value_or(0));
      httplib::Server server;
      lsd::register_routes(server, store, m.grammar.labels);
      std::cout << "listening on " << host << ':' << port << std::endl;
      if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
      return kOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const lsd::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "; last good checkpoint: " << e.checkpoint() << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
