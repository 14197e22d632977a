// Training loop: minibatch Adam on the total loss over a corpus, per-epoch
// CSV logging and checkpoints.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsd/checkpoint.hpp"
#include "lsd/grammar.hpp"
#include "lsd/losses.hpp"
#include "lsd/sampling.hpp"

namespace lsd {

/// Loss became NaN or infinite; `checkpoint` names the last good one on disk.
class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(const std::string& what, std::string checkpoint)
      : std::runtime_error(what), checkpoint_(std::move(checkpoint)) {}
  const std::string& checkpoint() const { return checkpoint_; }

 private:
  std::string checkpoint_;
};

struct TrainConfig {
  std::string grammar = "chairish";  // built-in name or path to a grammar JSON
  std::string corpus;                // corpus directory; generated from the grammar when empty
  int n_shapes = 500;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  LossWeights weights;
  int kl_warmup_epochs = 10;  // KL weight ramps linearly from 0 over this many epochs
  Hyperparams model;
  std::string checkpoint_dir;  // no checkpoints when empty
  std::string log_csv;         // no CSV when empty
  int eval_shapes = 32;        // fixed subset for the before/after loss
  bool verbose = false;

  void check() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (n_shapes < 2) throw std::invalid_argument("train config: n_shapes must be >= 2");
    if (!(lr > 0)) throw std::invalid_argument("train config: lr must be > 0");
    if (kl_warmup_epochs < 0) throw std::invalid_argument("train config: kl_warmup_epochs must be >= 0");
    if (model.no_lstm && model.latent_dim != model.feature_dim)
      throw std::invalid_argument("train config: no_lstm needs latent_dim == feature_dim");
    if (model.d_cut > model.d_max) throw std::invalid_argument("train config: d_cut must be <= d_max");
  }
};

/// Defaults sized for a laptop CPU.
inline Hyperparams desk_hyperparams() {
  Hyperparams hp;
  hp.feature_dim = 64;
  hp.latent_dim = 64;
  hp.lstm_dim = 128;
  return hp;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json m = to_json(c.model);
  return {{"grammar", c.grammar},       {"corpus", c.corpus},         {"n_shapes", c.n_shapes},
          {"train_fraction", c.train_fraction}, {"seed", c.seed},     {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"lr", c.lr},                 {"weights", to_json(c.weights)},
          {"kl_warmup_epochs", c.kl_warmup_epochs},
          {"model", m},                 {"checkpoint_dir", c.checkpoint_dir}, {"log_csv", c.log_csv},
          {"eval_shapes", c.eval_shapes}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.grammar = j.value("grammar", c.grammar);
  c.corpus = j.value("corpus", c.corpus);
  c.n_shapes = j.value("n_shapes", c.n_shapes);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.seed = j.value("seed", c.seed);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.kl_warmup_epochs = j.value("kl_warmup_epochs", c.kl_warmup_epochs);
  if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"), c.weights);
  if (j.contains("model")) c.model = hyperparams_from_json(j.at("model"), c.model);
  // ablation switches may also sit at the top level
  c.model.no_lstm = j.value("no_lstm", c.model.no_lstm);
  c.model.d_cut = j.value("d_cut", c.model.d_cut);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
  c.log_csv = j.value("log_csv", c.log_csv);
  c.eval_shapes = j.value("eval_shapes", c.eval_shapes);
  return c;
}

struct EpochLog {
  int epoch = 0;
  long step = 0;
  double seconds = 0;
  LossBreakdown mean;  // per-shape means
};

inline void write_epoch_csv_header(std::ostream& out) {
  out << "epoch,step,seconds,total,kl,recon,sc,box,normals,exist,leaf,label,edge,symmetry,adjacency\n";
}

inline void write_epoch_csv_row(std::ostream& out, const EpochLog& e) {
  const auto& m = e.mean;
  out << e.epoch << ',' << e.step << ',' << e.seconds << ',' << m.total << ',' << m.kl << ',' << m.recon << ',' << m.sc
      << ',' << m.box << ',' << m.normals << ',' << m.exist << ',' << m.leaf << ',' << m.label << ',' << m.edge << ','
      << m.symmetry << ',' << m.adjacency << '\n';
}

namespace detail {

inline void accumulate_breakdown(LossBreakdown& acc, const LossBreakdown& b) {
  acc.kl += b.kl, acc.recon += b.recon, acc.sc += b.sc, acc.total += b.total;
  acc.box += b.box, acc.normals += b.normals, acc.exist += b.exist, acc.leaf += b.leaf;
  acc.label += b.label, acc.edge += b.edge, acc.symmetry += b.symmetry, acc.adjacency += b.adjacency;
  acc.matched += b.matched;
}

inline void scale_breakdown(LossBreakdown& acc, double s) {
  acc.kl *= s, acc.recon *= s, acc.sc *= s, acc.total *= s;
  acc.box *= s, acc.normals *= s, acc.exist *= s, acc.leaf *= s;
  acc.label *= s, acc.edge *= s, acc.symmetry *= s, acc.adjacency *= s;
}

}  // namespace detail

/// Mean total loss over `shapes` with noise fixed by `seed` (no parameter update).
template <class T>
LossBreakdown evaluate_loss(const Model<T>& model, const std::vector<PartHierarchy>& shapes, const LossWeights& w,
                            std::uint64_t seed) {
  LossBreakdown acc;
  ad::NoGradGuard no_grad;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto r = total_loss(model, shapes[i], gaussian_noise(derive_seed(seed, i)), w);
    detail::accumulate_breakdown(acc, r.breakdown);
  }
  if (!shapes.empty()) detail::scale_breakdown(acc, 1.0 / static_cast<double>(shapes.size()));
  return acc;
}

template <class T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<PartHierarchy> train)
      : cfg_(std::move(cfg)), train_(std::move(train)), model_(cfg_.model, cfg_.seed), adam_(nn::AdamConfig{cfg_.lr}) {
    cfg_.check();
    if (train_.empty()) throw std::invalid_argument("trainer: empty training set");
  }

  /// Continues from a checkpoint written by this trainer.
  Trainer(TrainConfig cfg, std::vector<PartHierarchy> train, LoadedCheckpoint<T> ck)
      : cfg_(std::move(cfg)), train_(std::move(train)), model_(std::move(ck.model)), adam_(std::move(ck.adam)) {
    cfg_.check();
    cfg_.model = model_.hp();
    epoch_ = ck.state.epoch;
    step_ = ck.state.step;
  }

  /// Runs until cfg.epochs epochs have completed in total. `on_epoch` sees each log line.
  std::vector<EpochLog> run(const std::function<void(const EpochLog&)>& on_epoch = {}) {
    namespace fs = std::filesystem;
    std::ofstream csv;
    if (!cfg_.log_csv.empty()) {
      if (fs::path(cfg_.log_csv).has_parent_path()) fs::create_directories(fs::path(cfg_.log_csv).parent_path());
      const bool fresh = epoch_ == 0 || !fs::exists(cfg_.log_csv);
      csv.open(cfg_.log_csv, fresh ? std::ios::trunc : std::ios::app);
      if (fresh) write_epoch_csv_header(csv);
    }
    if (!cfg_.checkpoint_dir.empty() && epoch_ == 0) save(last_good_path());

    std::vector<EpochLog> logs;
    const std::size_t batch = static_cast<std::size_t>(cfg_.batch_size);
    while (epoch_ < cfg_.epochs) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<std::size_t> order(train_.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), std::mt19937_64(derive_seed(cfg_.seed ^ 0xA5A5ULL, epoch_)));
      LossBreakdown acc;
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        const LossWeights w = weights_at(step_);
        model_.params().zero_grad();
        Tensor<T> sum;
        for (std::size_t k = start; k < end; ++k) {
          LossResult<T> r;
          try {
            r = total_loss(model_, train_[order[k]], gaussian_noise(derive_seed(cfg_.seed, step_ * batch + (k - start))), w);
          } catch (const std::domain_error& e) {
            throw NumericFailure("non-finite value at step " + std::to_string(step_) + ": " + e.what(), last_good_path());
          }
          if (!std::isfinite(r.breakdown.total))
            throw NumericFailure("non-finite loss at step " + std::to_string(step_), last_good_path());
          detail::accumulate_breakdown(acc, r.breakdown);
          sum = sum.defined() ? ad::add(sum, r.total) : r.total;
        }
        ad::backward(ad::scale(sum, T(1.0 / static_cast<double>(end - start))));
        adam_.step(model_.params());
        ++step_;
      }
      ++epoch_;
      detail::scale_breakdown(acc, 1.0 / static_cast<double>(train_.size()));
      EpochLog log{epoch_, step_, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), acc};
      if (csv.is_open()) {
        write_epoch_csv_row(csv, log);
        csv.flush();
      }
      if (!cfg_.checkpoint_dir.empty()) {
        save(last_good_path());
        save(fs::path(cfg_.checkpoint_dir) / ("epoch" + std::to_string(epoch_) + ".ckpt"));
      }
      if (on_epoch) on_epoch(log);
      logs.push_back(log);
    }
    return logs;
  }

  void save(const std::filesystem::path& path) const {
    TrainingState st{step_, epoch_, to_json(cfg_)};
    save_checkpoint(path, model_, &adam_, st);
  }

  /// Loss weights in effect at optimizer step `step` (KL warm-up applied).
  LossWeights weights_at(long step) const {
    LossWeights w = cfg_.weights;
    if (cfg_.kl_warmup_epochs > 0) {
      const double steps_per_epoch = std::ceil(static_cast<double>(train_.size()) / cfg_.batch_size);
      w.kl *= std::min(1.0, static_cast<double>(step) / (cfg_.kl_warmup_epochs * steps_per_epoch));
    }
    return w;
  }

  std::string last_good_path() const {
    return cfg_.checkpoint_dir.empty() ? std::string() : (std::filesystem::path(cfg_.checkpoint_dir) / "last.ckpt").string();
  }

  const Model<T>& model() const { return model_; }
  Model<T>& model() { return model_; }
  const nn::Adam<T>& optimizer() const { return adam_; }
  int epoch() const { return epoch_; }
  long step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  std::vector<PartHierarchy> train_;
  Model<T> model_;
  nn::Adam<T> adam_;
  int epoch_ = 0;
  long step_ = 0;
};

// ---------------------------------------------------------------------------
// Grammar lookup

#ifndef LSD_GRAMMAR_DIR
#define LSD_GRAMMAR_DIR ""
#endif

/// Accepts a path to a grammar JSON or the name of a file in the grammar
/// directory (LSD_GRAMMAR_DIR env var, then the compiled-in default).
inline GrammarConfig resolve_grammar(const std::string& name_or_path) {
  namespace fs = std::filesystem;
  if (fs::exists(name_or_path)) return load_grammar(name_or_path);
  std::vector<fs::path> dirs;
  if (const char* env = std::getenv("LSD_GRAMMAR_DIR")) dirs.emplace_back(env);
  if (std::string(LSD_GRAMMAR_DIR).size()) dirs.emplace_back(LSD_GRAMMAR_DIR);
  for (const auto& d : dirs)
    if (fs::exists(d / (name_or_path + ".json"))) return load_grammar(d / (name_or_path + ".json"));
  throw std::runtime_error("unknown grammar '" + name_or_path + "'");
}

/// Model hyperparameters adjusted to a grammar's label set and depth.
inline Hyperparams fit_to_grammar(Hyperparams hp, const GrammarConfig& g) {
  hp.num_labels = g.labels.size();
  hp.d_max = g.d_max;
  hp.k_max = std::max(hp.k_max, g.k_max);
  return hp;
}

}  // namespace lsd
