// Evaluation reports: coverage, quality, FPD and the diversity triplet for
// unconditional or conditional sampling, plus the ablation sweep.
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "lsd/metrics.hpp"
#include "lsd/sampling.hpp"
#include "lsd/train.hpp"

namespace lsd {

/// Encodes with the posterior means and decodes the result.
template <class T>
DecodeResult reconstruct(const Model<T>& model, const PartHierarchy& shape) {
  ad::NoGradGuard no_grad;
  const auto enc = encode_shape(model, shape, zero_noise());
  LatentSequence z{detail::to_values(enc.z)};
  return decode_shape(model, z, DecodeOptions{shape.category, std::nullopt});
}

struct EvalConfig {
  int n_samples = 200;
  int n_points = kDefaultSurfacePoints;
  bool conditional = false;
  int conditioning_shapes = 10;  // i
  int samples_per_condition = 10;  // j
  int depth = 1;
  std::uint64_t seed = 0;
  std::uint64_t encoder_seed = 0;
  DiversityNormalization normalization = DiversityNormalization::PerPair;
};

struct EvalReport {
  std::string method;
  int samples = 0;
  double coverage = 0;
  double quality = 0;
  double fpd = 0;
  double structural_diversity = 0;
  double semantic_diversity = 0;
  double geometric_diversity = 0;
  std::string normalization;
  int invalid = 0;
};

inline const char* normalization_name(DiversityNormalization n) {
  return n == DiversityNormalization::PerPair ? "per-pair" : "per-sample";
}

inline void write_eval_csv_header(std::ostream& out) {
  out << "method,samples,coverage,quality,fpd,structural_diversity,semantic_diversity,geometric_diversity,"
         "normalization,invalid\n";
}

inline void write_eval_csv_row(std::ostream& out, const EvalReport& r) {
  out << r.method << ',' << r.samples << ',' << r.coverage << ',' << r.quality << ',' << r.fpd << ','
      << r.structural_diversity << ',' << r.semantic_diversity << ',' << r.geometric_diversity << ','
      << r.normalization << ',' << r.invalid << '\n';
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"method", r.method},
          {"samples", r.samples},
          {"coverage", r.coverage},
          {"quality", r.quality},
          {"fpd", r.fpd},
          {"structural_diversity", r.structural_diversity},
          {"semantic_diversity", r.semantic_diversity},
          {"geometric_diversity", r.geometric_diversity},
          {"normalization", r.normalization},
          {"invalid", r.invalid}};
}

/// Coverage, quality and FPD of `generated` against `test`; diversity over
/// `groups` (each group is one conditioning shape's samples, or the whole set).
inline EvalReport score(const std::vector<PartHierarchy>& generated, const std::vector<std::vector<PartHierarchy>>& groups,
                        const std::vector<PartHierarchy>& test, const EvalConfig& cfg, std::string method) {
  EvalReport r;
  r.method = std::move(method);
  r.samples = static_cast<int>(generated.size());
  r.normalization = normalization_name(cfg.normalization);
  for (const auto& s : generated) r.invalid += !validate(s).ok();
  const ShapeSet g(generated, cfg.n_points, cfg.seed);
  const ShapeSet t(test, cfg.n_points, cfg.seed + 1000003);
  r.coverage = coverage(g, t);
  r.quality = quality(g, t);
  r.fpd = fpd(g, t, random_projection_encoder(cfg.encoder_seed));
  double sd = 0, sm = 0, gd = 0;
  for (const auto& grp : groups) {
    sd += structural_diversity(grp);
    sm += semantic_diversity(grp);
    if (grp.size() > 1) gd += geometric_diversity(ShapeSet(grp, cfg.n_points, cfg.seed + 7), cfg.normalization);
  }
  const double n = std::max<double>(1.0, static_cast<double>(groups.size()));
  r.structural_diversity = sd / n;
  r.semantic_diversity = sm / n;
  r.geometric_diversity = gd / n;
  return r;
}

template <class T>
EvalReport evaluate_model(const Model<T>& model, const std::vector<PartHierarchy>& test, const EvalConfig& cfg,
                          const std::string& category, std::string method = "model") {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  std::vector<PartHierarchy> generated;
  std::vector<std::vector<PartHierarchy>> groups;
  if (!cfg.conditional) {
    for (int i = 0; i < cfg.n_samples; ++i)
      generated.push_back(sample_unconditional(model, derive_seed(cfg.seed, i), category).shape);
    groups.push_back(generated);
  } else {
    const int n_cond = std::min<int>(cfg.conditioning_shapes, static_cast<int>(test.size()));
    for (int i = 0; i < n_cond; ++i) {
      const auto c = reconstruct(model, test[static_cast<std::size_t>(i)]);
      std::vector<PartHierarchy> grp;
      for (int j = 0; j < cfg.samples_per_condition; ++j)
        grp.push_back(sample_conditional(model, c, cfg.depth, derive_seed(derive_seed(cfg.seed, i), j)).shape);
      generated.insert(generated.end(), grp.begin(), grp.end());
      groups.push_back(std::move(grp));
    }
  }
  return score(generated, groups, test, cfg, std::move(method));
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationVariant {
  std::string name;
  bool no_lstm = false;
  int d_cut = -1;
};

inline std::vector<AblationVariant> default_ablations() {
  return {{"full", false, -1}, {"no_lstm", true, -1}, {"d_cut=0", false, 0}, {"d_cut=1", false, 1}};
}

struct AblationRow {
  std::string name;
  double initial_loss = 0;
  double final_loss = 0;
  EvalReport report;
};

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,coverage,quality,initial_loss,final_loss\n";
  for (const auto& r : rows)
    out << r.name << ',' << r.report.coverage << ',' << r.report.quality << ',' << r.initial_loss << ','
        << r.final_loss << '\n';
}

/// Trains one model per variant from the same config and data, then evaluates
/// unconditional samples against `test`.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<PartHierarchy>& train,
                                             const std::vector<PartHierarchy>& test, const EvalConfig& eval,
                                             const std::string& category,
                                             const std::vector<AblationVariant>& variants = default_ablations()) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    TrainConfig cfg = base;
    cfg.model.no_lstm = v.no_lstm;
    cfg.model.d_cut = v.d_cut;
    if (v.no_lstm) cfg.model.latent_dim = cfg.model.feature_dim;
    cfg.checkpoint_dir.clear();
    cfg.log_csv.clear();
    Trainer<float> trainer(cfg, train);
    const std::vector<PartHierarchy> subset(train.begin(),
                                            train.begin() + std::min<std::ptrdiff_t>(cfg.eval_shapes, train.size()));
    AblationRow row;
    row.name = v.name;
    row.initial_loss = evaluate_loss(trainer.model(), subset, cfg.weights, cfg.seed).total;
    trainer.run();
    row.final_loss = evaluate_loss(trainer.model(), subset, cfg.weights, cfg.seed).total;
    EvalConfig e = eval;
    e.conditional = false;
    row.report = evaluate_model(trainer.model(), test, e, category, v.name);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace lsd
