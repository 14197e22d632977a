// Unconditional, conditional and rejection sampling, latent interpolation and
// the sampling-time experiment.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "lsd/decoder.hpp"
#include "lsd/metrics.hpp"

namespace lsd {

/// Seed for item `index` of a stream started from `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// i.i.d. standard-normal latents, one per depth.
inline LatentSequence sample_prior(std::size_t depth_count, std::size_t dim, std::uint64_t seed) {
  if (depth_count < 1) throw std::invalid_argument("sample_prior: depth_count must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  LatentSequence z;
  for (std::size_t d = 0; d < depth_count; ++d) {
    std::vector<double> v(dim);
    for (auto& x : v) x = n01(rng);
    z.z.push_back(std::move(v));
  }
  return z;
}

template <class T>
DecodeResult sample_unconditional(const Model<T>& model, std::uint64_t seed, const std::string& category = {}) {
  const auto& hp = model.hp();
  return decode_shape(model, sample_prior(static_cast<std::size_t>(hp.d_max) + 1, hp.latent_dim, seed),
                      DecodeOptions{category, std::nullopt});
}

/// Replaces z_{>=depth} of a decoded shape by `suffix` and regenerates every
/// node at depth >= depth from the cached features of the depth-1 nodes.
/// Equal, bit for bit, to decoding the spliced sequence from scratch.
template <class T>
DecodeResult regenerate_from_depth(const Model<T>& model, const DecodeResult& base, int depth,
                                   const LatentSequence& suffix) {
  const std::size_t n = base.trace.z.size();
  if (depth < 1 || static_cast<std::size_t>(depth) > n)
    throw std::invalid_argument("regenerate_from_depth: depth must be in [1, len(z)]");
  if (suffix.size() != n - static_cast<std::size_t>(depth))
    throw std::invalid_argument("regenerate_from_depth: suffix must hold " + std::to_string(n - depth) + " latents");
  DecodeResult r;
  r.trace.z.z.assign(base.trace.z.z.begin(), base.trace.z.z.begin() + depth);
  for (const auto& v : suffix.z) {
    if (v.size() != model.hp().latent_dim) throw std::invalid_argument("regenerate_from_depth: latent dimension mismatch");
    r.trace.z.z.push_back(v);
  }
  ad::NoGradGuard no_grad;
  const auto zhat = decode_sequence(model, to_tensors<T>(r.trace.z));
  r.trace.zhat = detail::to_values(zhat);

  r.shape.category = base.shape.category;
  r.shape.root_id = base.shape.root_id;
  std::deque<int> frontier;
  int next_id = 0;
  for (const auto& [id, node] : base.shape.nodes) {
    if (node.depth >= depth) continue;
    PartNode kept = node;
    if (node.depth == depth - 1) {
      kept.children.clear();
      frontier.push_back(id);
    }
    r.shape.nodes.emplace(id, std::move(kept));
    r.trace.features[id] = base.trace.features.at(id);
    next_id = std::max(next_id, id + 1);
  }
  for (const auto& e : base.shape.edges)
    if (r.shape.contains(e.a) && r.shape.contains(e.b)) r.shape.edges.push_back(e);
  std::sort(frontier.begin(), frontier.end());
  detail::expand(model, zhat, model.hp().d_cut, r.shape, r.trace, std::move(frontier), {}, next_id);
  return r;
}

/// Latent suffix for regenerating below a node at `depth`.
inline LatentSequence resample_suffix(std::size_t sequence_length, int depth, std::size_t dim, std::uint64_t seed) {
  return sample_prior(sequence_length - static_cast<std::size_t>(depth), dim, seed);
}

/// Keeps z_{<depth} of the conditioning sample and draws z_{>=depth} from the prior.
template <class T>
DecodeResult sample_conditional(const Model<T>& model, const DecodeResult& conditioning, int depth, std::uint64_t seed) {
  if (conditioning.trace.z.empty()) throw std::invalid_argument("sample_conditional: conditioning has no latents");
  const std::size_t n = conditioning.trace.z.size();
  if (depth < 1 || static_cast<std::size_t>(depth) > n)
    throw std::invalid_argument("sample_conditional: depth must be in [1, len(z)]");
  const auto suffix = sample_prior(std::max<std::size_t>(n - depth, 1), model.hp().latent_dim, seed);
  LatentSequence s;
  s.z.assign(suffix.z.begin(), suffix.z.begin() + static_cast<std::ptrdiff_t>(n - depth));
  return regenerate_from_depth(model, conditioning, depth, s);
}

// ---------------------------------------------------------------------------
// Rejection sampling

struct RejectionConfig {
  double epsilon = 0.05;
  double eta = 0.7;
  int max_tries = 10000;
  int depth = 1;  // conditioning depth D: depths < D must match
  int target = 1;  // accepted samples wanted
  bool structural = true;
  int prefix_points = 256;
  unsigned threads = 1;
};

struct RejectionResult {
  std::vector<DecodeResult> accepted;
  int tries = 0;
  bool exhausted = false;
  double seconds = 0;
};

/// Structure, edge kinds and labels at depths < depth agree up to isomorphism.
inline bool prefix_structure_matches(const PartHierarchy& a, const PartHierarchy& b, int depth) {
  const SignatureOptions opt{true, depth};
  return structure_signature(a, opt) == structure_signature(b, opt);
}

/// Surface samples of the union of boxes at depths < depth.
inline PointSet prefix_points(const PartHierarchy& shape, int depth, int n, std::uint64_t seed = 0) {
  std::vector<OrientedBox> boxes;
  for (const auto& [id, node] : shape.nodes)
    if (node.depth < depth) boxes.push_back(node.box);
  return sample_box_surfaces(boxes, n, seed);
}

/// Proposal k perturbs the whole concatenated latent sequence by a vector
/// with uniform direction and radius uniform in [0, eta].
inline LatentSequence ball_proposal(const LatentSequence& center, double eta, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  LatentSequence z = center;
  double norm2 = 0;
  std::vector<std::vector<double>> dir;
  for (const auto& v : center.z) {
    std::vector<double> d(v.size());
    for (auto& x : d) {
      x = n01(rng);
      norm2 += x * x;
    }
    dir.push_back(std::move(d));
  }
  const double radius = eta * u01(rng);
  const double scale = norm2 > 0 ? radius / std::sqrt(norm2) : 0.0;
  for (std::size_t d = 0; d < z.z.size(); ++d)
    for (std::size_t i = 0; i < z.z[d].size(); ++i) z.z[d][i] += scale * dir[d][i];
  return z;
}

/// Draws proposals around the conditioning latent until `target` decode to a
/// shape whose depth-<D prefix matches the conditioning structurally (when
/// enabled) and within chamfer epsilon geometrically. Proposal k always uses
/// derive_seed(seed, k), so the outcome does not depend on the thread count.
template <class T>
RejectionResult rejection_sample(const Model<T>& model, const DecodeResult& conditioning, const RejectionConfig& cfg,
                                 std::uint64_t seed) {
  if (conditioning.trace.z.empty()) throw std::invalid_argument("rejection_sample: conditioning has no latents");
  if (!(cfg.epsilon >= 0)) throw std::invalid_argument("rejection_sample: epsilon must be >= 0");
  if (!(cfg.eta > 0)) throw std::invalid_argument("rejection_sample: eta must be > 0");
  const auto start = std::chrono::steady_clock::now();
  const PointSet ref = prefix_points(conditioning.shape, cfg.depth, cfg.prefix_points);
  const std::string category = conditioning.shape.category;

  auto evaluate = [&](int k) -> std::optional<DecodeResult> {
    const auto z = ball_proposal(conditioning.trace.z, cfg.eta, derive_seed(seed, static_cast<std::uint64_t>(k)));
    auto r = decode_shape(model, z, DecodeOptions{category, std::nullopt});
    if (cfg.structural && !prefix_structure_matches(conditioning.shape, r.shape, cfg.depth)) return std::nullopt;
    if (std::isfinite(cfg.epsilon) && chamfer(ref, prefix_points(r.shape, cfg.depth, cfg.prefix_points)) >= cfg.epsilon)
      return std::nullopt;
    return r;
  };

  RejectionResult out;
  const unsigned workers = std::max(1u, cfg.threads);
  int k = 0;
  while (static_cast<int>(out.accepted.size()) < cfg.target && k < cfg.max_tries) {
    const int batch = std::min<int>(static_cast<int>(workers), cfg.max_tries - k);
    std::vector<std::optional<DecodeResult>> results(static_cast<std::size_t>(batch));
    if (batch == 1) {
      results[0] = evaluate(k);
    } else {
      std::vector<std::thread> pool;
      for (int b = 0; b < batch; ++b) pool.emplace_back([&, b] { results[b] = evaluate(k + b); });
      for (auto& t : pool) t.join();
    }
    for (int b = 0; b < batch; ++b) {
      ++out.tries;
      if (results[b] && static_cast<int>(out.accepted.size()) < cfg.target) out.accepted.push_back(std::move(*results[b]));
      if (static_cast<int>(out.accepted.size()) == cfg.target) break;
    }
    k += batch;
  }
  out.exhausted = static_cast<int>(out.accepted.size()) < cfg.target;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------------------

/// Decodes z with z[depth] replaced by (1-t) z_a + t z_b for t on a uniform grid over [0, 1].
template <class T>
std::vector<PartHierarchy> interpolate_latents(const Model<T>& model, const LatentSequence& z,
                                               const std::vector<double>& z_a, const std::vector<double>& z_b,
                                               int depth, int steps, const std::string& category = {}) {
  if (depth < 0 || static_cast<std::size_t>(depth) >= z.size()) throw std::invalid_argument("interpolate_latents: depth out of range");
  if (steps < 2) throw std::invalid_argument("interpolate_latents: need at least two steps");
  if (z_a.size() != z_b.size() || z_a.size() != z[depth].size())
    throw std::invalid_argument("interpolate_latents: latent dimension mismatch");
  std::vector<PartHierarchy> out;
  for (int i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / (steps - 1);
    auto zi = z;
    for (std::size_t j = 0; j < z_a.size(); ++j) zi[depth][j] = (1.0 - t) * z_a[j] + t * z_b[j];
    out.push_back(decode_shape(model, zi, DecodeOptions{category, std::nullopt}).shape);
  }
  return out;
}

struct TimingRow {
  double epsilon = 0;
  double conditional_seconds = 0;  // mean per sample
  double rejection_seconds = 0;    // mean per accepted sample
  int accepted = 0;
  int tries = 0;
  int exhausted = 0;  // conditioning shapes whose budget ran out
};

struct TimingConfig {
  std::vector<double> epsilons{0.2, 0.1, 0.05};
  int depth = 1;
  int samples_per_shape = 5;
  RejectionConfig rejection;
  std::uint64_t seed = 0;
};

/// For each epsilon: mean wall time of conditional sampling and of rejection
/// sampling per accepted sample, over all conditioning shapes. Rejection time
/// for a shape whose budget ran out counts the whole budget spent divided by
/// max(accepted, 1).
template <class T>
std::vector<TimingRow> timing_experiment(const Model<T>& model, const std::vector<DecodeResult>& conditioning,
                                         const TimingConfig& cfg) {
  using clock = std::chrono::steady_clock;
  std::vector<TimingRow> rows;
  for (double eps : cfg.epsilons) {
    TimingRow row;
    row.epsilon = eps;
    double cond_total = 0, rej_total = 0;
    int cond_count = 0, rej_count = 0;
    for (std::size_t i = 0; i < conditioning.size(); ++i) {
      const auto& c = conditioning[i];
      for (int s = 0; s < cfg.samples_per_shape; ++s) {
        const auto t0 = clock::now();
        auto r = sample_conditional(model, c, cfg.depth, derive_seed(cfg.seed, i * 1000 + s));
        cond_total += std::chrono::duration<double>(clock::now() - t0).count();
        ++cond_count;
      }
      RejectionConfig rc = cfg.rejection;
      rc.epsilon = eps;
      rc.depth = cfg.depth;
      rc.target = cfg.samples_per_shape;
      const auto rej = rejection_sample(model, c, rc, derive_seed(cfg.seed + 1, i));
      rej_total += rej.seconds;
      rej_count += std::max<int>(static_cast<int>(rej.accepted.size()), 1);
      row.accepted += static_cast<int>(rej.accepted.size());
      row.tries += rej.tries;
      row.exhausted += rej.exhausted;
    }
    row.conditional_seconds = cond_total / std::max(cond_count, 1);
    row.rejection_seconds = rej_total / std::max(rej_count, 1);
    rows.push_back(row);
  }
  return rows;
}

inline void write_timing_csv(std::ostream& out, const std::vector<TimingRow>& rows) {
  out << "epsilon,conditional_seconds,rejection_seconds,accepted,tries,exhausted\n";
  for (const auto& r : rows)
    out << r.epsilon << ',' << r.conditional_seconds << ',' << r.rejection_seconds << ',' << r.accepted << ','
        << r.tries << ',' << r.exhausted << '\n';
}

}  // namespace lsd
