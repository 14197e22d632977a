// Shape-set metrics: structure signatures, diversity, chamfer, coverage,
// quality and Frechet feature distance.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "lsd/hierarchy.hpp"

namespace lsd {

// ---------------------------------------------------------------------------
// Structure signatures

struct SignatureOptions {
  bool labels = false;
  /// Only nodes with depth < max_depth take part; negative means all.
  int max_depth = -1;
};

namespace detail {

inline bool kept(const PartHierarchy& s, int id, const SignatureOptions& opt) {
  return opt.max_depth < 0 || s.node(id).depth < opt.max_depth;
}

/// Canonical encoding of the sibling graph under the best ordering of
/// children. Children are first ordered by (subtree signature, refined colour);
/// ties left after colour refinement are resolved by trying every ordering
/// within each tied cell and keeping the smallest edge list.
inline std::string canonical_children(const std::vector<std::string>& sigs,
                                      const std::vector<std::tuple<int, int, int>>& edges) {
  const int n = static_cast<int>(sigs.size());
  std::vector<int> colour(n);
  {
    std::vector<std::string> uniq(sigs);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (int i = 0; i < n; ++i) colour[i] = int(std::lower_bound(uniq.begin(), uniq.end(), sigs[i]) - uniq.begin());
  }
  std::vector<std::vector<std::pair<int, int>>> adj(n);  // (kind, neighbour)
  for (auto [a, b, k] : edges) {
    adj[a].push_back({k, b});
    adj[b].push_back({k, a});
  }
  for (int round = 0; round < n; ++round) {
    using Key = std::pair<int, std::vector<std::pair<int, int>>>;
    std::vector<Key> keys(n);
    for (int i = 0; i < n; ++i) {
      keys[i].first = colour[i];
      for (auto [k, j] : adj[i]) keys[i].second.push_back({k, colour[j]});
      std::sort(keys[i].second.begin(), keys[i].second.end());
    }
    std::vector<Key> uniq(keys);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<int> next(n);
    for (int i = 0; i < n; ++i) next[i] = int(std::lower_bound(uniq.begin(), uniq.end(), keys[i]) - uniq.begin());
    const bool stable = std::set<int>(next.begin(), next.end()).size() == std::set<int>(colour.begin(), colour.end()).size();
    colour = next;
    if (stable) break;
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return colour[a] < colour[b]; });
  // cells: [begin, end) ranges of equal colour within `order`
  std::vector<std::pair<int, int>> cells;
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && colour[order[j]] == colour[order[i]]) ++j;
    if (j - i > 1) {
      bool touches = false;
      for (int k = i; k < j; ++k) touches |= !adj[order[k]].empty();
      if (touches) cells.push_back({i, j});
    }
    i = j;
  }

  auto encode = [&](const std::vector<int>& ord) {
    std::vector<int> pos(n);
    for (int p = 0; p < n; ++p) pos[ord[p]] = p;
    std::vector<std::tuple<int, int, int>> e;
    for (auto [a, b, k] : edges) e.emplace_back(std::min(pos[a], pos[b]), std::max(pos[a], pos[b]), k);
    std::sort(e.begin(), e.end());
    return e;
  };

  std::vector<std::tuple<int, int, int>> best = encode(order);
  std::function<void(std::size_t)> search = [&](std::size_t c) {
    if (c == cells.size()) {
      auto e = encode(order);
      if (e < best) best = std::move(e);
      return;
    }
    auto [lo, hi] = cells[c];
    std::sort(order.begin() + lo, order.begin() + hi);
    do search(c + 1);
    while (std::next_permutation(order.begin() + lo, order.begin() + hi));
  };
  if (!cells.empty()) search(0);

  std::vector<std::string> sorted_sigs;
  for (int i : order) sorted_sigs.push_back(sigs[i]);
  // order may have been permuted inside cells, but members of a cell share a signature
  std::string out;
  for (const auto& s : sorted_sigs) out += s;
  out += '|';
  for (auto [a, b, k] : best) out += std::to_string(a) + '-' + std::to_string(b) + ':' + std::to_string(k) + ',';
  return out;
}

inline std::string node_signature(const PartHierarchy& s, int id, const SignatureOptions& opt,
                                  const std::map<std::pair<int, int>, std::vector<int>>& edge_kinds) {
  const auto& node = s.node(id);
  std::string head = opt.labels ? "n" + std::to_string(node.label) : "n";
  std::vector<int> kids;
  for (int c : node.children)
    if (kept(s, c, opt)) kids.push_back(c);
  if (kids.empty()) return head + "()";
  std::vector<std::string> sigs;
  for (int c : kids) sigs.push_back(node_signature(s, c, opt, edge_kinds));
  std::vector<std::tuple<int, int, int>> edges;
  for (std::size_t i = 0; i < kids.size(); ++i)
    for (std::size_t j = i + 1; j < kids.size(); ++j) {
      auto it = edge_kinds.find({std::min(kids[i], kids[j]), std::max(kids[i], kids[j])});
      if (it == edge_kinds.end()) continue;
      for (int k : it->second) edges.emplace_back(int(i), int(j), k);
    }
  return head + "(" + canonical_children(sigs, edges) + ")";
}

}  // namespace detail

/// Canonical string for the tree shape plus sibling-edge kinds. Isomorphic
/// hierarchies (any child order, any node ids) get equal signatures. Labels
/// are included only when requested.
inline std::string structure_signature(const PartHierarchy& shape, const SignatureOptions& opt = {}) {
  std::map<std::pair<int, int>, std::vector<int>> edge_kinds;
  for (const auto& e : shape.edges) {
    if (!detail::kept(shape, e.a, opt) || !detail::kept(shape, e.b, opt)) continue;
    edge_kinds[{std::min(e.a, e.b), std::max(e.a, e.b)}].push_back(static_cast<int>(e.kind));
  }
  for (auto& [k, v] : edge_kinds) std::sort(v.begin(), v.end());
  return detail::node_signature(shape, shape.root_id, opt, edge_kinds);
}

/// Differences between two shapes restricted to depths < depth: node ids,
/// labels, bit-level boxes, child lists among kept nodes, and edges between
/// kept nodes. Empty means identical.
inline std::vector<std::string> prefix_differences(const PartHierarchy& a, const PartHierarchy& b, int depth) {
  std::vector<std::string> out;
  auto bits = [](const OrientedBox& box) {
    std::vector<std::uint64_t> v;
    for (double x : box.center) v.push_back(std::bit_cast<std::uint64_t>(x));
    for (double x : box.half_extents) v.push_back(std::bit_cast<std::uint64_t>(x));
    for (double x : box.rotation) v.push_back(std::bit_cast<std::uint64_t>(x));
    return v;
  };
  auto kept_ids = [&](const PartHierarchy& s) {
    std::set<int> ids;
    for (const auto& [id, n] : s.nodes)
      if (n.depth < depth) ids.insert(id);
    return ids;
  };
  const auto ia = kept_ids(a), ib = kept_ids(b);
  if (ia != ib) {
    out.push_back("node sets differ");
    return out;
  }
  for (int id : ia) {
    const auto &na = a.node(id), &nb = b.node(id);
    if (na.label != nb.label) out.push_back("label of node " + std::to_string(id));
    if (bits(na.box) != bits(nb.box)) out.push_back("box of node " + std::to_string(id));
    if (na.depth + 1 < depth && na.children != nb.children) out.push_back("children of node " + std::to_string(id));
  }
  auto kept_edges = [&](const PartHierarchy& s, const std::set<int>& ids) {
    std::vector<std::tuple<int, int, int, std::vector<std::uint64_t>>> v;
    for (const auto& e : s.edges) {
      if (!ids.count(e.a) || !ids.count(e.b)) continue;
      std::vector<std::uint64_t> p;
      if (e.params)
        for (double x : e.params->values) p.push_back(std::bit_cast<std::uint64_t>(x));
      v.emplace_back(e.a, e.b, static_cast<int>(e.kind), std::move(p));
    }
    std::sort(v.begin(), v.end());
    return v;
  };
  if (kept_edges(a, ia) != kept_edges(b, ib)) out.push_back("edges differ");
  return out;
}

/// Distinct label sets present in a shape.
inline std::set<int> label_set(const PartHierarchy& shape) {
  std::set<int> out;
  for (const auto& [id, n] : shape.nodes) out.insert(n.label);
  return out;
}

// ---------------------------------------------------------------------------
// Point-set distances

/// Mean squared nearest-neighbour distance from A to B plus from B to A.
/// Brute force over all pairs.
inline double chamfer(const PointSet& a, const PointSet& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point set");
  return chamfer_sq(a, b);
}

struct ShapeSet {
  std::vector<PartHierarchy> shapes;
  std::vector<PointSet> points;
  std::uint64_t seed = 0;
  std::string conditioning;  // id of the conditioning shape, if any
  std::string method;

  ShapeSet() = default;
  /// Samples `n_points` surface points per shape; shape i uses seed + i.
  ShapeSet(std::vector<PartHierarchy> s, int n_points = kDefaultSurfacePoints, std::uint64_t seed_ = 0,
           std::string method_ = "")
      : shapes(std::move(s)), seed(seed_), method(std::move(method_)) {
    points.reserve(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) points.push_back(sample_surface_points(shapes[i], n_points, seed + i));
  }

  std::size_t size() const { return shapes.size(); }
};

/// Symmetric matrix of chamfer distances between all members.
inline Eigen::MatrixXd pairwise_chamfer(const ShapeSet& set) {
  const auto n = static_cast<Eigen::Index>(set.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = chamfer(set.points[i], set.points[j]);
  return d;
}

inline int structural_diversity(const std::vector<PartHierarchy>& shapes) {
  if (shapes.empty()) throw std::invalid_argument("structural_diversity: empty set");
  std::set<std::string> sigs;
  for (const auto& s : shapes) sigs.insert(structure_signature(s));
  return static_cast<int>(sigs.size());
}
inline int structural_diversity(const ShapeSet& set) { return structural_diversity(set.shapes); }

inline int semantic_diversity(const std::vector<PartHierarchy>& shapes) {
  if (shapes.empty()) throw std::invalid_argument("semantic_diversity: empty set");
  std::set<std::set<int>> sets;
  for (const auto& s : shapes) sets.insert(label_set(s));
  return static_cast<int>(sets.size());
}
inline int semantic_diversity(const ShapeSet& set) { return semantic_diversity(set.shapes); }

enum class DiversityNormalization {
  PerPair,    // mean over the n(n-1) ordered pairs
  PerSample,  // sum over ordered pairs divided by n
};

inline double geometric_diversity(const ShapeSet& set, DiversityNormalization norm = DiversityNormalization::PerPair) {
  const double n = static_cast<double>(set.size());
  if (set.size() < 2) throw std::invalid_argument("geometric_diversity: need at least two shapes");
  const double total = pairwise_chamfer(set).sum();  // ordered pairs, diagonal is zero
  return norm == DiversityNormalization::PerPair ? total / (n * (n - 1)) : total / n;
}

namespace detail {

inline double nearest_sum(const ShapeSet& from, const ShapeSet& to) {
  if (from.size() == 0 || to.size() == 0) throw std::invalid_argument("coverage/quality: empty set");
  double total = 0;
  for (const auto& p : from.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to.points) best = std::min(best, chamfer(q, p));
    total += best;
  }
  return total;
}

}  // namespace detail

/// Sum over test shapes of the distance to the nearest generated shape.
inline double coverage(const ShapeSet& generated, const ShapeSet& test) { return detail::nearest_sum(test, generated); }

/// Sum over generated shapes of the distance to the nearest test shape.
inline double quality(const ShapeSet& generated, const ShapeSet& test) { return detail::nearest_sum(generated, test); }

// ---------------------------------------------------------------------------
// Frechet feature distance

using FeatureEncoder = std::function<Eigen::VectorXd(const PointSet&)>;

/// Fixed random per-point lift relu(W p + b) with max and mean pooling.
inline FeatureEncoder random_projection_encoder(std::uint64_t seed = 0, int dim = 64) {
  if (dim < 2 || dim % 2) throw std::invalid_argument("random_projection_encoder: dim must be even and >= 2");
  const int h = dim / 2;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd w(h, 3);
  Eigen::VectorXd b(h);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < 3; ++j) w(i, j) = n01(rng);
    b(i) = 0.5 * n01(rng);
  }
  return [w, b, h](const PointSet& pts) {
    if (pts.empty()) throw std::invalid_argument("feature encoder: empty point set");
    Eigen::VectorXd mx = Eigen::VectorXd::Constant(h, -std::numeric_limits<double>::infinity());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(h);
    for (const auto& p : pts) {
      const Eigen::VectorXd a = (w * Eigen::Vector3d(p[0], p[1], p[2]) + b).cwiseMax(0.0);
      mx = mx.cwiseMax(a);
      mean += a;
    }
    mean /= static_cast<double>(pts.size());
    Eigen::VectorXd out(2 * h);
    out << mx, mean;
    return out;
  };
}

/// Frechet distance between Gaussian fits of two feature sets (one row per
/// sample): |mu_s - mu_t|^2 + tr(S_s) + tr(S_t) - 2 tr((S_t^1/2 S_s S_t^1/2)^1/2).
/// Covariances get `ridge` * I added.
inline double frechet_distance(const Eigen::MatrixXd& fs, const Eigen::MatrixXd& ft, double ridge = 1e-6) {
  if (fs.rows() < 2 || ft.rows() < 2) throw std::invalid_argument("fpd: need at least two samples per set");
  if (fs.cols() != ft.cols()) throw std::invalid_argument("fpd: feature dimensions differ");
  auto fit = [ridge](const Eigen::MatrixXd& f) {
    const Eigen::VectorXd mu = f.colwise().mean();
    const Eigen::MatrixXd c = f.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(f.rows() - 1);
    cov.diagonal().array() += ridge;
    return std::pair{mu, cov};
  };
  const auto [mu_s, cov_s] = fit(fs);
  const auto [mu_t, cov_t] = fit(ft);
  auto psd_sqrt = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd r = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return Eigen::MatrixXd(es.eigenvectors() * r.asDiagonal() * es.eigenvectors().transpose());
  };
  const Eigen::MatrixXd st = psd_sqrt(cov_t);
  const Eigen::MatrixXd inner = st * cov_s * st;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu_s - mu_t).squaredNorm() + cov_s.trace() + cov_t.trace() - 2.0 * tr_sqrt;
}

inline Eigen::MatrixXd encode_set(const ShapeSet& set, const FeatureEncoder& enc) {
  Eigen::MatrixXd f;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Eigen::VectorXd v = enc(set.points[i]);
    if (i == 0) f.resize(static_cast<Eigen::Index>(set.size()), v.size());
    f.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  return f;
}

inline double fpd(const ShapeSet& generated, const ShapeSet& test, const FeatureEncoder& enc) {
  return frechet_distance(encode_set(generated, enc), encode_set(test, enc));
}

}  // namespace lsd
