// Brute-force reference implementations used to check the metric code.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "lsd/geometry.hpp"
#include "lsd/hierarchy.hpp"

namespace lsd::oracle {

/// Chamfer distance through a dense Eigen distance matrix.
inline double chamfer(const PointSet& a, const PointSet& b) {
  Eigen::MatrixXd pa(a.size(), 3), pb(b.size(), 3);
  for (std::size_t i = 0; i < a.size(); ++i) pa.row(i) << a[i][0], a[i][1], a[i][2];
  for (std::size_t i = 0; i < b.size(); ++i) pb.row(i) << b[i][0], b[i][1], b[i][2];
  const Eigen::MatrixXd d = (pa.rowwise().squaredNorm() * Eigen::RowVectorXd::Ones(pb.rows())) +
                            (Eigen::VectorXd::Ones(pa.rows()) * pb.rowwise().squaredNorm().transpose()) -
                            2.0 * pa * pb.transpose();
  return d.cwiseMax(0.0).rowwise().minCoeff().mean() + d.cwiseMax(0.0).colwise().minCoeff().mean();
}

/// Sum over `from` of the nearest chamfer distance into `to`.
inline double nearest_sum(const std::vector<PointSet>& from, const std::vector<PointSet>& to) {
  double s = 0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) best = std::min(best, chamfer(p, q));
    s += best;
  }
  return s;
}

/// Minimum-cost assignment of every row to a distinct column, by enumeration.
inline double min_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size(), m = cost.at(0).size();
  std::vector<int> cols(m);
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (std::size_t i = 0; i < n; ++i) c += cost[i][cols[i]];
    best = std::min(best, c);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

using EdgeMap = std::map<std::pair<int, int>, std::vector<int>>;

inline EdgeMap edge_map(const PartHierarchy& s) {
  EdgeMap m;
  for (const auto& e : s.edges) m[{std::min(e.a, e.b), std::max(e.a, e.b)}].push_back(static_cast<int>(e.kind));
  for (auto& [k, v] : m) std::sort(v.begin(), v.end());
  return m;
}

inline std::vector<int> kinds_between(const EdgeMap& m, int a, int b) {
  auto it = m.find({std::min(a, b), std::max(a, b)});
  return it == m.end() ? std::vector<int>{} : it->second;
}

// Backtracking tree isomorphism (labels ignored): children of u are mapped
// one by one onto unused children of v whose sub-trees are isomorphic and
// whose edges to the already mapped siblings agree.
inline bool isomorphic(const PartHierarchy& a, int u, const EdgeMap& ea, const PartHierarchy& b, int v,
                       const EdgeMap& eb) {
  const auto& cu = a.node(u).children;
  const auto& cv = b.node(v).children;
  if (cu.size() != cv.size()) return false;
  const std::size_t n = cu.size();
  std::vector<std::vector<char>> ok(n, std::vector<char>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) ok[i][j] = isomorphic(a, cu[i], ea, b, cv[j], eb);
  std::vector<int> map(n, -1);
  std::vector<char> used(n, 0);
  std::function<bool(std::size_t)> place = [&](std::size_t i) {
    if (i == n) return true;
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j] || !ok[i][j]) continue;
      bool consistent = true;
      for (std::size_t k = 0; k < i && consistent; ++k)
        consistent = kinds_between(ea, cu[k], cu[i]) == kinds_between(eb, cv[map[k]], cv[j]);
      if (!consistent) continue;
      used[j] = 1;
      map[i] = static_cast<int>(j);
      if (place(i + 1)) return true;
      used[j] = 0;
    }
    return false;
  };
  return place(0);
}

inline bool isomorphic(const PartHierarchy& a, const PartHierarchy& b) {
  return isomorphic(a, a.root_id, edge_map(a), b, b.root_id, edge_map(b));
}

/// Number of isomorphism classes, by pairwise comparison against representatives.
inline int structure_classes(const std::vector<PartHierarchy>& shapes) {
  std::vector<std::size_t> reps;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    bool found = false;
    for (auto r : reps) found = found || isomorphic(shapes[i], shapes[r]);
    if (!found) reps.push_back(i);
  }
  return static_cast<int>(reps.size());
}

/// Number of distinct label sets.
inline int label_set_classes(const std::vector<PartHierarchy>& shapes) {
  std::vector<std::vector<int>> seen;
  for (const auto& s : shapes) {
    std::vector<int> labels;
    for (const auto& [id, n] : s.nodes) labels.push_back(n.label);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    if (std::find(seen.begin(), seen.end(), labels) == seen.end()) seen.push_back(labels);
  }
  return static_cast<int>(seen.size());
}

// Random relabeling of node ids and shuffling of child lists.
inline PartHierarchy scramble(const PartHierarchy& s, std::mt19937_64& rng) {
  std::vector<int> ids;
  for (const auto& [id, n] : s.nodes) ids.push_back(id);
  std::vector<int> fresh(ids.size());
  std::iota(fresh.begin(), fresh.end(), 100);
  std::shuffle(fresh.begin(), fresh.end(), rng);
  std::map<int, int> to;
  for (std::size_t i = 0; i < ids.size(); ++i) to[ids[i]] = fresh[i];
  PartHierarchy out;
  out.category = s.category;
  out.root_id = to[s.root_id];
  for (const auto& [id, n] : s.nodes) {
    PartNode m = n;
    m.id = to[id];
    for (auto& c : m.children) c = to[c];
    std::shuffle(m.children.begin(), m.children.end(), rng);
    out.nodes[m.id] = m;
  }
  for (auto e : s.edges) {
    e.a = to[e.a], e.b = to[e.b];
    if (rng() % 2) std::swap(e.a, e.b);
    out.edges.push_back(e);
  }
  std::shuffle(out.edges.begin(), out.edges.end(), rng);
  assign_depths(out);
  return out;
}

}  // namespace lsd::oracle
