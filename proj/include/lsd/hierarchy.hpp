// Part hierarchies: semantic parts with oriented-box geometry arranged in an
// n-ary tree, plus relation edges between siblings.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lsd/geometry.hpp"

namespace lsd {

inline constexpr int kDefaultMaxDepth = 4;

struct OrientedBox {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 half_extents{0.5, 0.5, 0.5};
  Quat rotation{1.0, 0.0, 0.0, 0.0};

  /// Builds a box with a normalized rotation. Throws on non-positive extents.
  static OrientedBox make(const Vec3& center, const Vec3& half, const Quat& rotation = {1, 0, 0, 0}) {
    for (double h : half)
      if (!(h > 0.0)) throw std::invalid_argument("OrientedBox: half extents must be strictly positive");
    return OrientedBox{center, half, normalized(rotation)};
  }

  Mat3 matrix() const { return quat_to_matrix(rotation); }

  /// World position of the local point (u * half) for u in [-1, 1]^3.
  Vec3 to_world(const Vec3& u) const {
    const Vec3 local{u[0] * half_extents[0], u[1] * half_extents[1], u[2] * half_extents[2]};
    return center + rotate(rotation, local);
  }

  double surface_area() const {
    const auto& h = half_extents;
    return 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]);
  }

  friend bool operator==(const OrientedBox&, const OrientedBox&) = default;
};

enum class RelationKind : std::uint8_t { Adjacency = 0, RotSym = 1, TransSym = 2, RefSym = 3 };
inline constexpr int kRelationKinds = 4;

inline std::string_view to_string(RelationKind k) {
  switch (k) {
    case RelationKind::Adjacency: return "adjacency";
    case RelationKind::RotSym: return "rot_sym";
    case RelationKind::TransSym: return "trans_sym";
    case RelationKind::RefSym: return "ref_sym";
  }
  return "?";
}

inline std::optional<RelationKind> relation_kind_from_string(std::string_view s) {
  for (int k = 0; k < kRelationKinds; ++k)
    if (to_string(RelationKind(k)) == s) return RelationKind(k);
  return std::nullopt;
}

/// Ground-truth symmetry transform stored on an edge, kind-dependent layout:
///   TransSym: translation (3)
///   RefSym:   plane point (3), plane normal (3)
///   RotSym:   axis point (3), axis direction (3), angle (1)
struct SymParams {
  std::vector<double> values;
  friend bool operator==(const SymParams&, const SymParams&) = default;
};

struct RelationEdge {
  int a = -1;
  int b = -1;
  RelationKind kind = RelationKind::Adjacency;
  std::optional<SymParams> params;
  friend bool operator==(const RelationEdge&, const RelationEdge&) = default;
};

struct PartNode {
  int id = -1;
  int label = 0;
  OrientedBox box;
  std::vector<int> children;
  int depth = 0;

  bool is_leaf() const { return children.empty(); }
  friend bool operator==(const PartNode&, const PartNode&) = default;
};

struct PartHierarchy {
  std::string category;
  std::map<int, PartNode> nodes;
  int root_id = 0;
  std::vector<RelationEdge> edges;

  const PartNode& node(int id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw std::out_of_range("unknown node id " + std::to_string(id));
    return it->second;
  }
  PartNode& node(int id) {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw std::out_of_range("unknown node id " + std::to_string(id));
    return it->second;
  }
  bool contains(int id) const { return nodes.count(id) != 0; }
  const PartNode& root() const { return node(root_id); }

  friend bool operator==(const PartHierarchy&, const PartHierarchy&) = default;
};

struct Violation {
  std::string code;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool has(std::string_view code) const {
    return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.code == code; });
  }
  std::string summary() const {
    std::string s;
    for (const auto& v : violations) s += v.code + ": " + v.message + "\n";
    return s;
  }
};

/// Parent id of every node that has one; nodes listed under several parents keep the first.
inline std::map<int, int> parent_map(const PartHierarchy& shape) {
  std::map<int, int> parent;
  for (const auto& [id, n] : shape.nodes)
    for (int c : n.children) parent.emplace(c, id);
  return parent;
}

/// Recomputes every node's depth by BFS from the root. Unreachable nodes get -1.
inline void assign_depths(PartHierarchy& shape) {
  for (auto& [id, n] : shape.nodes) n.depth = -1;
  if (!shape.contains(shape.root_id)) return;
  std::deque<int> queue{shape.root_id};
  shape.node(shape.root_id).depth = 0;
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    const PartNode& n = shape.node(id);
    for (int c : n.children) {
      auto it = shape.nodes.find(c);
      if (it == shape.nodes.end() || it->second.depth != -1) continue;
      it->second.depth = n.depth + 1;
      queue.push_back(c);
    }
  }
}

inline int max_depth(const PartHierarchy& shape) {
  int d = 0;
  for (const auto& [id, n] : shape.nodes) d = std::max(d, n.depth);
  return d;
}

/// Node ids in breadth-first order from the root, children in list order.
inline std::vector<int> bfs_order(const PartHierarchy& shape, int from) {
  std::vector<int> order{from};
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int c : shape.node(order[i]).children) order.push_back(c);
  return order;
}
inline std::vector<int> bfs_order(const PartHierarchy& shape) { return bfs_order(shape, shape.root_id); }

inline std::vector<int> subtree_ids(const PartHierarchy& shape, int id) { return bfs_order(shape, id); }

inline std::vector<int> leaf_ids(const PartHierarchy& shape) {
  std::vector<int> out;
  for (const auto& [id, n] : shape.nodes)
    if (n.is_leaf()) out.push_back(id);
  return out;
}

/// Edges whose endpoints are both children of `parent`.
inline std::vector<RelationEdge> child_edges(const PartHierarchy& shape, int parent) {
  const auto& kids = shape.node(parent).children;
  const std::set<int> kid_set(kids.begin(), kids.end());
  std::vector<RelationEdge> out;
  for (const auto& e : shape.edges)
    if (kid_set.count(e.a) && kid_set.count(e.b)) out.push_back(e);
  return out;
}

inline ValidationReport validate(const PartHierarchy& shape, int d_max = kDefaultMaxDepth) {
  ValidationReport report;
  auto add = [&](std::string code, std::string msg) { report.violations.push_back({std::move(code), std::move(msg)}); };

  for (const auto& [key, n] : shape.nodes)
    if (key != n.id) add("id_mismatch", "node table key " + std::to_string(key) + " holds node id " + std::to_string(n.id));

  if (!shape.contains(shape.root_id)) {
    add("missing_root", "root id " + std::to_string(shape.root_id) + " is not in the node table");
    return report;
  }

  std::map<int, int> parent_count;
  for (const auto& [id, n] : shape.nodes) {
    std::set<int> seen;
    for (int c : n.children) {
      if (!shape.contains(c)) {
        add("unknown_child", "node " + std::to_string(id) + " lists unknown child " + std::to_string(c));
        continue;
      }
      if (!seen.insert(c).second) {
        add("not_a_tree", "node " + std::to_string(id) + " lists child " + std::to_string(c) + " twice");
        continue;
      }
      ++parent_count[c];
    }
  }
  for (const auto& [id, count] : parent_count)
    if (count > 1) add("not_a_tree", "node " + std::to_string(id) + " has " + std::to_string(count) + " parents");
  if (parent_count.count(shape.root_id)) add("not_a_tree", "root node has a parent");

  // Reachability from the root catches disconnected nodes and cycles detached from the root.
  std::set<int> reached{shape.root_id};
  std::deque<int> queue{shape.root_id};
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    for (int c : shape.node(id).children)
      if (shape.contains(c) && reached.insert(c).second) queue.push_back(c);
  }
  for (const auto& [id, n] : shape.nodes)
    if (!reached.count(id)) add("not_a_tree", "node " + std::to_string(id) + " is not reachable from the root");

  const auto parents = parent_map(shape);
  if (shape.root().depth != 0) add("bad_depth", "root depth must be 0");
  for (const auto& [id, n] : shape.nodes) {
    auto p = parents.find(id);
    if (p != parents.end() && shape.node(p->second).depth + 1 != n.depth)
      add("bad_depth", "node " + std::to_string(id) + " depth is not parent depth + 1");
    if (n.depth > d_max)
      add("too_deep", "node " + std::to_string(id) + " at depth " + std::to_string(n.depth) + " exceeds D_max " +
                          std::to_string(d_max));
    const auto& b = n.box;
    bool finite = true;
    for (double v : b.center) finite &= std::isfinite(v);
    for (double v : b.half_extents) finite &= std::isfinite(v);
    for (double v : b.rotation) finite &= std::isfinite(v);
    if (!finite) add("bad_box", "node " + std::to_string(id) + " box has non-finite values");
    for (double h : b.half_extents)
      if (!(h > 0.0)) {
        add("bad_box", "node " + std::to_string(id) + " box has a non-positive half extent");
        break;
      }
    if (std::abs(quat_norm(b.rotation) - 1.0) > 1e-6)
      add("bad_box", "node " + std::to_string(id) + " rotation is not a unit quaternion");
    if (n.label < 0) add("bad_label", "node " + std::to_string(id) + " has a negative label");
  }

  for (const auto& e : shape.edges) {
    const std::string tag = "edge (" + std::to_string(e.a) + "," + std::to_string(e.b) + ")";
    if (!shape.contains(e.a) || !shape.contains(e.b)) {
      add("bad_edge", tag + " references an unknown node");
      continue;
    }
    auto pa = parents.find(e.a), pb = parents.find(e.b);
    if (e.a == e.b || pa == parents.end() || pb == parents.end() || pa->second != pb->second)
      add("edge_not_siblings", tag + ": edge endpoints not siblings");
  }
  return report;
}

struct LevelView {
  int depth = 0;
  std::vector<int> node_ids;
  std::vector<RelationEdge> edges;
};

/// Nodes at exactly depth `d` (ascending id) and the sibling edges among them.
inline LevelView depth_slice(const PartHierarchy& shape, int d) {
  LevelView view;
  view.depth = d;
  std::set<int> ids;
  for (const auto& [id, n] : shape.nodes)
    if (n.depth == d) {
      view.node_ids.push_back(id);
      ids.insert(id);
    }
  for (const auto& e : shape.edges)
    if (ids.count(e.a) && ids.count(e.b)) view.edges.push_back(e);
  return view;
}

// ---------------------------------------------------------------------------
// Surface geometry

/// Distance from p to the surface of box (zero on the surface, positive inside and outside).
inline double box_surface_distance(const OrientedBox& box, const Vec3& p) {
  const Vec3 local = mat_tvec(box.matrix(), p - box.center);
  const auto& h = box.half_extents;
  bool inside = true;
  Vec3 excess{};
  for (int i = 0; i < 3; ++i) {
    const double a = std::abs(local[i]);
    if (a > h[i]) inside = false;
    excess[i] = std::max(0.0, a - h[i]);
  }
  if (!inside) return norm(excess);
  double d = h[0] - std::abs(local[0]);
  for (int i = 1; i < 3; ++i) d = std::min(d, h[i] - std::abs(local[i]));
  return d;
}

/// The eight corners of a box, in a fixed local order.
inline std::array<Vec3, 8> box_corners(const OrientedBox& box) {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i)
    out[i] = box.to_world({i & 1 ? 1.0 : -1.0, i & 2 ? 1.0 : -1.0, i & 4 ? 1.0 : -1.0});
  return out;
}

/// Fixed sample layout on the unit cube surface [-1,1]^3: an n x n grid of
/// cell centres on each face, faces ordered -x, +x, -y, +y, -z, +z.
inline std::vector<Vec3> unit_cube_face_grid(int n) {
  std::vector<Vec3> out;
  out.reserve(6 * n * n);
  for (int axis = 0; axis < 3; ++axis)
    for (double sign : {-1.0, 1.0})
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double u = (i + 0.5) / n * 2.0 - 1.0;
          const double v = (j + 0.5) / n * 2.0 - 1.0;
          Vec3 p{};
          p[axis] = sign;
          p[(axis + 1) % 3] = u;
          p[(axis + 2) % 3] = v;
          out.push_back(p);
        }
  return out;
}

inline PointSet box_grid_points(const OrientedBox& box, int n = 3) {
  PointSet out;
  for (const auto& u : unit_cube_face_grid(n)) out.push_back(box.to_world(u));
  return out;
}

/// Area-uniform samples on the union of the boxes' surfaces.
inline PointSet sample_box_surfaces(const std::vector<OrientedBox>& boxes, int n, std::uint64_t seed) {
  if (boxes.empty()) throw std::invalid_argument("sample_box_surfaces: no boxes");
  if (n < 1) throw std::invalid_argument("sample_box_surfaces: n must be >= 1");
  std::vector<double> face_area;
  face_area.reserve(boxes.size() * 6);
  for (const auto& b : boxes) {
    const auto& h = b.half_extents;
    for (int axis = 0; axis < 3; ++axis) {
      const double a = 4.0 * h[(axis + 1) % 3] * h[(axis + 2) % 3];
      face_area.push_back(a);
      face_area.push_back(a);
    }
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick_face(face_area.begin(), face_area.end());
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  PointSet out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    const std::size_t f = pick_face(rng);
    const auto& box = boxes[f / 6];
    const int axis = static_cast<int>(f % 6) / 2;
    Vec3 u{};
    u[axis] = (f % 2) ? 1.0 : -1.0;
    u[(axis + 1) % 3] = uni(rng);
    u[(axis + 2) % 3] = uni(rng);
    out.push_back(box.to_world(u));
  }
  return out;
}

/// Mean squared nearest-neighbour distance from a to b plus from b to a.
inline double chamfer_sq(const PointSet& a, const PointSet& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_sq: empty point set");
  std::vector<double> best_b(b.size(), std::numeric_limits<double>::infinity());
  double total_a = 0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = squared_distance(p, b[j]);
      best = std::min(best, d);
      best_b[j] = std::min(best_b[j], d);
    }
    total_a += best;
  }
  double total_b = 0;
  for (double d : best_b) total_b += d;
  return total_a / static_cast<double>(a.size()) + total_b / static_cast<double>(b.size());
}

inline constexpr int kDefaultSurfacePoints = 2048;

/// Area-uniform surface samples from the union of leaf boxes, deterministic in seed.
inline PointSet sample_surface_points(const PartHierarchy& shape, int n = kDefaultSurfacePoints,
                                      std::uint64_t seed = 0) {
  std::vector<OrientedBox> boxes;
  for (const auto& [id, node] : shape.nodes)
    if (node.is_leaf()) boxes.push_back(node.box);
  if (boxes.empty()) throw std::invalid_argument("sample_surface_points: shape has no leaves");
  return sample_box_surfaces(boxes, n, seed);
}

}  // namespace lsd
