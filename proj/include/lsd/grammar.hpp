// Procedural part-hierarchy grammars and corpus generation.
//
// A grammar maps a parent label to weighted alternatives, each a list of child
// specs. A child spec places one box (or a symmetric group of boxes) inside the
// parent frame from per-label template ranges given as fractions of the parent
// half extents. Labels without rules, and alternatives with no children, are
// leaves.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lsd/hierarchy.hpp"
#include "lsd/json_io.hpp"

namespace lsd {

struct Range {
  double lo = 0;
  double hi = 0;
  double sample(std::mt19937_64& rng) const {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
};

using Range3 = std::array<Range, 3>;

struct PlacementTemplate {
  Range3 center;  // fraction of parent half extents, parent frame
  Range3 size;    // child half extents as fraction of parent half extents
};

enum class GroupKind { None, Ref, Trans, Grid, Rot };

struct GroupSpec {
  GroupKind kind = GroupKind::None;
  int axis = 0;                 // Ref, Trans
  std::array<int, 2> axes{0, 2};  // Grid
  int count_min = 1, count_max = 1;  // Trans, Rot
  Range spacing;                // Trans, fraction of parent half extent along axis
};

struct AttachSpec {
  int to = -1;  // index of an earlier child spec in the same alternative
  int axis = 1;
  int side = 1;
};

struct ChildSpec {
  int label = 0;
  GroupSpec group;
  std::optional<AttachSpec> attach;
};

struct Alternative {
  double weight = 1;
  std::vector<ChildSpec> children;
};

struct GrammarConfig {
  std::string category;
  std::vector<std::string> labels;
  int d_max = kDefaultMaxDepth;
  std::size_t k_max = 10;
  int root_label = 0;
  Range3 root_half;
  std::map<int, PlacementTemplate> templates;
  std::map<int, std::vector<Alternative>> rules;

  int label_index(const std::string& name) const {
    auto it = std::find(labels.begin(), labels.end(), name);
    if (it == labels.end()) throw std::invalid_argument("grammar: unknown label '" + name + "'");
    return static_cast<int>(it - labels.begin());
  }
};

/// Largest number of boxes a child spec can emit.
inline int max_instances(const GroupSpec& g) {
  switch (g.kind) {
    case GroupKind::None: return 1;
    case GroupKind::Ref: return 2;
    case GroupKind::Grid: return 4;
    case GroupKind::Trans:
    case GroupKind::Rot: return g.count_max;
  }
  return 1;
}

/// Throws std::invalid_argument describing the first problem found.
inline void validate_grammar(const GrammarConfig& g) {
  auto fail = [&](const std::string& m) { throw std::invalid_argument("grammar '" + g.category + "': " + m); };
  if (g.labels.empty()) fail("empty label vocabulary");
  if (g.d_max < 0) fail("d_max must be >= 0");
  if (g.k_max < 1) fail("k_max must be >= 1");
  const int n = static_cast<int>(g.labels.size());
  auto check_label = [&](int l) {
    if (l < 0 || l >= n) fail("label index " + std::to_string(l) + " out of range");
  };
  check_label(g.root_label);
  for (const auto& r : g.root_half)
    if (!(r.lo > 0 && r.lo <= r.hi)) fail("root half extents need 0 < lo <= hi");
  for (const auto& [label, t] : g.templates) {
    check_label(label);
    for (int i = 0; i < 3; ++i) {
      if (t.center[i].lo > t.center[i].hi) fail("template for '" + g.labels[label] + "': center lo > hi");
      if (!(t.size[i].lo > 0 && t.size[i].lo <= t.size[i].hi))
        fail("template for '" + g.labels[label] + "': size needs 0 < lo <= hi");
    }
  }
  for (const auto& [label, alts] : g.rules) {
    check_label(label);
    if (alts.empty()) fail("rule for '" + g.labels[label] + "' has no alternatives");
    for (const auto& alt : alts) {
      if (!(alt.weight > 0)) fail("rule for '" + g.labels[label] + "': weights must be positive");
      std::size_t total = 0;
      for (std::size_t i = 0; i < alt.children.size(); ++i) {
        const auto& c = alt.children[i];
        check_label(c.label);
        if (!g.templates.count(c.label)) fail("label '" + g.labels[c.label] + "' has no geometry template");
        const auto& gr = c.group;
        if ((gr.kind == GroupKind::Trans || gr.kind == GroupKind::Rot) &&
            !(gr.count_min >= 2 && gr.count_min <= gr.count_max))
          fail("group counts need 2 <= min <= max");
        if (gr.kind == GroupKind::Trans && !(gr.spacing.lo > 0 && gr.spacing.lo <= gr.spacing.hi))
          fail("trans group spacing needs 0 < lo <= hi");
        for (int a : {gr.axis, gr.axes[0], gr.axes[1]})
          if (a < 0 || a > 2) fail("axis out of range");
        if (gr.kind == GroupKind::Grid && gr.axes[0] == gr.axes[1]) fail("grid axes must differ");
        if (c.attach) {
          if (c.attach->to < 0 || c.attach->to >= static_cast<int>(i)) fail("attach must name an earlier child");
          if (c.attach->axis < 0 || c.attach->axis > 2) fail("attach axis out of range");
          if (c.attach->side != 1 && c.attach->side != -1) fail("attach side must be 1 or -1");
          if ((gr.kind == GroupKind::Ref || gr.kind == GroupKind::Trans) && gr.axis == c.attach->axis)
            fail("attach axis must differ from the group axis");
          if (gr.kind == GroupKind::Grid && (gr.axes[0] == c.attach->axis || gr.axes[1] == c.attach->axis))
            fail("attach axis must differ from the grid axes");
          if (gr.kind == GroupKind::Rot && c.attach->axis != 1) fail("rot groups attach along y only");
        }
        total += static_cast<std::size_t>(max_instances(gr));
      }
      if (total > g.k_max) fail("rule for '" + g.labels[label] + "' can emit more than k_max children");
    }
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline Range range_from_json(const nlohmann::json& j, const std::string& path) {
  if (j.is_number()) return {j.get<double>(), j.get<double>()};
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) return {j[0].get<double>(), j[1].get<double>()};
  throw SchemaError(path, "expected a number or [lo, hi]");
}

inline Range3 range3_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw SchemaError(path, "expected 3 ranges");
  return {range_from_json(j[0], path + "[0]"), range_from_json(j[1], path + "[1]"), range_from_json(j[2], path + "[2]")};
}

inline nlohmann::json range_to_json(const Range& r) {
  return r.lo == r.hi ? nlohmann::json(r.lo) : nlohmann::json::array({r.lo, r.hi});
}

inline nlohmann::json range3_to_json(const Range3& r) {
  return nlohmann::json::array({range_to_json(r[0]), range_to_json(r[1]), range_to_json(r[2])});
}

inline const char* group_name(GroupKind k) {
  switch (k) {
    case GroupKind::None: return "none";
    case GroupKind::Ref: return "ref";
    case GroupKind::Trans: return "trans";
    case GroupKind::Grid: return "grid";
    case GroupKind::Rot: return "rot";
  }
  return "none";
}

inline std::pair<int, int> count_from_json(const nlohmann::json& j, const std::string& path) {
  const auto r = range_from_json(j, path);
  return {static_cast<int>(r.lo), static_cast<int>(r.hi)};
}

}  // namespace detail

inline GrammarConfig grammar_from_json(const nlohmann::json& doc) {
  using detail::require;
  GrammarConfig g;
  g.category = require(doc, "category", "").get<std::string>();
  const auto& labels = require(doc, "labels", "");
  if (!labels.is_array()) throw SchemaError("labels", "expected an array of names");
  for (const auto& l : labels) g.labels.push_back(l.get<std::string>());
  g.d_max = doc.value("d_max", g.d_max);
  g.k_max = doc.value("k_max", g.k_max);
  const auto& root = require(doc, "root", "");
  g.root_label = g.label_index(require(root, "label", "root").get<std::string>());
  g.root_half = detail::range3_from_json(require(root, "half", "root"), "root.half");

  const auto& templates = require(doc, "templates", "");
  for (auto it = templates.begin(); it != templates.end(); ++it) {
    const std::string path = "templates." + it.key();
    PlacementTemplate t;
    t.center = detail::range3_from_json(require(*it, "center", path), path + ".center");
    t.size = detail::range3_from_json(require(*it, "size", path), path + ".size");
    g.templates[g.label_index(it.key())] = t;
  }

  const auto& rules = require(doc, "rules", "");
  for (auto it = rules.begin(); it != rules.end(); ++it) {
    const std::string path = "rules." + it.key();
    if (!it->is_array()) throw SchemaError(path, "expected an array of alternatives");
    std::vector<Alternative> alts;
    for (std::size_t a = 0; a < it->size(); ++a) {
      const std::string apath = path + "[" + std::to_string(a) + "]";
      const auto& ja = (*it)[a];
      Alternative alt;
      alt.weight = ja.value("weight", 1.0);
      const auto& jc = require(ja, "children", apath);
      for (std::size_t c = 0; c < jc.size(); ++c) {
        const std::string cpath = apath + ".children[" + std::to_string(c) + "]";
        ChildSpec spec;
        spec.label = g.label_index(require(jc[c], "label", cpath).get<std::string>());
        if (auto jg = jc[c].find("group"); jg != jc[c].end()) {
          const auto kind = require(*jg, "kind", cpath + ".group").get<std::string>();
          auto& gr = spec.group;
          if (kind == "ref") {
            gr.kind = GroupKind::Ref;
            gr.axis = jg->value("axis", 0);
          } else if (kind == "trans") {
            gr.kind = GroupKind::Trans;
            gr.axis = jg->value("axis", 0);
            std::tie(gr.count_min, gr.count_max) = detail::count_from_json(require(*jg, "count", cpath + ".group"), cpath + ".group.count");
            gr.spacing = detail::range_from_json(require(*jg, "spacing", cpath + ".group"), cpath + ".group.spacing");
          } else if (kind == "grid") {
            gr.kind = GroupKind::Grid;
            if (auto ax = jg->find("axes"); ax != jg->end()) gr.axes = {(*ax)[0].get<int>(), (*ax)[1].get<int>()};
          } else if (kind == "rot") {
            gr.kind = GroupKind::Rot;
            std::tie(gr.count_min, gr.count_max) = detail::count_from_json(require(*jg, "count", cpath + ".group"), cpath + ".group.count");
          } else {
            throw SchemaError(cpath + ".group.kind", "expected one of ref, trans, grid, rot");
          }
        }
        if (auto jt = jc[c].find("attach"); jt != jc[c].end())
          spec.attach = AttachSpec{require(*jt, "to", cpath + ".attach").get<int>(), jt->value("axis", 1), jt->value("side", 1)};
        alt.children.push_back(spec);
      }
      alts.push_back(std::move(alt));
    }
    g.rules[g.label_index(it.key())] = std::move(alts);
  }
  validate_grammar(g);
  return g;
}

inline nlohmann::json grammar_to_json(const GrammarConfig& g) {
  nlohmann::json templates = nlohmann::json::object();
  for (const auto& [l, t] : g.templates)
    templates[g.labels[l]] = {{"center", detail::range3_to_json(t.center)}, {"size", detail::range3_to_json(t.size)}};
  nlohmann::json rules = nlohmann::json::object();
  for (const auto& [l, alts] : g.rules) {
    nlohmann::json ja = nlohmann::json::array();
    for (const auto& alt : alts) {
      nlohmann::json children = nlohmann::json::array();
      for (const auto& c : alt.children) {
        nlohmann::json jc = {{"label", g.labels[c.label]}};
        const auto& gr = c.group;
        if (gr.kind != GroupKind::None) {
          nlohmann::json jg = {{"kind", detail::group_name(gr.kind)}};
          if (gr.kind == GroupKind::Ref || gr.kind == GroupKind::Trans) jg["axis"] = gr.axis;
          if (gr.kind == GroupKind::Grid) jg["axes"] = gr.axes;
          if (gr.kind == GroupKind::Trans || gr.kind == GroupKind::Rot)
            jg["count"] = detail::range_to_json({double(gr.count_min), double(gr.count_max)});
          if (gr.kind == GroupKind::Trans) jg["spacing"] = detail::range_to_json(gr.spacing);
          jc["group"] = jg;
        }
        if (c.attach) jc["attach"] = {{"to", c.attach->to}, {"axis", c.attach->axis}, {"side", c.attach->side}};
        children.push_back(jc);
      }
      ja.push_back({{"weight", alt.weight}, {"children", children}});
    }
    rules[g.labels[l]] = ja;
  }
  return {{"category", g.category},
          {"labels", g.labels},
          {"d_max", g.d_max},
          {"k_max", g.k_max},
          {"root", {{"label", g.labels[g.root_label]}, {"half", detail::range3_to_json(g.root_half)}}},
          {"templates", templates},
          {"rules", rules}};
}

inline GrammarConfig load_grammar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open grammar " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string(), e.what());
  }
  return grammar_from_json(doc);
}

// ---------------------------------------------------------------------------
// Generation

namespace detail {

struct Frame {
  Vec3 center;
  Vec3 half;
  Quat rotation;
};

inline Vec3 frame_axis(const Quat& q, int axis) {
  Vec3 e{};
  e[axis] = 1.0;
  return rotate(q, e);
}

/// Local (parent-frame, absolute units) placement of one child instance.
struct LocalBox {
  Vec3 center;
  Vec3 half;
};

inline OrientedBox to_world(const Frame& parent, const LocalBox& b, const Quat& extra = {1, 0, 0, 0}) {
  return OrientedBox{parent.center + rotate(parent.rotation, b.center), b.half,
                     normalized(quat_mul(extra, parent.rotation))};
}

struct PendingChild {
  int label;
  OrientedBox box;
};

struct PendingEdge {
  int a, b;  // indices into the child list
  RelationKind kind;
  std::optional<SymParams> params;
};

/// Instantiates one alternative under `parent`: boxes in emission order plus
/// the sibling edges between them.
inline std::pair<std::vector<PendingChild>, std::vector<PendingEdge>> instantiate(const GrammarConfig& g,
                                                                                  const Alternative& alt,
                                                                                  const Frame& parent,
                                                                                  std::mt19937_64& rng) {
  std::vector<PendingChild> out;
  std::vector<PendingEdge> edges;
  std::vector<LocalBox> first_local;  // per spec
  std::vector<int> first_index;       // per spec
  const Vec3 up = frame_axis(parent.rotation, 1);

  for (const auto& spec : alt.children) {
    const auto& t = g.templates.at(spec.label);
    LocalBox base;
    for (int i = 0; i < 3; ++i) {
      base.center[i] = t.center[i].sample(rng) * parent.half[i];
      base.half[i] = t.size[i].sample(rng) * parent.half[i];
    }
    if (spec.attach) {
      const auto& target = first_local[spec.attach->to];
      const int ax = spec.attach->axis;
      base.center[ax] = target.center[ax] + spec.attach->side * (target.half[ax] + base.half[ax]);
    }
    const int start = static_cast<int>(out.size());
    const auto& gr = spec.group;
    switch (gr.kind) {
      case GroupKind::None:
        out.push_back({spec.label, to_world(parent, base)});
        break;
      case GroupKind::Ref: {
        LocalBox a = base;
        a.center[gr.axis] = std::abs(a.center[gr.axis]);
        LocalBox b = a;
        b.center[gr.axis] = -a.center[gr.axis];
        out.push_back({spec.label, to_world(parent, a)});
        out.push_back({spec.label, to_world(parent, b)});
        const Vec3 n = frame_axis(parent.rotation, gr.axis);
        edges.push_back({start, start + 1, RelationKind::RefSym,
                         SymParams{{parent.center[0], parent.center[1], parent.center[2], n[0], n[1], n[2]}}});
        break;
      }
      case GroupKind::Trans: {
        const int count = std::uniform_int_distribution<int>(gr.count_min, gr.count_max)(rng);
        const double step = gr.spacing.sample(rng) * parent.half[gr.axis];
        for (int k = 0; k < count; ++k) {
          LocalBox b = base;
          b.center[gr.axis] = base.center[gr.axis] + (k - 0.5 * (count - 1)) * step;
          out.push_back({spec.label, to_world(parent, b)});
        }
        for (int k = 0; k + 1 < count; ++k) {
          const Vec3 d = out[start + k + 1].box.center - out[start + k].box.center;
          edges.push_back({start + k, start + k + 1, RelationKind::TransSym, SymParams{{d[0], d[1], d[2]}}});
        }
        break;
      }
      case GroupKind::Grid: {
        const int a0 = gr.axes[0], a1 = gr.axes[1];
        for (double s1 : {1.0, -1.0})
          for (double s0 : {1.0, -1.0}) {
            LocalBox b = base;
            b.center[a0] = s0 * std::abs(base.center[a0]);
            b.center[a1] = s1 * std::abs(base.center[a1]);
            out.push_back({spec.label, to_world(parent, b)});
          }
        for (auto [i, j] : {std::pair{0, 1}, {2, 3}, {0, 2}, {1, 3}}) {
          const Vec3 d = out[start + j].box.center - out[start + i].box.center;
          edges.push_back({start + i, start + j, RelationKind::TransSym, SymParams{{d[0], d[1], d[2]}}});
        }
        break;
      }
      case GroupKind::Rot: {
        const int count = std::uniform_int_distribution<int>(gr.count_min, gr.count_max)(rng);
        const double angle = 2.0 * std::numbers::pi / count;
        const OrientedBox first = to_world(parent, base);
        for (int k = 0; k < count; ++k) {
          const Quat q = axis_angle_quat(up, k * angle);
          OrientedBox b = first;
          b.center = parent.center + rotate(q, first.center - parent.center);
          b.rotation = normalized(quat_mul(q, first.rotation));
          out.push_back({spec.label, b});
        }
        for (int k = 0; k + 1 < count; ++k)
          edges.push_back({start + k, start + k + 1, RelationKind::RotSym,
                           SymParams{{parent.center[0], parent.center[1], parent.center[2], up[0], up[1], up[2], angle}}});
        break;
      }
    }
    if (spec.attach) {
      const int target = first_index[spec.attach->to];
      const int n = gr.kind == GroupKind::Rot ? static_cast<int>(out.size()) - start : 1;
      for (int k = 0; k < n; ++k) edges.push_back({target, start + k, RelationKind::Adjacency, std::nullopt});
    }
    first_local.push_back(base);
    first_index.push_back(start);
  }
  return {std::move(out), std::move(edges)};
}

inline const Alternative* pick_alternative(const GrammarConfig& g, int label, std::mt19937_64& rng) {
  auto it = g.rules.find(label);
  if (it == g.rules.end()) return nullptr;
  std::vector<double> w;
  for (const auto& a : it->second) w.push_back(a.weight);
  return &it->second[std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng)];
}

}  // namespace detail

/// One shape from the grammar. Node ids follow breadth-first order from the
/// root (id 0); edges are sorted by (a, b, kind).
inline PartHierarchy generate_shape(const GrammarConfig& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PartHierarchy shape;
  shape.category = g.category;
  shape.root_id = 0;
  Vec3 half;
  for (int i = 0; i < 3; ++i) half[i] = g.root_half[i].sample(rng);
  PartNode root;
  root.id = 0;
  root.label = g.root_label;
  root.box = OrientedBox::make({0, 0, 0}, half);
  shape.nodes[0] = root;

  int next_id = 1;
  std::deque<int> queue{0};
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    PartNode& node = shape.nodes.at(id);
    if (node.depth >= g.d_max) continue;
    const Alternative* alt = detail::pick_alternative(g, node.label, rng);
    if (!alt || alt->children.empty()) continue;
    const detail::Frame frame{node.box.center, node.box.half_extents, node.box.rotation};
    auto [children, edges] = detail::instantiate(g, *alt, frame, rng);
    std::vector<int> ids;
    for (auto& c : children) {
      PartNode child;
      child.id = next_id++;
      child.label = c.label;
      child.box = c.box;
      child.depth = node.depth + 1;
      ids.push_back(child.id);
      queue.push_back(child.id);
      shape.nodes[child.id] = std::move(child);
    }
    shape.nodes.at(id).children = ids;
    for (auto& e : edges) {
      int a = ids[e.a], b = ids[e.b];
      if (a > b) std::swap(a, b);
      shape.edges.push_back({a, b, e.kind, std::move(e.params)});
    }
  }
  std::sort(shape.edges.begin(), shape.edges.end(), [](const RelationEdge& x, const RelationEdge& y) {
    return std::tie(x.a, x.b, x.kind) < std::tie(y.a, y.b, y.kind);
  });
  return shape;
}

struct Dataset {
  std::string category;
  std::uint64_t seed = 0;
  std::vector<PartHierarchy> shapes;
  std::vector<std::string> tags;  // per shape: "train", "test" or empty
};

/// n shapes; shape i uses a sub-seed derived from (seed, i) so any subset can
/// be regenerated independently.
inline Dataset generate(const GrammarConfig& g, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate: n must be >= 1");
  validate_grammar(g);
  Dataset ds;
  ds.category = g.category;
  ds.seed = seed;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::vector<std::uint32_t> sub(2 * static_cast<std::size_t>(n));
  seq.generate(sub.begin(), sub.end());
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = (std::uint64_t(sub[2 * i]) << 32) | sub[2 * i + 1];
    ds.shapes.push_back(generate_shape(g, s));
    ds.tags.emplace_back();
  }
  return ds;
}

/// Seeded shuffle, then the first floor(n * fraction) shapes go to train.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0 && train_fraction < 1)) throw std::invalid_argument("split: fraction must be in (0, 1)");
  std::vector<std::size_t> order(ds.shapes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(ds.shapes.size()) * train_fraction));
  Dataset train{ds.category, ds.seed, {}, {}}, test{ds.category, ds.seed, {}, {}};
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < n_train ? train : test;
    dst.shapes.push_back(ds.shapes[order[k]]);
    dst.tags.push_back(k < n_train ? "train" : "test");
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Corpus directories: shapes/NNNNNN.json plus manifest.json.

inline void write_corpus(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "shapes");
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.shapes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.json", i);
    std::ofstream out(dir / "shapes" / name);
    out << to_json(ds.shapes[i]) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / "shapes" / name).string());
    files.push_back({{"file", std::string("shapes/") + name}, {"split", i < ds.tags.size() ? ds.tags[i] : ""}});
  }
  nlohmann::json manifest = {{"category", ds.category}, {"seed", ds.seed}, {"count", ds.shapes.size()}, {"files", files}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

/// Reads a corpus written by write_corpus. `only_split` filters by tag when non-empty.
inline Dataset read_corpus(const std::filesystem::path& dir, const std::string& only_split = "") {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("manifest.json", e.what());
  }
  Dataset ds;
  ds.category = manifest.value("category", "");
  ds.seed = manifest.value("seed", std::uint64_t{0});
  for (const auto& f : detail::require(manifest, "files", "")) {
    const std::string tag = f.value("split", "");
    if (!only_split.empty() && tag != only_split) continue;
    const auto path = dir / f.at("file").get<std::string>();
    std::ifstream sin(path);
    if (!sin) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << sin.rdbuf();
    try {
      ds.shapes.push_back(parse_json(ss.str()));
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ": " + e.where(), std::string(e.what()).substr(e.where().size() + 2));
    }
    ds.tags.push_back(tag);
  }
  return ds;
}

}  // namespace lsd
