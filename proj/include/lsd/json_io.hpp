// Canonical JSON interchange for part hierarchies.
//
//   {
//     "category": "chairish",
//     "root_id": 0,
//     "nodes": [ {"id": 0, "label": 0,
//                 "box": {"center": [x,y,z], "half": [hx,hy,hz], "quat": [w,x,y,z]},
//                 "children": [1, 2]} , ... ],
//     "edges": [ {"a": 1, "b": 2, "kind": "trans_sym", "params": [tx,ty,tz]} , ... ]
//   }
//
// Nodes are written in ascending id order. Doubles are written with the
// shortest representation that round-trips exactly. Depths are not stored;
// they are recomputed from the tree on parse.
#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "lsd/hierarchy.hpp"

namespace lsd {

using json = nlohmann::json;

/// Schema or syntax problem in an input document; `where()` names the field path or line.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

namespace detail {

inline const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path.empty() ? key : path + "." + key, "missing required field \"" + std::string(key) + "\"");
  return *it;
}

template <std::size_t N>
std::array<double, N> read_array(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != N)
    throw SchemaError(path, "expected an array of " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!j[i].is_number()) throw SchemaError(path + "[" + std::to_string(i) + "]", "expected a number");
    out[i] = j[i].get<double>();
  }
  return out;
}

inline int read_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw SchemaError(path, "expected an integer");
  return j.get<int>();
}

inline int line_of_offset(const std::string& text, std::size_t offset) {
  int line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace detail

inline json box_to_json(const OrientedBox& b) {
  return {{"center", b.center}, {"half", b.half_extents}, {"quat", b.rotation}};
}

inline json to_json_value(const PartHierarchy& shape) {
  json nodes = json::array();
  for (const auto& [id, n] : shape.nodes)
    nodes.push_back({{"id", n.id}, {"label", n.label}, {"box", box_to_json(n.box)}, {"children", n.children}});
  json edges = json::array();
  for (const auto& e : shape.edges) {
    json je = {{"a", e.a}, {"b", e.b}, {"kind", std::string(to_string(e.kind))}};
    je["params"] = e.params ? json(e.params->values) : json(nullptr);
    edges.push_back(std::move(je));
  }
  return {{"category", shape.category}, {"root_id", shape.root_id}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

inline std::string to_json(const PartHierarchy& shape, int indent = -1) { return to_json_value(shape).dump(indent); }

inline PartHierarchy from_json_value(const json& doc) {
  using detail::require;
  PartHierarchy shape;
  const json& cat = require(doc, "category", "");
  if (!cat.is_string()) throw SchemaError("category", "expected a string");
  shape.category = cat.get<std::string>();
  shape.root_id = detail::read_int(require(doc, "root_id", ""), "root_id");

  const json& nodes = require(doc, "nodes", "");
  if (!nodes.is_array()) throw SchemaError("nodes", "expected an array");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string path = "nodes[" + std::to_string(i) + "]";
    const json& jn = nodes[i];
    PartNode n;
    n.id = detail::read_int(require(jn, "id", path), path + ".id");
    n.label = detail::read_int(require(jn, "label", path), path + ".label");
    const json& jb = require(jn, "box", path);
    n.box.center = detail::read_array<3>(require(jb, "center", path + ".box"), path + ".box.center");
    n.box.half_extents = detail::read_array<3>(require(jb, "half", path + ".box"), path + ".box.half");
    n.box.rotation = detail::read_array<4>(require(jb, "quat", path + ".box"), path + ".box.quat");
    const json& jc = require(jn, "children", path);
    if (!jc.is_array()) throw SchemaError(path + ".children", "expected an array");
    for (std::size_t k = 0; k < jc.size(); ++k)
      n.children.push_back(detail::read_int(jc[k], path + ".children[" + std::to_string(k) + "]"));
    if (!shape.nodes.emplace(n.id, std::move(n)).second) throw SchemaError(path + ".id", "duplicate node id");
  }

  if (auto it = doc.find("edges"); it != doc.end()) {
    if (!it->is_array()) throw SchemaError("edges", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string path = "edges[" + std::to_string(i) + "]";
      const json& je = (*it)[i];
      RelationEdge e;
      e.a = detail::read_int(require(je, "a", path), path + ".a");
      e.b = detail::read_int(require(je, "b", path), path + ".b");
      const json& jk = require(je, "kind", path);
      auto kind = jk.is_string() ? relation_kind_from_string(jk.get<std::string>()) : std::nullopt;
      if (!kind) throw SchemaError(path + ".kind", "expected one of adjacency, rot_sym, trans_sym, ref_sym");
      e.kind = *kind;
      if (auto p = je.find("params"); p != je.end() && !p->is_null()) {
        if (!p->is_array()) throw SchemaError(path + ".params", "expected an array or null");
        SymParams sp;
        for (std::size_t k = 0; k < p->size(); ++k) {
          if (!(*p)[k].is_number()) throw SchemaError(path + ".params[" + std::to_string(k) + "]", "expected a number");
          sp.values.push_back((*p)[k].get<double>());
        }
        e.params = std::move(sp);
      }
      shape.edges.push_back(std::move(e));
    }
  }
  assign_depths(shape);
  return shape;
}

/// Parses a canonical document. Throws SchemaError naming the line (syntax) or field path (schema).
inline PartHierarchy parse_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("line " + std::to_string(detail::line_of_offset(text, e.byte)), e.what());
  }
  return from_json_value(doc);
}

}  // namespace lsd
