#pragma once

#include <cmath>
#include <random>

#include "lsd/hierarchy.hpp"
#include "lsd/model.hpp"

namespace lsd::testing {

inline Hyperparams tiny_hp() {
  Hyperparams hp;
  hp.feature_dim = 8;
  hp.latent_dim = 8;
  hp.lstm_dim = 12;
  hp.d_max = 4;
  hp.k_max = 4;
  hp.num_labels = 6;
  return hp;
}

inline PartNode make_node(int id, int label, OrientedBox box, std::vector<int> children = {}) {
  PartNode n;
  n.id = id;
  n.label = label;
  n.box = box;
  n.children = std::move(children);
  return n;
}

/// Root with two groups: a mirrored pair (ref_sym) and a translated pair
/// (trans_sym); the groups touch (adjacency). 7 nodes, depth 2.
inline PartHierarchy seven_node_shape() {
  PartHierarchy s;
  s.category = "test";
  s.root_id = 0;
  const auto box = [](Vec3 c, Vec3 h) { return OrientedBox::make(c, h); };
  s.nodes[0] = make_node(0, 0, box({0, 0, 0}, {1.0, 0.5, 0.5}), {1, 2});
  s.nodes[1] = make_node(1, 1, box({-0.5, 0, 0}, {0.5, 0.5, 0.5}), {3, 4});
  s.nodes[2] = make_node(2, 2, box({0.5, 0, 0}, {0.5, 0.5, 0.5}), {5, 6});
  s.nodes[3] = make_node(3, 3, box({-0.75, 0, 0}, {0.25, 0.5, 0.5}));
  s.nodes[4] = make_node(4, 3, box({-0.25, 0, 0}, {0.25, 0.5, 0.5}));
  s.nodes[5] = make_node(5, 4, box({0.5, 0, -0.25}, {0.5, 0.5, 0.25}));
  s.nodes[6] = make_node(6, 4, box({0.5, 0, 0.25}, {0.5, 0.5, 0.25}));
  s.edges.push_back({1, 2, RelationKind::Adjacency, std::nullopt});
  s.edges.push_back({3, 4, RelationKind::RefSym, SymParams{{-0.5, 0, 0, 1, 0, 0}}});
  s.edges.push_back({5, 6, RelationKind::TransSym, SymParams{{0, 0, 0.5}}});
  assign_depths(s);
  return s;
}

inline PartHierarchy root_only_shape() {
  PartHierarchy s;
  s.root_id = 0;
  s.nodes[0] = make_node(0, 1, OrientedBox::make({0, 0, 0}, {0.5, 0.4, 0.3}));
  assign_depths(s);
  return s;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <class T>
void zero_params(nn::ParamStore<T>& store, const std::string& prefix) {
  for (auto& [name, t] : store.entries())
    if (name.rfind(prefix, 0) == 0) std::fill(t.mutable_data().begin(), t.mutable_data().end(), T(0));
}

/// Replaces every bias with U(-scale, scale), off the ReLU kink.
template <class T>
void randomize_biases(nn::ParamStore<T>& store, std::uint64_t seed, double scale = 0.2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& [name, t] : store.entries())
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0)
      for (auto& x : t.mutable_data()) x = static_cast<T>(u(rng));
}

}  // namespace lsd::testing
