// Hierarchy -> latent sequence: bottom-up graph encoding of the part tree,
// per-depth average pooling, an encoding LSTM over depths and a chain of
// per-depth Gaussian posterior heads sampled by reparameterization.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lsd/model.hpp"

namespace lsd {

using ad::Tensor;

/// One latent vector per hierarchy depth, index = depth.
struct LatentSequence {
  std::vector<std::vector<double>> z;

  std::size_t size() const { return z.size(); }
  bool empty() const { return z.empty(); }
  const std::vector<double>& operator[](std::size_t d) const { return z[d]; }
  std::vector<double>& operator[](std::size_t d) { return z[d]; }
  friend bool operator==(const LatentSequence&, const LatentSequence&) = default;
};

template <class T>
std::vector<Tensor<T>> to_tensors(const LatentSequence& z) {
  std::vector<Tensor<T>> out;
  for (const auto& v : z.z) out.push_back(Tensor<T>::vector(std::vector<T>(v.begin(), v.end())));
  return out;
}

template <class T>
LatentSequence to_latents(const std::vector<Tensor<T>>& z) {
  LatentSequence out;
  for (const auto& t : z) out.z.emplace_back(t.data().begin(), t.data().end());
  return out;
}

template <class T>
struct FeatureHierarchy {
  std::map<int, Tensor<T>> features;  // node id -> (feature_dim)
};

template <class T>
struct DepthSummary {
  std::vector<Tensor<T>> x;      // pooled per-depth features
  std::vector<Tensor<T>> x_hat;  // encoding LSTM outputs
};

template <class T>
struct PosteriorParams {
  std::vector<Tensor<T>> mu;
  std::vector<Tensor<T>> logvar;
  std::vector<Tensor<T>> sigma;  // exp(logvar / 2)
};

template <class T>
struct EncodeResult {
  std::vector<Tensor<T>> z;
  PosteriorParams<T> posterior;
  FeatureHierarchy<T> features;
  DepthSummary<T> summary;
};

/// Supplies the standard-normal draw for depth d.
using NoiseSource = std::function<std::vector<double>(int depth, std::size_t dim)>;

inline NoiseSource zero_noise() {
  return [](int, std::size_t dim) { return std::vector<double>(dim, 0.0); };
}

/// Independent N(0,1) draws; the stream for each depth is fixed by (seed, depth).
inline NoiseSource gaussian_noise(std::uint64_t seed) {
  return [seed](int depth, std::size_t dim) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(depth) + 1);
    std::normal_distribution<double> n01;
    std::vector<double> out(dim);
    for (auto& v : out) v = n01(rng);
    return out;
  };
}

/// Sibling relation in child-index space.
struct ChildEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  RelationKind kind = RelationKind::Adjacency;
};

template <class T>
Tensor<T> one_hot_rows(const std::vector<int>& labels, std::size_t classes) {
  std::vector<T> data(labels.size() * classes, T(0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw std::out_of_range("label " + std::to_string(labels[i]) + " outside vocabulary of " + std::to_string(classes));
    data[i * classes + labels[i]] = T(1);
  }
  return Tensor<T>::constant(std::move(data), {labels.size(), classes});
}

template <class T>
Tensor<T> box_input(const OrientedBox& box) {
  std::vector<T> v;
  for (double c : box.center) v.push_back(static_cast<T>(c));
  for (double h : box.half_extents) v.push_back(static_cast<T>(h));
  for (double q : box.rotation) v.push_back(static_cast<T>(q));
  return Tensor<T>::constant(std::move(v), {1, kBoxParams});
}

/// Leaf feature from the box parameters and the label one-hot.
template <class T>
Tensor<T> encode_leaf(const Model<T>& model, const OrientedBox& box, int label) {
  const auto in = ad::concat<T>({box_input<T>(box), one_hot_rows<T>({label}, model.hp().num_labels)});
  return ad::reshape(model.leaf_encoder(in), {model.hp().feature_dim});
}

namespace detail {

/// Runs the message rounds over `x0` (n x F); returns the concatenation of every round's node states.
template <class T>
Tensor<T> message_passing(const std::vector<MessageRound<T>>& rounds, const Tensor<T>& x0,
                          const std::vector<std::size_t>& recv, const std::vector<std::size_t>& send,
                          const std::vector<std::size_t>& kinds, const Tensor<T>* weights) {
  const std::size_t n = x0.rows(), F = x0.cols();
  std::vector<Tensor<T>> states{x0};
  Tensor<T> x = x0;
  for (const auto& round : rounds) {
    Tensor<T> agg;
    if (recv.empty()) {
      agg = Tensor<T>::zeros({n, F});
    } else {
      const auto p = round.from_self(x);
      const auto q = ad::matmul(x, round.from_other);
      auto m = ad::relu(ad::add(ad::add(ad::gather_rows(p, recv), ad::gather_rows(q, send)),
                                ad::gather_rows(round.kind_bias, kinds)));
      if (weights) m = ad::scale_rows(m, *weights);
      agg = ad::segment_max(m, recv, n);
    }
    x = ad::relu(round.update(ad::concat<T>({x, agg})));
    states.push_back(x);
  }
  return ad::concat(states);
}

}  // namespace detail

/// Parent feature from its children's features, labels and sibling edges:
/// edge-typed message passing, then max pooling over children.
template <class T>
Tensor<T> graph_encode(const Model<T>& model, const std::vector<Tensor<T>>& child_features,
                       const std::vector<int>& child_labels, const std::vector<ChildEdge>& edges) {
  if (child_features.empty()) throw std::invalid_argument("graph_encode: need at least one child");
  if (child_labels.size() != child_features.size()) throw std::invalid_argument("graph_encode: label count mismatch");
  const std::size_t n = child_features.size(), F = model.hp().feature_dim;
  std::vector<Tensor<T>> rows;
  for (const auto& f : child_features) rows.push_back(ad::reshape(f, {1, F}));
  const auto feats = ad::vstack(rows);
  const auto x0 = ad::relu(model.child_input(ad::concat<T>({feats, one_hot_rows<T>(child_labels, model.hp().num_labels)})));

  std::vector<std::size_t> recv, send, kinds;
  for (const auto& e : edges) {
    if (e.a >= n || e.b >= n) throw std::out_of_range("graph_encode: edge references unknown child");
    recv.push_back(e.a), send.push_back(e.b), kinds.push_back(static_cast<std::size_t>(e.kind));
    recv.push_back(e.b), send.push_back(e.a), kinds.push_back(static_cast<std::size_t>(e.kind));
  }
  const auto all = detail::message_passing<T>(model.enc_rounds, x0, recv, send, kinds, nullptr);
  return ad::reshape(model.enc_pool(ad::reshape(ad::max_rows(all), {1, all.cols()})), {F});
}

/// Arithmetic mean of the features of every node at depth d.
template <class T>
Tensor<T> pool_depth(const FeatureHierarchy<T>& features, const PartHierarchy& shape, int d) {
  std::vector<Tensor<T>> rows;
  for (const auto& [id, node] : shape.nodes)
    if (node.depth == d) {
      const auto& f = features.features.at(id);
      rows.push_back(ad::reshape(f, {1, f.size()}));
    }
  if (rows.empty()) throw std::invalid_argument("pool_depth: no nodes at depth " + std::to_string(d));
  return ad::mean_rows(ad::vstack(rows));
}

/// Encoding LSTM unrolled over depths from a zero state (identity under no_lstm).
template <class T>
std::vector<Tensor<T>> encode_sequence(const Model<T>& model, const std::vector<Tensor<T>>& x) {
  if (x.empty()) throw std::invalid_argument("encode_sequence: empty sequence");
  if (model.hp().no_lstm) return x;
  auto state = nn::LstmState<T>::zeros(model.hp().lstm_dim);
  std::vector<Tensor<T>> out;
  for (const auto& xd : x) {
    state = model.enc_lstm.step(state, xd);
    out.push_back(state.hidden);
  }
  return out;
}

/// (mu_d, logvar_d) from concat(x_hat_d, z_{d-1}); sigma = exp(logvar / 2).
template <class T>
std::pair<Tensor<T>, Tensor<T>> posterior(const Model<T>& model, int d, const Tensor<T>& x_hat_d, const Tensor<T>& z_prev) {
  if (d < 0 || d > model.hp().d_max)
    throw std::out_of_range("posterior: depth " + std::to_string(d) + " beyond D_max " + std::to_string(model.hp().d_max));
  const auto in = ad::concat<T>({x_hat_d, z_prev});
  return {model.mu_heads[d](in), model.logvar_heads[d](in)};
}

template <class T>
Tensor<T> sigma_from_logvar(const Tensor<T>& logvar) {
  return ad::exp(ad::scale(logvar, T(0.5)));
}

/// Reparameterized draw z = mu + sigma * noise.
template <class T>
Tensor<T> sample_posterior(const Tensor<T>& mu, const Tensor<T>& sigma, const std::vector<double>& noise) {
  if (noise.size() != mu.size() || sigma.size() != mu.size())
    throw std::invalid_argument("sample_posterior: dimension mismatch");
  auto eps = Tensor<T>::constant(std::vector<T>(noise.begin(), noise.end()), mu.shape());
  return ad::add(mu, ad::mul(sigma, eps));
}

/// Bottom-up features for every node of the tree.
template <class T>
FeatureHierarchy<T> encode_features(const Model<T>& model, const PartHierarchy& shape) {
  FeatureHierarchy<T> out;
  const auto order = bfs_order(shape);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const PartNode& node = shape.node(*it);
    if (node.is_leaf()) {
      out.features.emplace(node.id, encode_leaf(model, node.box, node.label));
      continue;
    }
    std::vector<Tensor<T>> feats;
    std::vector<int> labels;
    std::map<int, std::size_t> index;
    for (int c : node.children) {
      index[c] = feats.size();
      feats.push_back(out.features.at(c));
      labels.push_back(shape.node(c).label);
    }
    std::vector<ChildEdge> edges;
    for (const auto& e : child_edges(shape, node.id)) edges.push_back({index[e.a], index[e.b], e.kind});
    out.features.emplace(node.id, graph_encode(model, feats, labels, edges));
  }
  return out;
}

template <class T>
EncodeResult<T> encode_shape(const Model<T>& model, const PartHierarchy& shape, const NoiseSource& noise) {
  EncodeResult<T> r;
  r.features = encode_features(model, shape);
  const int depth = max_depth(shape);
  for (int d = 0; d <= depth; ++d) r.summary.x.push_back(pool_depth(r.features, shape, d));
  r.summary.x_hat = encode_sequence(model, r.summary.x);
  const std::size_t Z = model.hp().latent_dim;
  Tensor<T> z_prev = Tensor<T>::zeros({Z});
  for (int d = 0; d <= depth; ++d) {
    auto [mu, logvar] = posterior(model, d, r.summary.x_hat[d], z_prev);
    auto sigma = sigma_from_logvar(logvar);
    auto z = sample_posterior(mu, sigma, noise(d, Z));
    r.posterior.mu.push_back(mu);
    r.posterior.logvar.push_back(logvar);
    r.posterior.sigma.push_back(sigma);
    r.z.push_back(z);
    z_prev = z;
  }
  return r;
}

}  // namespace lsd
