// Latent sequence -> hierarchy. A decoding LSTM turns z into zhat; the root
// feature comes from zhat_0, and every node at depth d unpools into up to
// K child slots through g_dec([f, zhat_d]) independently of its siblings.
// Because depth-d children only see zhat_{<=d}, which only sees z_{<=d},
// any sub-tree can be regenerated by redrawing z from its depth onward.
#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include "lsd/encoder.hpp"
#include "lsd/model.hpp"

namespace lsd {

inline constexpr double kMinHalfExtent = 1e-4;
inline constexpr double kDecisionThreshold = 0.5;

/// Batched outputs of one g_dec call: K candidate child slots.
template <class T>
struct ChildSlots {
  Tensor<T> features;      // K x F
  Tensor<T> exist_logits;  // K x 1
  Tensor<T> edge_logits;   // P x kinds; row p is slot pair slot_pairs(K)[p]
  Tensor<T> leaf_logits;   // K x 1
  Tensor<T> label_logits;  // K x L
  Tensor<T> box_raw;       // K x 10
};

/// Per-slot view of ChildSlots for inference.
struct DecodedSlot {
  std::vector<double> feature;
  double exist_prob = 0;
  double leaf_prob = 0;
  std::vector<double> label_logits;
  std::vector<double> box_raw;
};

/// Unordered slot pairs (i < j), row-major.
inline std::vector<std::pair<std::size_t, std::size_t>> slot_pairs(std::size_t k) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) out.emplace_back(i, j);
  return out;
}

inline std::size_t pair_index(std::size_t i, std::size_t j, std::size_t k) {
  if (i > j) std::swap(i, j);
  return i * k - i * (i + 1) / 2 + (j - i - 1);
}

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Box from raw head output: center, softplus half extents, normalized quaternion.
template <class It>
OrientedBox box_from_raw(It raw) {
  OrientedBox b;
  for (int i = 0; i < 3; ++i) b.center[i] = static_cast<double>(raw[i]);
  for (int i = 0; i < 3; ++i) b.half_extents[i] = softplus(static_cast<double>(raw[3 + i])) + kMinHalfExtent;
  b.rotation = normalized(Quat{static_cast<double>(raw[6]), static_cast<double>(raw[7]), static_cast<double>(raw[8]),
                               static_cast<double>(raw[9])});
  return b;
}

/// Raw head output that box_from_raw maps back to `box`.
inline std::vector<double> raw_from_box(const OrientedBox& box) {
  std::vector<double> raw;
  for (double c : box.center) raw.push_back(c);
  for (double h : box.half_extents) {
    const double y = h - kMinHalfExtent;
    raw.push_back(y > 30 ? y : std::log(std::expm1(y)));
  }
  for (double q : box.rotation) raw.push_back(q);
  return raw;
}

/// Decoding LSTM: step 0 reads [z_0, 0], step d reads [z_d, zhat_{d-1}]; zhat_d is
/// a linear projection of the hidden state. Identity under no_lstm.
template <class T>
std::vector<Tensor<T>> decode_sequence(const Model<T>& model, const std::vector<Tensor<T>>& z) {
  if (z.empty()) throw std::invalid_argument("decode_sequence: empty latent sequence");
  if (model.hp().no_lstm) return z;
  const std::size_t Z = model.hp().latent_dim;
  auto state = nn::LstmState<T>::zeros(model.hp().lstm_dim);
  std::vector<Tensor<T>> out;
  Tensor<T> prev = Tensor<T>::zeros({Z});
  for (const auto& zd : z) {
    state = model.dec_lstm.step(state, ad::concat<T>({zd, prev}));
    prev = model.dec_proj(state.hidden);
    out.push_back(prev);
  }
  return out;
}

template <class T>
Tensor<T> root_feature(const Model<T>& model, const Tensor<T>& zhat0) {
  return model.root_mlp(zhat0);
}

/// Unpools a parent feature into K slots. With `deterministic` the separate
/// f-only decoder is used and `zhat` is ignored.
template <class T>
ChildSlots<T> decode_children(const Model<T>& model, const Tensor<T>& f, const Tensor<T>& zhat, bool deterministic = false) {
  const auto& hp = model.hp();
  const std::size_t K = hp.k_max, F = hp.feature_dim;
  if (deterministic && !hp.hybrid()) throw std::logic_error("decode_children: model has no deterministic decoder");
  const auto& p = deterministic ? model.child_decoder_det : model.child_decoder;
  const Tensor<T> in = deterministic ? f : ad::concat<T>({f, zhat});
  const auto h = ad::relu(p.input(in));
  const auto x0 = ad::reshape(ad::relu(p.slots(h)), {K, F});

  ChildSlots<T> out;
  out.exist_logits = p.exist(x0);
  const auto pairs = slot_pairs(K);
  if (!pairs.empty()) {
    std::vector<std::size_t> pi, pj;
    for (auto [i, j] : pairs) pi.push_back(i), pj.push_back(j);
    const auto u = p.edge_in(x0);
    out.edge_logits = p.edge_out(ad::relu(ad::add(ad::gather_rows(u, pi), ad::gather_rows(u, pj))));
  } else {
    out.edge_logits = Tensor<T>::zeros({0, static_cast<std::size_t>(kRelationKinds)});
  }

  std::vector<std::size_t> recv, send, kinds, flat_edge;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      if (i == j) continue;
      for (int t = 0; t < kRelationKinds; ++t) {
        recv.push_back(i), send.push_back(j), kinds.push_back(static_cast<std::size_t>(t));
        flat_edge.push_back(pair_index(i, j, K) * kRelationKinds + t);
      }
    }
  Tensor<T> all;
  if (recv.empty()) {
    all = detail::message_passing<T>(p.rounds, x0, {}, {}, {}, nullptr);
  } else {
    const auto edge_prob = ad::reshape(ad::sigmoid(out.edge_logits), {pairs.size() * kRelationKinds, 1});
    const auto weights = ad::mul(ad::gather_rows(edge_prob, flat_edge), ad::gather_rows(ad::sigmoid(out.exist_logits), send));
    all = detail::message_passing(p.rounds, x0, recv, send, kinds, &weights);
  }
  out.features = p.output(all);
  out.leaf_logits = model.leaf_head(out.features);
  out.label_logits = model.label_head(out.features);
  out.box_raw = model.box_head(out.features);
  return out;
}

template <class T>
std::vector<DecodedSlot> to_decoded_slots(const ChildSlots<T>& s) {
  const std::size_t K = s.features.rows(), F = s.features.cols(), L = s.label_logits.cols();
  std::vector<DecodedSlot> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto& d = out[k];
    d.feature.assign(s.features.data().begin() + k * F, s.features.data().begin() + (k + 1) * F);
    d.exist_prob = sigmoid(s.exist_logits[k]);
    d.leaf_prob = sigmoid(s.leaf_logits[k]);
    d.label_logits.assign(s.label_logits.data().begin() + k * L, s.label_logits.data().begin() + (k + 1) * L);
    d.box_raw.assign(s.box_raw.data().begin() + k * kBoxParams, s.box_raw.data().begin() + (k + 1) * kBoxParams);
  }
  return out;
}

/// Everything needed to regenerate part of a decoded shape without re-decoding the rest.
struct DecodeTrace {
  LatentSequence z;
  std::vector<std::vector<double>> zhat;
  std::map<int, std::vector<double>> features;  // decoder feature per node id
};

struct DecodeResult {
  PartHierarchy shape;
  DecodeTrace trace;
};

struct DecodeOptions {
  std::string category;
  /// Overrides the model's d_cut when set (ablation decoding).
  std::optional<int> d_cut;
};

namespace detail {

template <class T>
std::size_t argmax(const std::vector<T>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <class T>
Tensor<T> tensor_from(const std::vector<double>& v) {
  return Tensor<T>::vector(std::vector<T>(v.begin(), v.end()));
}

/// Breadth-first expansion of the nodes in `queue`, which must already be in
/// `shape` with their decoder features in `trace`. New ids are taken from
/// `reuse` first, then from `next_id` upward.
template <class T>
void expand(const Model<T>& model, const std::vector<Tensor<T>>& zhat, int d_cut, PartHierarchy& shape,
            DecodeTrace& trace, std::deque<int> queue, std::deque<int> reuse, int next_id) {
  const int last_depth = static_cast<int>(zhat.size()) - 1;
  const std::size_t K = model.hp().k_max;
  Hyperparams cut = model.hp();
  cut.d_cut = d_cut;
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    const int depth = shape.node(id).depth;
    const auto f = tensor_from<T>(trace.features.at(id));
    if (depth >= last_depth || sigmoid(static_cast<double>(model.leaf_head(f).item())) > kDecisionThreshold) continue;

    const auto slots = decode_children(model, f, zhat[depth], !cut.probabilistic_at(depth));
    const auto decoded = to_decoded_slots(slots);
    std::vector<int> slot_id(K, -1);
    for (std::size_t k = 0; k < K; ++k) {
      if (decoded[k].exist_prob <= kDecisionThreshold) continue;
      int cid;
      if (!reuse.empty()) {
        cid = reuse.front();
        reuse.pop_front();
      } else {
        cid = next_id++;
      }
      slot_id[k] = cid;
      PartNode child;
      child.id = cid;
      child.label = static_cast<int>(argmax(decoded[k].label_logits));
      child.box = box_from_raw(decoded[k].box_raw.begin());
      child.depth = depth + 1;
      shape.nodes.emplace(cid, std::move(child));
      shape.node(id).children.push_back(cid);
      trace.features[cid] = decoded[k].feature;
      queue.push_back(cid);
    }
    const auto& logits = slots.edge_logits.data();
    const auto pairs = slot_pairs(K);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [i, j] = pairs[p];
      if (slot_id[i] < 0 || slot_id[j] < 0) continue;
      for (int t = 0; t < kRelationKinds; ++t)
        if (sigmoid(static_cast<double>(logits[p * kRelationKinds + t])) > kDecisionThreshold)
          shape.edges.push_back({slot_id[i], slot_id[j], static_cast<RelationKind>(t), std::nullopt});
    }
  }
}

template <class T>
std::vector<std::vector<double>> to_values(const std::vector<Tensor<T>>& ts) {
  std::vector<std::vector<double>> out;
  for (const auto& t : ts) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

}  // namespace detail

/// Decodes a latent sequence of length n into a hierarchy of depth at most n-1.
/// Node ids follow breadth-first order from the root (id 0).
template <class T>
DecodeResult decode_shape(const Model<T>& model, const LatentSequence& z, const DecodeOptions& opts = {}) {
  if (z.empty()) throw std::invalid_argument("decode_shape: empty latent sequence");
  if (static_cast<int>(z.size()) > model.hp().d_max + 1)
    throw std::invalid_argument("decode_shape: latent sequence longer than D_max + 1");
  for (const auto& v : z.z)
    if (v.size() != model.hp().latent_dim) throw std::invalid_argument("decode_shape: latent dimension mismatch");
  const int d_cut = opts.d_cut.value_or(model.hp().d_cut);
  ad::NoGradGuard no_grad;
  const auto zhat = decode_sequence(model, to_tensors<T>(z));
  DecodeResult r;
  r.trace.z = z;
  r.trace.zhat = detail::to_values(zhat);
  const auto f = root_feature(model, zhat[0]);
  const auto box = model.box_head(f).data();
  const auto label = model.label_head(f).data();
  PartNode root;
  root.id = 0;
  root.label = static_cast<int>(detail::argmax(label));
  root.box = box_from_raw(box.begin());
  r.shape.category = opts.category;
  r.shape.root_id = 0;
  r.shape.nodes.emplace(0, root);
  r.trace.features[0] = std::vector<double>(f.data().begin(), f.data().end());
  detail::expand(model, zhat, d_cut, r.shape, r.trace, {0}, {}, 1);
  return r;
}

/// Decoding with the probabilistic child decoder only for generated depths <= d_cut.
template <class T>
DecodeResult decode_shape_hybrid(const Model<T>& model, const LatentSequence& z, int d_cut, std::string category = {}) {
  return decode_shape(model, z, DecodeOptions{std::move(category), d_cut});
}

/// Regenerates everything strictly below `node_id` from z_{<d} (kept) and
/// `suffix` = z_d..z_{n-1}, where d is the node's depth. Nodes outside the
/// sub-tree, and the node itself, are untouched. Freed ids are reused in
/// ascending order before new ones are allocated.
template <class T>
DecodeResult resample_subtree(const Model<T>& model, const PartHierarchy& shape, const DecodeTrace& trace, int node_id,
                              const LatentSequence& suffix, std::optional<int> d_cut = std::nullopt) {
  if (!shape.contains(node_id)) throw std::out_of_range("resample_subtree: unknown node id " + std::to_string(node_id));
  if (!trace.features.count(node_id)) throw std::invalid_argument("resample_subtree: trace has no feature for node");
  const int d = shape.node(node_id).depth;
  const std::size_t n = trace.z.size();
  if (static_cast<std::size_t>(d) >= n) throw std::invalid_argument("resample_subtree: node deeper than latent sequence");
  if (suffix.size() != n - static_cast<std::size_t>(d))
    throw std::invalid_argument("resample_subtree: suffix must hold " + std::to_string(n - d) + " latents");

  DecodeResult r;
  r.trace.z.z.assign(trace.z.z.begin(), trace.z.z.begin() + d);
  for (const auto& v : suffix.z) {
    if (v.size() != model.hp().latent_dim) throw std::invalid_argument("resample_subtree: latent dimension mismatch");
    r.trace.z.z.push_back(v);
  }
  ad::NoGradGuard no_grad;
  const auto zhat = decode_sequence(model, to_tensors<T>(r.trace.z));
  r.trace.zhat = detail::to_values(zhat);

  r.shape = shape;
  r.trace.features = trace.features;
  const auto old = subtree_ids(shape, node_id);
  std::set<int> removed(old.begin() + 1, old.end());
  int next_id = 0;
  for (const auto& [id, node] : shape.nodes) next_id = std::max(next_id, id + 1);
  for (int id : removed) {
    r.shape.nodes.erase(id);
    r.trace.features.erase(id);
  }
  std::erase_if(r.shape.edges, [&](const RelationEdge& e) { return removed.count(e.a) || removed.count(e.b); });
  r.shape.node(node_id).children.clear();
  detail::expand(model, zhat, d_cut.value_or(model.hp().d_cut), r.shape, r.trace, {node_id},
                 std::deque<int>(removed.begin(), removed.end()), next_id);
  // Same edge order as a fresh decode.
  std::sort(r.shape.edges.begin(), r.shape.edges.end(), [](const RelationEdge& x, const RelationEdge& y) {
    return std::tie(x.a, x.b, x.kind) < std::tie(y.a, y.b, y.kind);
  });
  return r;
}

}  // namespace lsd
