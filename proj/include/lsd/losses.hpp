// Training objective: per-depth KL to a unit Gaussian, teacher-forced
// reconstruction under a Hungarian slot assignment, and structure-consistency
// terms for the predicted sibling relations.
#pragma once

#include <cmath>
#include <deque>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lsd/decoder.hpp"
#include "lsd/hungarian.hpp"

namespace lsd {

struct LossWeights {
  double kl = 0.05;
  double recon = 1.0;
  double sc = 0.2;
  double box = 1.0;
  double normals = 0.1;
  double exist = 1.0;
  double leaf = 1.0;
  double label = 1.0;
  double edge = 1.0;
  double symmetry = 1.0;
  double adjacency = 1.0;
  double match_lambda = 0.1;  // existence bonus in the assignment cost

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline nlohmann::json to_json(const LossWeights& w) {
  return {{"kl", w.kl},           {"recon", w.recon},     {"sc", w.sc},
          {"box", w.box},         {"normals", w.normals}, {"exist", w.exist},
          {"leaf", w.leaf},       {"label", w.label},     {"edge", w.edge},
          {"symmetry", w.symmetry}, {"adjacency", w.adjacency}, {"match_lambda", w.match_lambda}};
}

inline LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights w = {}) {
  w.kl = j.value("kl", w.kl);
  w.recon = j.value("recon", w.recon);
  w.sc = j.value("sc", w.sc);
  w.box = j.value("box", w.box);
  w.normals = j.value("normals", w.normals);
  w.exist = j.value("exist", w.exist);
  w.leaf = j.value("leaf", w.leaf);
  w.label = j.value("label", w.label);
  w.edge = j.value("edge", w.edge);
  w.symmetry = j.value("symmetry", w.symmetry);
  w.adjacency = j.value("adjacency", w.adjacency);
  w.match_lambda = j.value("match_lambda", w.match_lambda);
  return w;
}

/// Unweighted terms and their weighted totals.
struct LossBreakdown {
  std::vector<double> kl_per_depth;
  double kl = 0;
  double box = 0, normals = 0, exist = 0, leaf = 0, label = 0, edge = 0;
  double recon = 0;  // weighted inside
  double symmetry = 0, adjacency = 0;
  double sc = 0;  // weighted inside
  double total = 0;
  std::size_t matched = 0;
  std::size_t symmetry_edges = 0, adjacency_edges = 0;
};

// ---------------------------------------------------------------------------
// KL

/// KL(N(mu, diag sigma^2) || N(0, I)) in closed form.
inline double kl_unit_gaussian(std::span<const double> mu, std::span<const double> sigma) {
  if (mu.size() != sigma.size()) throw std::invalid_argument("kl_unit_gaussian: size mismatch");
  double kl = 0;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    if (!(sigma[j] > 0)) throw std::domain_error("kl_unit_gaussian: sigma must be positive");
    const double s2 = sigma[j] * sigma[j];
    kl += 0.5 * (mu[j] * mu[j] + s2 - 1.0 - std::log(s2));
  }
  return kl;
}

template <class T>
Tensor<T> kl_unit_gaussian(const Tensor<T>& mu, const Tensor<T>& sigma) {
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (!(sigma[i] > T(0))) throw std::domain_error("kl_unit_gaussian: sigma must be positive");
  const auto s2 = ad::square(sigma);
  return ad::scale(ad::sum(ad::sub(ad::add_scalar(ad::add(ad::square(mu), s2), T(-1)), ad::log(s2))), T(0.5));
}

/// Same KL parameterized by log-variance.
template <class T>
Tensor<T> kl_from_logvar(const Tensor<T>& mu, const Tensor<T>& logvar) {
  return ad::scale(ad::sum(ad::sub(ad::add_scalar(ad::add(ad::square(mu), ad::exp(logvar)), T(-1)), logvar)), T(0.5));
}

// ---------------------------------------------------------------------------
// Box geometry

inline const std::vector<Vec3>& box_sample_layout() {
  static const std::vector<Vec3> grid = unit_cube_face_grid(3);
  return grid;
}

template <class T>
Tensor<T> layout_tensor() {
  const auto& g = box_sample_layout();
  std::vector<T> v;
  for (const auto& p : g)
    for (double c : p) v.push_back(static_cast<T>(c));
  return Tensor<T>::constant(std::move(v), {g.size(), 3});
}

template <class T>
Tensor<T> points_tensor(const PointSet& pts) {
  std::vector<T> v;
  for (const auto& p : pts)
    for (double c : p) v.push_back(static_cast<T>(c));
  return Tensor<T>::constant(std::move(v), {pts.size(), 3});
}

/// Differentiable box from a raw head row (10 values).
template <class T>
struct BoxTensor {
  Tensor<T> center;  // 1 x 3
  Tensor<T> half;    // 1 x 3
  Tensor<T> rot;     // 3 x 3, columns are local axes

  explicit BoxTensor(const Tensor<T>& raw) {
    const auto r = ad::reshape(raw, {1, kBoxParams});
    center = ad::slice_cols(r, 0, 3);
    half = ad::add_scalar(ad::softplus(ad::slice_cols(r, 3, 3)), static_cast<T>(kMinHalfExtent));
    rot = ad::quat_to_rot(ad::reshape(ad::slice_cols(r, 6, 4), {4}));
  }

  /// World positions of the fixed surface layout (n x 3).
  Tensor<T> points() const {
    return ad::add(ad::matmul(ad::mul(layout_tensor<T>(), half), ad::transpose(rot)), center);
  }

  OrientedBox value() const {
    OrientedBox b;
    for (int i = 0; i < 3; ++i) b.center[i] = center[i], b.half_extents[i] = half[i];
    Mat3 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m[r][c] = rot.at(r, c);
    b.rotation = matrix_to_quat(m);
    return b;
  }
};

template <class T>
Tensor<T> axes_tensor(const OrientedBox& box) {
  const Mat3 m = box.matrix();
  std::vector<T> v;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v.push_back(static_cast<T>(m[r][c]));
  return Tensor<T>::constant(std::move(v), {3, 3});
}

struct BoxLossTerms {
  double chamfer = 0;
  double normals = 0;
  double total() const { return chamfer + normals; }
};

/// Chamfer between the fixed surface layouts of the two boxes, plus
/// sum_k (1 - |cos|) between corresponding face normals.
inline BoxLossTerms box_geometry_loss(const OrientedBox& a, const OrientedBox& b) {
  BoxLossTerms t;
  t.chamfer = chamfer_sq(box_grid_points(a), box_grid_points(b));
  const Mat3 ma = a.matrix(), mb = b.matrix();
  for (int k = 0; k < 3; ++k) {
    double c = 0;
    for (int i = 0; i < 3; ++i) c += ma[i][k] * mb[i][k];
    t.normals += 1.0 - std::abs(c);
  }
  return t;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> box_geometry_loss(const BoxTensor<T>& pred, const OrientedBox& gt) {
  auto chamfer = ad::chamfer_sq(pred.points(), points_tensor<T>(box_grid_points(gt)));
  auto cosines = ad::abs(ad::sum_rows(ad::mul(pred.rot, axes_tensor<T>(gt))));
  auto normals = ad::add_scalar(ad::neg(ad::sum(cosines)), T(3));
  return {chamfer, normals};
}

// ---------------------------------------------------------------------------
// Matching

/// Slot for each ground-truth child under cost chamfer(pred, gt) - lambda * log p_exist.
inline std::vector<int> match_children(const std::vector<OrientedBox>& pred_boxes, const std::vector<double>& exist_prob,
                                       const std::vector<OrientedBox>& gt_boxes, double lambda) {
  if (pred_boxes.size() != exist_prob.size()) throw std::invalid_argument("match_children: slot count mismatch");
  if (gt_boxes.size() > pred_boxes.size())
    throw std::invalid_argument("match_children: " + std::to_string(gt_boxes.size()) + " children exceed " +
                                std::to_string(pred_boxes.size()) + " slots");
  std::vector<PointSet> pred_pts;
  for (const auto& b : pred_boxes) pred_pts.push_back(box_grid_points(b));
  std::vector<std::vector<double>> cost(gt_boxes.size(), std::vector<double>(pred_boxes.size()));
  for (std::size_t i = 0; i < gt_boxes.size(); ++i) {
    const auto gt_pts = box_grid_points(gt_boxes[i]);
    for (std::size_t k = 0; k < pred_boxes.size(); ++k)
      cost[i][k] = chamfer_sq(pred_pts[k], gt_pts) - lambda * std::log(std::max(exist_prob[k], 1e-12));
  }
  return hungarian(cost).row_to_col;
}

// ---------------------------------------------------------------------------
// Teacher-forced decoding

/// Child predictions of one ground-truth internal node, with the slot matched to each gt child.
template <class T>
struct SoftChildren {
  int parent_id = -1;
  ChildSlots<T> slots;
  std::vector<int> gt_children;
  std::vector<int> slot_of;  // slot_of[i] is the slot matched to gt_children[i]
};

template <class T>
struct SoftDecode {
  Tensor<T> root_leaf_logit;    // 1 x 1
  Tensor<T> root_label_logits;  // 1 x L
  Tensor<T> root_box_raw;       // 1 x 10
  std::vector<SoftChildren<T>> children;  // breadth-first over gt internal nodes
};

/// Decodes along the ground-truth tree: every gt internal node unpools its
/// children from its own decoded feature, and each gt child continues from the
/// feature of the slot it was matched to.
template <class T>
SoftDecode<T> teacher_forced_decode(const Model<T>& model, const std::vector<Tensor<T>>& z, const PartHierarchy& gt,
                                    const LossWeights& w = {}) {
  if (static_cast<int>(z.size()) != max_depth(gt) + 1)
    throw std::invalid_argument("teacher_forced_decode: latent length must equal gt depth + 1");
  const auto zhat = decode_sequence(model, z);
  SoftDecode<T> out;
  const auto root_f = ad::reshape(root_feature(model, zhat[0]), {1, model.hp().feature_dim});
  out.root_leaf_logit = model.leaf_head(root_f);
  out.root_label_logits = model.label_head(root_f);
  out.root_box_raw = model.box_head(root_f);

  std::deque<std::pair<int, Tensor<T>>> queue{{gt.root_id, root_f}};
  while (!queue.empty()) {
    auto [id, f] = queue.front();
    queue.pop_front();
    const PartNode& node = gt.node(id);
    if (node.is_leaf()) continue;
    if (node.children.size() > model.hp().k_max)
      throw std::invalid_argument("node " + std::to_string(id) + " has " + std::to_string(node.children.size()) +
                                  " children, more than K_max=" + std::to_string(model.hp().k_max));
    SoftChildren<T> sc;
    sc.parent_id = id;
    sc.gt_children = node.children;
    sc.slots = decode_children(model, ad::reshape(f, {model.hp().feature_dim}), zhat[node.depth],
                               !model.hp().probabilistic_at(node.depth));
    std::vector<OrientedBox> pred_boxes, gt_boxes;
    std::vector<double> exist;
    for (std::size_t k = 0; k < model.hp().k_max; ++k) {
      const auto& raw = sc.slots.box_raw.data();
      pred_boxes.push_back(box_from_raw(raw.begin() + k * kBoxParams));
      exist.push_back(sigmoid(static_cast<double>(sc.slots.exist_logits[k])));
    }
    for (int c : node.children) gt_boxes.push_back(gt.node(c).box);
    sc.slot_of = match_children(pred_boxes, exist, gt_boxes, w.match_lambda);
    for (std::size_t i = 0; i < node.children.size(); ++i)
      queue.emplace_back(node.children[i], ad::gather_rows(sc.slots.features, {static_cast<std::size_t>(sc.slot_of[i])}));
    out.children.push_back(std::move(sc));
  }
  return out;
}

template <class T>
struct LossResult {
  Tensor<T> total;
  LossBreakdown breakdown;
};

namespace detail {

inline bool has_edge(const PartHierarchy& gt, int a, int b, RelationKind kind) {
  for (const auto& e : gt.edges)
    if (e.kind == kind && ((e.a == a && e.b == b) || (e.a == b && e.b == a))) return true;
  return false;
}

template <class T>
void accumulate(Tensor<T>& acc, const Tensor<T>& term, T weight) {
  const auto t = ad::scale(term, weight);
  acc = acc.defined() ? ad::add(acc, t) : t;
}

template <class T>
Tensor<T> or_zero(const Tensor<T>& t) {
  return t.defined() ? t : Tensor<T>::scalar(T(0));
}

}  // namespace detail

/// Weighted reconstruction loss; fills the recon fields of `bd`.
template <class T>
Tensor<T> reconstruction_loss(const SoftDecode<T>& soft, const PartHierarchy& gt, const LossWeights& w,
                              LossBreakdown& bd) {
  Tensor<T> box, normals, exist, leaf, label, edge;
  auto add_node = [&](const Tensor<T>& leaf_logit, const Tensor<T>& label_logits, const Tensor<T>& raw,
                      const PartNode& target) {
    const auto [c, n] = box_geometry_loss(BoxTensor<T>(raw), target.box);
    detail::accumulate(box, c, T(1));
    detail::accumulate(normals, n, T(1));
    detail::accumulate(leaf, ad::bce_with_logits(leaf_logit, std::vector<T>{T(target.is_leaf() ? 1 : 0)}), T(1));
    detail::accumulate(label, ad::cross_entropy(ad::reshape(label_logits, {1, label_logits.size()}),
                                                {static_cast<std::size_t>(target.label)}),
                       T(1));
  };
  add_node(soft.root_leaf_logit, soft.root_label_logits, soft.root_box_raw, gt.root());

  for (const auto& sc : soft.children) {
    const std::size_t K = sc.slots.exist_logits.rows();
    std::vector<T> exists(K, T(0));
    for (int s : sc.slot_of) exists[s] = T(1);
    detail::accumulate(exist, ad::bce_with_logits(sc.slots.exist_logits, exists), T(1));
    for (std::size_t i = 0; i < sc.gt_children.size(); ++i) {
      const std::size_t s = static_cast<std::size_t>(sc.slot_of[i]);
      add_node(ad::gather_rows(sc.slots.leaf_logits, {s}), ad::gather_rows(sc.slots.label_logits, {s}),
               ad::gather_rows(sc.slots.box_raw, {s}), gt.node(sc.gt_children[i]));
      ++bd.matched;
    }
    // Edge supervision over pairs of matched slots.
    std::vector<std::size_t> rows;
    std::vector<T> targets;
    for (std::size_t i = 0; i < sc.gt_children.size(); ++i)
      for (std::size_t j = i + 1; j < sc.gt_children.size(); ++j) {
        rows.push_back(pair_index(sc.slot_of[i], sc.slot_of[j], K));
        for (int t = 0; t < kRelationKinds; ++t)
          targets.push_back(T(detail::has_edge(gt, sc.gt_children[i], sc.gt_children[j], static_cast<RelationKind>(t))));
      }
    if (!rows.empty()) detail::accumulate(edge, ad::bce_with_logits(ad::gather_rows(sc.slots.edge_logits, rows), targets), T(1));
  }

  box = detail::or_zero(box), normals = detail::or_zero(normals), exist = detail::or_zero(exist);
  leaf = detail::or_zero(leaf), label = detail::or_zero(label), edge = detail::or_zero(edge);
  bd.box = box.item(), bd.normals = normals.item(), bd.exist = exist.item();
  bd.leaf = leaf.item(), bd.label = label.item(), bd.edge = edge.item();
  Tensor<T> total;
  detail::accumulate(total, box, T(w.box));
  detail::accumulate(total, normals, T(w.normals));
  detail::accumulate(total, exist, T(w.exist));
  detail::accumulate(total, leaf, T(w.leaf));
  detail::accumulate(total, label, T(w.label));
  detail::accumulate(total, edge, T(w.edge));
  bd.recon = total.item();
  return total;
}

// ---------------------------------------------------------------------------
// Structure consistency

/// Squared distance from every row of `pts` (n x 3) to the solid box, as (n x 1).
template <class T>
Tensor<T> squared_distance_to_box(const Tensor<T>& pts, const BoxTensor<T>& box) {
  const auto local = ad::matmul(ad::sub(pts, box.center), box.rot);
  const auto over = ad::relu(ad::sub(local, box.half));
  const auto under = ad::relu(ad::sub(ad::neg(local), box.half));
  return ad::sum_cols(ad::add(ad::square(over), ad::square(under)));
}

/// Smallest squared distance between the two boxes, measured from each box's
/// surface layout to the other solid box.
template <class T>
Tensor<T> adjacency_term(const BoxTensor<T>& a, const BoxTensor<T>& b) {
  const auto ab = ad::min_all(squared_distance_to_box(a.points(), b));
  const auto ba = ad::min_all(squared_distance_to_box(b.points(), a));
  return ab.item() <= ba.item() ? ab : ba;
}

/// Chamfer between box b and box a moved by the closed-form fit of the
/// symmetry `kind` mapping a onto b. Rotations are about the vertical axis
/// through `pivot`.
template <class T>
Tensor<T> symmetry_term(const BoxTensor<T>& a, const BoxTensor<T>& b, RelationKind kind, const Vec3& pivot) {
  const auto pa = a.points(), pb = b.points();
  const auto eps = T(1e-12);
  switch (kind) {
    case RelationKind::TransSym:
      return ad::chamfer_sq(ad::add(pa, ad::sub(b.center, a.center)), pb);
    case RelationKind::RefSym: {
      const auto diff = ad::sub(b.center, a.center);  // 1 x 3
      const auto len = ad::sqrt(ad::add_scalar(ad::sum(ad::square(diff)), eps));
      const auto normal = ad::mul_scalar(diff, ad::div(Tensor<T>::scalar(T(1)), len));
      const auto mid = ad::scale(ad::add(a.center, b.center), T(0.5));
      const auto offset = ad::matmul(ad::sub(pa, mid), ad::transpose(normal));  // n x 1
      return ad::chamfer_sq(ad::sub(pa, ad::scale(ad::matmul(offset, normal), T(2))), pb);
    }
    case RelationKind::RotSym: {
      const auto o = Tensor<T>::constant({T(pivot[0]), T(pivot[1]), T(pivot[2])}, {1, 3});
      const auto ra = ad::sub(a.center, o), rb = ad::sub(b.center, o);
      const auto ax = ad::slice_cols(ra, 0, 1), az = ad::slice_cols(ra, 2, 1);
      const auto bx = ad::slice_cols(rb, 0, 1), bz = ad::slice_cols(rb, 2, 1);
      const auto norm = ad::sqrt(ad::add_scalar(
          ad::mul(ad::add(ad::square(ax), ad::square(az)), ad::add(ad::square(bx), ad::square(bz))), eps));
      const auto c = ad::div(ad::add(ad::mul(ax, bx), ad::mul(az, bz)), norm);
      const auto s = ad::div(ad::sub(ad::mul(az, bx), ad::mul(ax, bz)), norm);
      const auto local = ad::sub(pa, o);
      const auto x = ad::slice_cols(local, 0, 1), y = ad::slice_cols(local, 1, 1), zc = ad::slice_cols(local, 2, 1);
      const auto x2 = ad::add(ad::mul_scalar(x, c), ad::mul_scalar(zc, s));
      const auto z2 = ad::sub(ad::mul_scalar(zc, c), ad::mul_scalar(x, s));
      return ad::chamfer_sq(ad::add(ad::concat<T>({x2, y, z2}), o), pb);
    }
    case RelationKind::Adjacency:
      break;
  }
  throw std::invalid_argument("symmetry_term: adjacency is not a symmetry");
}

/// Weighted structure-consistency loss over relations predicted (p > 0.5)
/// between matched slots; fills the sc fields of `bd`.
template <class T>
Tensor<T> structure_consistency_loss(const SoftDecode<T>& soft, const PartHierarchy& gt, const LossWeights& w,
                                     LossBreakdown& bd) {
  Tensor<T> sym, adj;
  for (const auto& sc : soft.children) {
    const std::size_t K = sc.slots.exist_logits.rows();
    const Vec3 pivot = gt.node(sc.parent_id).box.center;
    std::vector<BoxTensor<T>> boxes;
    for (int s : sc.slot_of) boxes.emplace_back(ad::gather_rows(sc.slots.box_raw, {static_cast<std::size_t>(s)}));
    const auto& logits = sc.slots.edge_logits;
    for (std::size_t i = 0; i < sc.slot_of.size(); ++i)
      for (std::size_t j = i + 1; j < sc.slot_of.size(); ++j) {
        std::size_t si = sc.slot_of[i], sj = sc.slot_of[j];
        const std::size_t p = pair_index(si, sj, K);
        const auto& bi = si < sj ? boxes[i] : boxes[j];
        const auto& bj = si < sj ? boxes[j] : boxes[i];
        for (int t = 0; t < kRelationKinds; ++t) {
          if (sigmoid(static_cast<double>(logits.at(p, t))) <= kDecisionThreshold) continue;
          const auto kind = static_cast<RelationKind>(t);
          if (kind == RelationKind::Adjacency) {
            detail::accumulate(adj, adjacency_term(bi, bj), T(1));
            ++bd.adjacency_edges;
          } else {
            detail::accumulate(sym, symmetry_term(bi, bj, kind, pivot), T(1));
            ++bd.symmetry_edges;
          }
        }
      }
  }
  sym = detail::or_zero(sym), adj = detail::or_zero(adj);
  bd.symmetry = sym.item(), bd.adjacency = adj.item();
  Tensor<T> total;
  detail::accumulate(total, sym, T(w.symmetry));
  detail::accumulate(total, adj, T(w.adjacency));
  bd.sc = total.item();
  return total;
}

// ---------------------------------------------------------------------------

/// L = w_kl * sum_d KL_d + w_recon * L_recon + w_sc * L_sc for one shape.
template <class T>
LossResult<T> total_loss(const Model<T>& model, const PartHierarchy& shape, const NoiseSource& noise,
                         const LossWeights& w = {}) {
  LossResult<T> r;
  const auto enc = encode_shape(model, shape, noise);
  Tensor<T> kl;
  for (std::size_t d = 0; d < enc.z.size(); ++d) {
    const auto kd = kl_from_logvar(enc.posterior.mu[d], enc.posterior.logvar[d]);
    r.breakdown.kl_per_depth.push_back(kd.item());
    detail::accumulate(kl, kd, T(1));
  }
  r.breakdown.kl = kl.item();
  const auto soft = teacher_forced_decode(model, enc.z, shape, w);
  const auto recon = reconstruction_loss(soft, shape, w, r.breakdown);
  const auto sc = structure_consistency_loss(soft, shape, w, r.breakdown);
  Tensor<T> total;
  detail::accumulate(total, kl, T(w.kl));
  detail::accumulate(total, recon, T(w.recon));
  detail::accumulate(total, sc, T(w.sc));
  r.total = total;
  r.breakdown.total = total.item();
  return r;
}

}  // namespace lsd
