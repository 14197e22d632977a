// Parameters of the per-depth latent hierarchy model: leaf encoder, graph
// encoder, encoding LSTM with per-depth posterior heads, decoding LSTM, child
// graph decoder(s) and the per-node prediction heads.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsd/hierarchy.hpp"
#include "lsd/nn.hpp"

namespace lsd {

inline constexpr std::size_t kBoxParams = 10;  // center(3), half extents(3), quaternion(4)

struct Hyperparams {
  std::size_t feature_dim = 256;
  std::size_t latent_dim = 256;
  std::size_t lstm_dim = 512;
  int d_max = kDefaultMaxDepth;
  std::size_t k_max = 10;
  std::size_t num_labels = 16;
  int mp_rounds = 2;
  bool no_lstm = false;
  /// Deepest generated depth that still uses the latent-conditioned child
  /// decoder; -1 means every depth does.
  int d_cut = -1;

  bool hybrid() const { return d_cut >= 0; }
  /// Whether children of a node at `parent_depth` come from the latent-conditioned decoder.
  bool probabilistic_at(int parent_depth) const { return d_cut < 0 || parent_depth + 1 <= d_cut; }
  std::size_t xhat_dim() const { return no_lstm ? feature_dim : lstm_dim; }
  std::size_t zhat_dim() const { return latent_dim; }

  void check() const {
    if (feature_dim == 0 || latent_dim == 0 || lstm_dim == 0) throw std::invalid_argument("hyperparameters: zero dimension");
    if (d_max < 0) throw std::invalid_argument("hyperparameters: d_max must be >= 0");
    if (k_max < 1) throw std::invalid_argument("hyperparameters: k_max must be >= 1");
    if (num_labels < 1) throw std::invalid_argument("hyperparameters: need at least one label");
    if (no_lstm && latent_dim != feature_dim)
      throw std::invalid_argument("hyperparameters: no_lstm requires latent_dim == feature_dim");
  }

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

inline nlohmann::json to_json(const Hyperparams& hp) {
  return {{"feature_dim", hp.feature_dim}, {"latent_dim", hp.latent_dim}, {"lstm_dim", hp.lstm_dim},
          {"d_max", hp.d_max},             {"k_max", hp.k_max},           {"num_labels", hp.num_labels},
          {"mp_rounds", hp.mp_rounds},     {"no_lstm", hp.no_lstm},       {"d_cut", hp.d_cut}};
}

inline Hyperparams hyperparams_from_json(const nlohmann::json& j, Hyperparams hp = {}) {
  hp.feature_dim = j.value("feature_dim", hp.feature_dim);
  hp.latent_dim = j.value("latent_dim", hp.latent_dim);
  hp.lstm_dim = j.value("lstm_dim", hp.lstm_dim);
  hp.d_max = j.value("d_max", hp.d_max);
  hp.k_max = j.value("k_max", hp.k_max);
  hp.num_labels = j.value("num_labels", hp.num_labels);
  hp.mp_rounds = j.value("mp_rounds", hp.mp_rounds);
  hp.no_lstm = j.value("no_lstm", hp.no_lstm);
  hp.d_cut = j.value("d_cut", hp.d_cut);
  return hp;
}

/// Message-passing round over a sibling graph: message(i <- j, kind t) =
/// relu(x_i A + x_j B + c_t + bias), followed by update relu([x_i, agg_i] U).
template <class T>
struct MessageRound {
  nn::Dense<T> from_self;  // A (+ bias)
  ad::Tensor<T> from_other;  // B
  ad::Tensor<T> kind_bias;   // one row per relation kind
  nn::Dense<T> update;

  MessageRound() = default;
  MessageRound(nn::ParamStore<T>& store, const std::string& name, std::size_t dim) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(2 * dim + kRelationKinds));
    from_self = nn::Dense<T>(store, name + ".msg_self", dim, dim);
    from_other = store.add_uniform(name + ".msg_other.w", {dim, dim}, bound);
    kind_bias = store.add_uniform(name + ".msg_kind.w", {static_cast<std::size_t>(kRelationKinds), dim}, bound);
    update = nn::Dense<T>(store, name + ".update", 2 * dim, dim);
  }
};

template <class T>
struct ChildDecoderParams {
  nn::Dense<T> input;   // [f, zhat] or f -> F
  nn::Dense<T> slots;   // F -> K*F
  nn::Dense<T> exist;   // F -> 1
  nn::Dense<T> edge_in; // F -> F, symmetric pair features
  nn::Dense<T> edge_out;  // F -> kinds
  std::vector<MessageRound<T>> rounds;
  nn::Dense<T> output;  // (rounds+1)F -> F

  ChildDecoderParams() = default;
  ChildDecoderParams(nn::ParamStore<T>& store, const std::string& name, std::size_t in_dim, const Hyperparams& hp) {
    const std::size_t F = hp.feature_dim;
    input = nn::Dense<T>(store, name + ".in", in_dim, F);
    slots = nn::Dense<T>(store, name + ".slots", F, hp.k_max * F);
    exist = nn::Dense<T>(store, name + ".exist", F, 1);
    edge_in = nn::Dense<T>(store, name + ".edge_in", F, F);
    edge_out = nn::Dense<T>(store, name + ".edge_out", F, kRelationKinds);
    for (int r = 0; r < hp.mp_rounds; ++r) rounds.emplace_back(store, name + ".round" + std::to_string(r), F);
    output = nn::Dense<T>(store, name + ".out", (hp.mp_rounds + 1) * F, F);
  }
};

template <class T>
class Model {
 public:
  Model(const Hyperparams& hp, std::uint64_t seed) : hp_(hp), seed_(seed), params_(seed) {
    hp_.check();
    const std::size_t F = hp_.feature_dim, Z = hp_.latent_dim, H = hp_.lstm_dim, L = hp_.num_labels;
    auto& s = params_;
    // encoder
    leaf_encoder = nn::Mlp<T>(s, "enc.leaf", {kBoxParams + L, F, F});
    child_input = nn::Dense<T>(s, "enc.gnn.in", F + L, F);
    for (int r = 0; r < hp_.mp_rounds; ++r) enc_rounds.emplace_back(s, "enc.gnn.round" + std::to_string(r), F);
    enc_pool = nn::Mlp<T>(s, "enc.gnn.pool", {(hp_.mp_rounds + 1) * F, F, F});
    if (!hp_.no_lstm) enc_lstm = nn::LstmCell<T>(s, "enc.lstm", F, H);
    for (int d = 0; d <= hp_.d_max; ++d) {
      const std::string p = "enc.posterior" + std::to_string(d);
      mu_heads.emplace_back(s, p + ".mu", std::vector<std::size_t>{hp_.xhat_dim() + Z, F, Z});
      logvar_heads.emplace_back(s, p + ".logvar", std::vector<std::size_t>{hp_.xhat_dim() + Z, F, Z});
    }
    // decoder
    if (!hp_.no_lstm) {
      dec_lstm = nn::LstmCell<T>(s, "dec.lstm", 2 * Z, H);
      dec_proj = nn::Dense<T>(s, "dec.lstm_proj", H, Z);
    }
    root_mlp = nn::Mlp<T>(s, "dec.root", {Z, F, F});
    child_decoder = ChildDecoderParams<T>(s, "dec.child", F + Z, hp_);
    if (hp_.hybrid()) child_decoder_det = ChildDecoderParams<T>(s, "dec.child_det", F, hp_);
    leaf_head = nn::Mlp<T>(s, "dec.head.leaf", {F, F, 1});
    label_head = nn::Mlp<T>(s, "dec.head.label", {F, F, L});
    box_head = nn::Mlp<T>(s, "dec.head.box", {F, F, kBoxParams});
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;

  const Hyperparams& hp() const { return hp_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// Copies parameter values from a model with identical hyperparameters.
  template <class U>
  void copy_values_from(const Model<U>& other) {
    if (!(other.hp() == hp_)) throw std::invalid_argument("copy_values_from: hyperparameter mismatch");
    for (auto& [name, t] : params_.entries()) {
      const auto& src = other.params().get(name).data();
      auto& dst = t.mutable_data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
    }
  }

  template <class U>
  Model<U> cast() const {
    Model<U> out(hp_, seed_);
    out.copy_values_from(*this);
    return out;
  }

  Model clone() const { return cast<T>(); }

  // encoder
  nn::Mlp<T> leaf_encoder;
  nn::Dense<T> child_input;
  std::vector<MessageRound<T>> enc_rounds;
  nn::Mlp<T> enc_pool;
  nn::LstmCell<T> enc_lstm;
  std::vector<nn::Mlp<T>> mu_heads;
  std::vector<nn::Mlp<T>> logvar_heads;
  // decoder
  nn::LstmCell<T> dec_lstm;
  nn::Dense<T> dec_proj;
  nn::Mlp<T> root_mlp;
  ChildDecoderParams<T> child_decoder;
  ChildDecoderParams<T> child_decoder_det;
  nn::Mlp<T> leaf_head;
  nn::Mlp<T> label_head;
  nn::Mlp<T> box_head;

 private:
  Hyperparams hp_;
  std::uint64_t seed_;
  nn::ParamStore<T> params_;
};

}  // namespace lsd
