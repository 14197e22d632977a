// Neural building blocks on top of the autodiff core: a named parameter
// registry, dense layers, MLPs, an LSTM cell and the Adam optimizer.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lsd/autodiff.hpp"

namespace lsd::nn {

using ad::Tensor;

/// Ordered registry of trainable tensors. Registration order is the
/// iteration order, so initialization is reproducible from the seed alone.
template <class T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  /// Registers a tensor drawn from uniform(-bound, bound).
  Tensor<T> add_uniform(const std::string& name, ad::Shape shape, double bound) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> data(n);
    for (auto& v : data) v = static_cast<T>(dist(rng_));
    return add(name, Tensor<T>::parameter(std::move(data), std::move(shape)));
  }

  Tensor<T> add_constant(const std::string& name, ad::Shape shape, T value) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return add(name, Tensor<T>::parameter(std::vector<T>(n, value), std::move(shape)));
  }

  Tensor<T> add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, t);
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// y = x W + b with W stored (in x out). He-uniform weights, zero bias.
template <class T>
struct Dense {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t in = 0, out = 0;

  Dense() = default;
  Dense(ParamStore<T>& store, const std::string& name, std::size_t in_dim, std::size_t out_dim)
      : in(in_dim), out(out_dim) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dim));
    weight = store.add_uniform(name + ".w", {in_dim, out_dim}, bound);
    bias = store.add_constant(name + ".b", {out_dim}, T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ad::add(ad::matmul(x, weight), bias); }
};

/// ReLU hidden layers, linear output.
template <class T>
struct Mlp {
  std::vector<Dense<T>> layers;

  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, const std::vector<std::size_t>& dims) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      layers.emplace_back(store, name + ".l" + std::to_string(i), dims[i], dims[i + 1]);
  }

  Tensor<T> operator()(Tensor<T> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = ad::relu(x);
    }
    return x;
  }

  std::size_t in_dim() const { return layers.front().in; }
  std::size_t out_dim() const { return layers.back().out; }
};

template <class T>
struct LstmState {
  Tensor<T> hidden;
  Tensor<T> cell;

  static LstmState zeros(std::size_t dim) {
    return {Tensor<T>::zeros({dim}), Tensor<T>::zeros({dim})};
  }
};

/// Standard LSTM cell, gate order (input, forget, candidate, output).
template <class T>
struct LstmCell {
  Tensor<T> w_input;   // in x 4H
  Tensor<T> w_hidden;  // H x 4H
  Tensor<T> bias;      // 4H
  std::size_t in = 0, hidden = 0;

  LstmCell() = default;
  LstmCell(ParamStore<T>& store, const std::string& name, std::size_t in_dim, std::size_t hidden_dim)
      : in(in_dim), hidden(hidden_dim) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    w_input = store.add_uniform(name + ".wx", {in_dim, 4 * hidden_dim}, bound);
    w_hidden = store.add_uniform(name + ".wh", {hidden_dim, 4 * hidden_dim}, bound);
    std::vector<T> b(4 * hidden_dim, T(0));
    for (std::size_t i = hidden_dim; i < 2 * hidden_dim; ++i) b[i] = T(1);  // forget gate
    bias = store.add(name + ".b", Tensor<T>::parameter(std::move(b), {4 * hidden_dim}));
  }

  /// One step; returns the new state. The step output is the new hidden vector.
  LstmState<T> step(const LstmState<T>& state, const Tensor<T>& x) const {
    if (x.size() != in)
      throw std::invalid_argument("lstm_step: input has " + std::to_string(x.size()) + " values, expected " + std::to_string(in));
    if (state.hidden.size() != hidden || state.cell.size() != hidden)
      throw std::invalid_argument("lstm_step: state dimension mismatch");
    const Tensor<T> gates = ad::add(ad::add(ad::matmul(x, w_input), ad::matmul(state.hidden, w_hidden)), bias);
    const auto i = ad::sigmoid(ad::slice_cols(gates, 0, hidden));
    const auto f = ad::sigmoid(ad::slice_cols(gates, hidden, hidden));
    const auto g = ad::tanh(ad::slice_cols(gates, 2 * hidden, hidden));
    const auto o = ad::sigmoid(ad::slice_cols(gates, 3 * hidden, hidden));
    const auto c = ad::add(ad::mul(f, state.cell), ad::mul(i, g));
    return {ad::mul(o, ad::tanh(c)), c};
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `values` in place. `t` is the 1-based step count.
template <class T>
void adam_step(std::span<T> values, std::span<const T> grads, std::span<T> m, std::span<T> v, long t,
               const AdamConfig& cfg) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    values[i] = static_cast<T>(values[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
  }
}

/// Adam over every parameter in a store that holds a gradient or moments.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore<T>& store) {
    ++t_;
    for (auto& [name, p] : store.entries()) {
      // Parameters with moments but no gradient buffer step with a zero gradient.
      const bool has_state = state_.count(name) != 0;
      if (!p.has_grad() && !has_state) continue;
      auto& st = state_[name];
      if (st.first.size() != p.size()) {
        st.first.assign(p.size(), T(0));
        st.second.assign(p.size(), T(0));
      }
      if (p.has_grad()) {
        adam_step<T>(p.mutable_data(), p.grad(), st.first, st.second, t_, cfg_);
      } else {
        adam_step<T>(p.mutable_data(), std::vector<T>(p.size(), T(0)), st.first, st.second, t_, cfg_);
      }
    }
  }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }
  /// name -> (first moment, second moment)
  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>>& state() { return state_; }
  const std::map<std::string, std::pair<std::vector<T>, std::vector<T>>>& state() const { return state_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> state_;
};

}  // namespace lsd::nn
