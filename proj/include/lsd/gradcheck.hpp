// Central finite-difference check of analytic gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lsd/autodiff.hpp"

namespace lsd {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t coords_checked = 0;
  std::string worst;  // "input[i]"
};

/// |a - b| / max(|a|, |b|, floor)
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheckOptions {
  double step = 1e-4;
  std::size_t max_coords_per_input = 0;  // 0 = all
  std::uint64_t seed = 0;
  bool five_point = false;  // fourth-order stencil
  double floor = 1e-6;
};

/// Compares backward() of `loss_fn` against a central difference for each
/// coordinate of each input. With `max_coords_per_input` > 0 a seeded random
/// subset of coordinates is checked per input.
inline GradCheckResult check_gradients(std::vector<ad::Tensor<double>> inputs,
                                       const std::function<ad::Tensor<double>()>& loss_fn,
                                       const GradCheckOptions& opt) {
  const double h = opt.step;
  const auto max_coords_per_input = opt.max_coords_per_input;
  const auto seed = opt.seed;
  for (auto& t : inputs) t.zero_grad();
  ad::backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0));

  std::mt19937_64 rng(seed);
  GradCheckResult r;
  ad::NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& values = inputs[k].mutable_data();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords_per_input > 0 && coords.size() > max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_input);
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      double numeric = (up - down) / (2 * h);
      if (opt.five_point) {
        values[i] = saved + 2 * h;
        const double up2 = loss_fn().item();
        values[i] = saved - 2 * h;
        const double down2 = loss_fn().item();
        numeric = (8 * (up - down) - (up2 - down2)) / (12 * h);
      }
      values[i] = saved;
      const double err = relative_error(analytic[k][i], numeric, opt.floor);
      ++r.coords_checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = "input" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

inline GradCheckResult check_gradients(std::vector<ad::Tensor<double>> inputs,
                                       const std::function<ad::Tensor<double>()>& loss_fn, double h = 1e-4,
                                       std::size_t max_coords_per_input = 0, std::uint64_t seed = 0) {
  return check_gradients(std::move(inputs), loss_fn, GradCheckOptions{h, max_coords_per_input, seed});
}

}  // namespace lsd
