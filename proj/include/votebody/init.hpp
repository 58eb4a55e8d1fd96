#pragma once

#include <cmath>

#include "votebody/rng.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

template <typename S>
Tensor<S> make_normal(Rng& rng, Shape shape, double stddev) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<S>(rng.normal() * stddev);
  return t;
}

template <typename S>
Tensor<S> make_uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

// Glorot-uniform for a fan_in x fan_out weight matrix.
template <typename S>
Tensor<S> make_glorot(Rng& rng, int64_t fan_in, int64_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return make_uniform<S>(rng, {fan_in, fan_out}, -bound, bound);
}

// He-uniform (variance 2/fan_in): keeps activation variance roughly constant
// through relu layers, where glorot decays it by half per layer.
template <typename S>
Tensor<S> make_he(Rng& rng, int64_t fan_in, int64_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return make_uniform<S>(rng, {fan_in, fan_out}, -bound, bound);
}

}  // namespace votebody
