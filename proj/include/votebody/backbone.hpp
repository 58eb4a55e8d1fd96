#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "votebody/graph.hpp"
#include "votebody/init.hpp"
#include "votebody/optimizer.hpp"
#include "votebody/rng.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

// hierarchical point-feature extractor: four set-abstraction levels pool local
// neighborhoods into ever-coarser point sets, four propagation levels
// interpolate back to full resolution with skip links, and the coarsest level
// also yields a pooled global descriptor

constexpr int64_t kPointFeatureDim = 128;   // per-point feature width F1
constexpr int64_t kGlobalFeatureDim = 128;  // global descriptor width F2
constexpr int64_t kBallNeighbors = 16;
constexpr std::array<int64_t, 4> kSaWidths = {64, 128, 128, 128};
constexpr std::array<double, 4> kSaRadiusFactors = {0.1, 0.2, 0.4, 0.8};

// greedy max-min subset: repeatedly take the point farthest from everything
// chosen so far (first maximum wins ties)
inline std::vector<int64_t> farthest_point_sample(const std::vector<std::array<double, 3>>& coords,
                                                  int64_t count, int64_t start_index = 0) {
  const int64_t n = static_cast<int64_t>(coords.size());
  if (count < 1 || count > n) throw std::invalid_argument("farthest_point_sample: count must be in [1, N]");
  if (start_index < 0 || start_index >= n) throw std::invalid_argument("farthest_point_sample: bad start index");
  std::vector<int64_t> picked = {start_index};
  std::vector<double> min_d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  int64_t last = start_index;
  while (static_cast<int64_t>(picked.size()) < count) {
    int64_t best = -1;
    double best_d2 = -1.0;
    for (int64_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = coords[static_cast<size_t>(i)][static_cast<size_t>(c)] -
                         coords[static_cast<size_t>(last)][static_cast<size_t>(c)];
        d2 += d * d;
      }
      min_d2[static_cast<size_t>(i)] = std::min(min_d2[static_cast<size_t>(i)], d2);
      if (min_d2[static_cast<size_t>(i)] > best_d2) {
        best_d2 = min_d2[static_cast<size_t>(i)];
        best = i;
      }
    }
    picked.push_back(best);
    last = best;
  }
  return picked;
}

// per center: up to max_neighbors points within radius, nearest first, padded
// by repeating the nearest; an empty ball falls back to the globally nearest
inline std::vector<std::vector<int64_t>> ball_query(const std::vector<std::array<double, 3>>& coords,
                                                    const std::vector<std::array<double, 3>>& centers,
                                                    double radius, int64_t max_neighbors) {
  if (radius <= 0.0) throw std::invalid_argument("ball_query: radius must be positive");
  if (max_neighbors < 1) throw std::invalid_argument("ball_query: need at least one neighbor slot");
  const double r2 = radius * radius;
  std::vector<std::vector<int64_t>> groups(centers.size());
  std::vector<std::pair<double, int64_t>> hits;
  for (size_t q = 0; q < centers.size(); ++q) {
    hits.clear();
    double nearest_d2 = std::numeric_limits<double>::infinity();
    int64_t nearest = 0;
    for (size_t i = 0; i < coords.size(); ++i) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = coords[i][static_cast<size_t>(c)] - centers[q][static_cast<size_t>(c)];
        d2 += d * d;
      }
      if (d2 < nearest_d2) {
        nearest_d2 = d2;
        nearest = static_cast<int64_t>(i);
      }
      if (d2 <= r2) hits.emplace_back(d2, static_cast<int64_t>(i));
    }
    std::stable_sort(hits.begin(), hits.end());
    auto& grp = groups[q];
    for (const auto& [d2, i] : hits) {
      if (static_cast<int64_t>(grp.size()) == max_neighbors) break;
      grp.push_back(i);
    }
    if (grp.empty()) grp.push_back(nearest);
    const int64_t pad = grp[0];
    while (static_cast<int64_t>(grp.size()) < max_neighbors) grp.push_back(pad);
  }
  return groups;
}

template <typename S>
void register_linear(ParamStore<S>& store, Rng& rng, const std::string& prefix, int64_t in, int64_t out,
                     S bias_init = S(0)) {
  store.add(prefix + ".w", make_glorot<S>(rng, in, out));
  store.add(prefix + ".b", Tensor<S>::full({out}, bias_init));
}

// for layers feeding a relu: He init preserves activation variance through
// depth where glorot decays it by half per layer
template <typename S>
void register_relu_linear(ParamStore<S>& store, Rng& rng, const std::string& prefix, int64_t in, int64_t out,
                          S bias_init = S(0)) {
  store.add(prefix + ".w", make_he<S>(rng, in, out));
  store.add(prefix + ".b", Tensor<S>::full({out}, bias_init));
}

template <typename S>
void register_backbone_params(ParamStore<S>& store, Rng& rng) {
  int64_t in = 3 + 3;  // relative coords + initial features (the coords themselves)
  for (int l = 0; l < 4; ++l) {
    const std::string p = "backbone.sa" + std::to_string(l + 1);
    register_relu_linear(store, rng, p + ".l1", in, kSaWidths[static_cast<size_t>(l)]);
    register_relu_linear(store, rng, p + ".l2", kSaWidths[static_cast<size_t>(l)], kSaWidths[static_cast<size_t>(l)]);
    in = kSaWidths[static_cast<size_t>(l)] + 3;
  }
  const std::array<int64_t, 4> skip = {3, kSaWidths[0], kSaWidths[1], kSaWidths[2]};
  for (int l = 3; l >= 0; --l) {
    const std::string p = "backbone.fp" + std::to_string(l);
    const int64_t above = (l == 3) ? kSaWidths[3] : kPointFeatureDim;
    register_relu_linear(store, rng, p + ".l1", above + skip[static_cast<size_t>(l)], kPointFeatureDim);
    register_relu_linear(store, rng, p + ".l2", kPointFeatureDim, kPointFeatureDim);
  }
  register_linear(store, rng, "backbone.global", kSaWidths[3], kGlobalFeatureDim);
}

namespace detail {

template <typename S>
typename Graph<S>::Id linear_relu(Graph<S>& g, const ParamStore<S>& store, const std::string& prefix,
                                  typename Graph<S>::Id x) {
  const auto w = g.param(prefix + ".w", store.at(prefix + ".w"));
  const auto b = g.param(prefix + ".b", store.at(prefix + ".b"));
  return g.relu(g.bias_add(g.matmul(x, w), b));
}

}  // namespace detail

template <typename S>
struct BackboneOut {
  typename Graph<S>::Id features;  // [N, F1]
  typename Graph<S>::Id global;    // [1, F2]
};

template <typename S>
BackboneOut<S> backbone_forward(Graph<S>& g, const ParamStore<S>& store, const Tensor<S>& points) {
  if (points.shape.size() != 2 || points.shape[1] != 3)
    throw std::invalid_argument("backbone_forward: points must be N x 3");
  if (!points.all_finite()) throw std::invalid_argument("backbone_forward: non-finite input point");
  const int64_t N = points.shape[0];
  if (N < 1) throw std::invalid_argument("backbone_forward: empty cloud");

  std::vector<std::array<double, 3>> coords(static_cast<size_t>(N));
  std::array<double, 3> centroid = {0, 0, 0};
  for (int64_t i = 0; i < N; ++i)
    for (int c = 0; c < 3; ++c) {
      coords[static_cast<size_t>(i)][static_cast<size_t>(c)] = static_cast<double>(points.at(i, c));
      centroid[static_cast<size_t>(c)] += coords[static_cast<size_t>(i)][static_cast<size_t>(c)] / static_cast<double>(N);
    }
  double bound_radius = 0.0;
  for (const auto& p : coords) {
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = p[static_cast<size_t>(c)] - centroid[static_cast<size_t>(c)];
      d2 += d * d;
    }
    bound_radius = std::max(bound_radius, std::sqrt(d2));
  }
  bound_radius = std::max(bound_radius, 1e-6);

  std::array<std::vector<std::array<double, 3>>, 5> level_coords;
  std::array<typename Graph<S>::Id, 5> level_feats;
  level_coords[0] = coords;
  level_feats[0] = g.constant(points);

  for (int l = 0; l < 4; ++l) {
    const auto& cur = level_coords[static_cast<size_t>(l)];
    const int64_t count = std::max<int64_t>(1, N >> (2 * (l + 1)));
    const auto centers_idx = farthest_point_sample(cur, std::min<int64_t>(count, static_cast<int64_t>(cur.size())), 0);
    std::vector<std::array<double, 3>> centers;
    centers.reserve(centers_idx.size());
    for (int64_t i : centers_idx) centers.push_back(cur[static_cast<size_t>(i)]);
    const double radius = kSaRadiusFactors[static_cast<size_t>(l)] * bound_radius;
    const auto groups = ball_query(cur, centers, radius, kBallNeighbors);

    const int64_t G = static_cast<int64_t>(centers.size());
    std::vector<int64_t> flat;
    flat.reserve(static_cast<size_t>(G * kBallNeighbors));
    Tensor<S> rel({G * kBallNeighbors, 3});
    for (int64_t q = 0; q < G; ++q)
      for (int64_t s = 0; s < kBallNeighbors; ++s) {
        const int64_t i = groups[static_cast<size_t>(q)][static_cast<size_t>(s)];
        flat.push_back(i);
        // radius-normalized offsets keep the geometry input O(1) at every level
        for (int c = 0; c < 3; ++c)
          rel.at(q * kBallNeighbors + s, c) =
              static_cast<S>((cur[static_cast<size_t>(i)][static_cast<size_t>(c)] -
                              centers[static_cast<size_t>(q)][static_cast<size_t>(c)]) /
                             radius);
      }

    const std::string p = "backbone.sa" + std::to_string(l + 1);
    auto x = g.concat({g.constant(rel), g.gather_rows(level_feats[static_cast<size_t>(l)], flat)}, 1);
    x = detail::linear_relu(g, store, p + ".l1", x);
    x = detail::linear_relu(g, store, p + ".l2", x);
    x = g.reshape(x, {G, kBallNeighbors, kSaWidths[static_cast<size_t>(l)]});
    level_feats[static_cast<size_t>(l + 1)] = g.reduce_max(x, 1);
    level_coords[static_cast<size_t>(l + 1)] = std::move(centers);
  }

  const auto pooled = g.reshape(g.reduce_max(level_feats[4], 0), {1, kSaWidths[3]});
  const auto global = g.bias_add(g.matmul(pooled, g.param("backbone.global.w", store.at("backbone.global.w"))),
                                 g.param("backbone.global.b", store.at("backbone.global.b")));

  // propagate back down: inverse-distance 3-NN interpolation, skip concat, perceptron
  auto above_feats = level_feats[4];
  for (int l = 3; l >= 0; --l) {
    const auto& fine = level_coords[static_cast<size_t>(l)];
    const auto& coarse = level_coords[static_cast<size_t>(l + 1)];
    const int64_t n_fine = static_cast<int64_t>(fine.size());
    const int64_t m = std::min<int64_t>(3, static_cast<int64_t>(coarse.size()));

    std::vector<std::vector<int64_t>> nn_idx(static_cast<size_t>(m), std::vector<int64_t>(static_cast<size_t>(n_fine)));
    std::vector<Tensor<S>> nn_w(static_cast<size_t>(m), Tensor<S>({n_fine}));
    std::vector<std::pair<double, int64_t>> order(coarse.size());
    for (int64_t i = 0; i < n_fine; ++i) {
      for (size_t j = 0; j < coarse.size(); ++j) {
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double d = fine[static_cast<size_t>(i)][static_cast<size_t>(c)] - coarse[j][static_cast<size_t>(c)];
          d2 += d * d;
        }
        order[j] = {d2, static_cast<int64_t>(j)};
      }
      std::partial_sort(order.begin(), order.begin() + static_cast<int64_t>(m), order.end());
      double total = 0.0;
      for (int64_t r = 0; r < m; ++r) total += 1.0 / (std::sqrt(order[static_cast<size_t>(r)].first) + 1e-8);
      for (int64_t r = 0; r < m; ++r) {
        nn_idx[static_cast<size_t>(r)][static_cast<size_t>(i)] = order[static_cast<size_t>(r)].second;
        nn_w[static_cast<size_t>(r)].at(i) =
            static_cast<S>(1.0 / (std::sqrt(order[static_cast<size_t>(r)].first) + 1e-8) / total);
      }
    }
    typename Graph<S>::Id interp = g.scale_rows(g.gather_rows(above_feats, nn_idx[0]), g.constant(nn_w[0]));
    for (int64_t r = 1; r < m; ++r)
      interp = g.add(interp, g.scale_rows(g.gather_rows(above_feats, nn_idx[static_cast<size_t>(r)]),
                                          g.constant(nn_w[static_cast<size_t>(r)])));

    const std::string p = "backbone.fp" + std::to_string(l);
    auto x = g.concat({interp, level_feats[static_cast<size_t>(l)]}, 1);
    x = detail::linear_relu(g, store, p + ".l1", x);
    x = detail::linear_relu(g, store, p + ".l2", x);
    above_feats = x;
  }
  return {above_feats, global};
}

}  // namespace votebody
