#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "votebody/backbone.hpp"
#include "votebody/body_model.hpp"
#include "votebody/graph.hpp"
#include "votebody/init.hpp"
#include "votebody/optimizer.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

// body-parameter regression from completed joints: a cross-attention head
// pools joint features against the global descriptor into shape coefficients
// and a root rotation, and a two-layer graph convolution over the kinematic
// tree emits per-joint local rotations

constexpr int64_t kGlobalParamDim = 19;  // 10 shape coefficients + 9 root rotation entries

namespace detail {

// output layers start near the identity rotation: tiny weights, bias carrying
// vec(I) in the rotation slots
template <typename S>
void register_rotation_output(ParamStore<S>& store, Rng& rng, const std::string& prefix, int64_t in,
                              int64_t out, int64_t rotation_offset) {
  Tensor<S> w = make_glorot<S>(rng, in, out);
  for (auto& v : w.data) v *= static_cast<S>(0.01);
  Tensor<S> b({out});
  for (int64_t r = 0; r < 3; ++r) b.at(rotation_offset + 4 * r) = S(1);
  store.add(prefix + ".w", std::move(w));
  store.add(prefix + ".b", std::move(b));
}

}  // namespace detail

template <typename S>
void register_global_params(ParamStore<S>& store, Rng& rng) {
  register_linear(store, rng, "global.q", kGlobalFeatureDim, kGlobalFeatureDim);
  register_linear(store, rng, "global.k", kGlobalFeatureDim, kGlobalFeatureDim);
  register_linear(store, rng, "global.v", kGlobalFeatureDim, kGlobalFeatureDim);
  register_relu_linear(store, rng, "global.edge", 2 * kGlobalFeatureDim, kGlobalFeatureDim);
  detail::register_rotation_output(store, rng, "global.out", kGlobalFeatureDim, kGlobalParamDim, kShapeDims);
}

template <typename S>
void register_local_params(ParamStore<S>& store, Rng& rng) {
  store.add("local.gcn1.w", make_he<S>(rng, kGlobalFeatureDim + 3, 128));
  store.add("local.gcn2.w", make_he<S>(rng, 128, 128));
  detail::register_rotation_output(store, rng, "local.out", 128, 9, 0);
}

template <typename S>
struct GlobalNodes {
  typename Graph<S>::Id attention;  // [1, K] simplex
  typename Graph<S>::Id pooled;     // [1, F2] attentive global feature
  typename Graph<S>::Id params;     // [1, 19]
  typename Graph<S>::Id betas;      // [1, 10]
  typename Graph<S>::Id root;       // [1, 9]
};

template <typename S>
GlobalNodes<S> global_regress(Graph<S>& g, const ParamStore<S>& store, typename Graph<S>::Id global_feature,
                              typename Graph<S>::Id completed_features) {
  const int64_t K = g.value(completed_features).shape[0];
  auto lin = [&](const std::string& name, typename Graph<S>::Id x) {
    return g.bias_add(g.matmul(x, g.param(name + ".w", store.at(name + ".w"))),
                      g.param(name + ".b", store.at(name + ".b")));
  };
  const auto q = lin("global.q", global_feature);        // [1, F2]
  const auto keys = lin("global.k", completed_features); // [K, F2]
  const auto vals = lin("global.v", completed_features); // [K, F2]

  GlobalNodes<S> out;
  const auto logits = g.scale(g.matmul(q, g.transpose(keys)), 1.0 / std::sqrt(static_cast<double>(kGlobalFeatureDim)));
  out.attention = g.softmax(logits, 1);                  // [1, K]
  out.pooled = g.matmul(out.attention, vals);            // [1, F2]

  Tensor<S> ones({K, 1});
  for (auto& v : ones.data) v = S(1);
  const auto pooled_rows = g.matmul(g.constant(ones), out.pooled);         // [K, F2]
  const auto edge_in = g.concat({completed_features, g.sub(pooled_rows, completed_features)}, 1);
  const auto edges = g.relu(lin("global.edge", edge_in));                  // [K, F2]
  const auto agg = g.reshape(g.reduce_max(edges, 0), {1, kGlobalFeatureDim});
  out.params = lin("global.out", agg);                                     // [1, 19]

  std::vector<int64_t> beta_cols(static_cast<size_t>(kShapeDims)), rot_cols(9);
  // split the 19 outputs by gathering columns of the transposed row
  const auto col = g.transpose(out.params);  // [19, 1]
  for (int64_t i = 0; i < kShapeDims; ++i) beta_cols[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < 9; ++i) rot_cols[static_cast<size_t>(i)] = kShapeDims + i;
  out.betas = g.transpose(g.gather_rows(col, beta_cols));
  out.root = g.transpose(g.gather_rows(col, rot_cols));
  return out;
}

// normalized kinematic-tree adjacency with self-loops: D^{-1/2} (A + I) D^{-1/2}
template <typename S>
Tensor<S> gcn_adjacency(const std::vector<int64_t>& parents) {
  const int64_t K = static_cast<int64_t>(parents.size());
  Tensor<double> a({K, K});
  for (int64_t k = 0; k < K; ++k) a.at(k, k) = 1.0;
  for (int64_t k = 1; k < K; ++k) {
    const int64_t p = parents[static_cast<size_t>(k)];
    if (p < 0 || p >= K) throw std::invalid_argument("gcn_adjacency: parent index out of range");
    a.at(k, p) = 1.0;
    a.at(p, k) = 1.0;
  }
  std::vector<double> dinv(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k) {
    double deg = 0.0;
    for (int64_t j = 0; j < K; ++j) deg += a.at(k, j);
    dinv[static_cast<size_t>(k)] = 1.0 / std::sqrt(deg);
  }
  Tensor<S> norm({K, K});
  for (int64_t i = 0; i < K; ++i)
    for (int64_t j = 0; j < K; ++j)
      norm.at(i, j) = static_cast<S>(dinv[static_cast<size_t>(i)] * a.at(i, j) * dinv[static_cast<size_t>(j)]);
  return norm;
}

// two rounds of H <- relu(A_hat H W) over [completed positions; features],
// then a shared per-joint linear layer; root row dropped
template <typename S>
typename Graph<S>::Id local_regress(Graph<S>& g, const ParamStore<S>& store,
                                    typename Graph<S>::Id completed_positions,
                                    typename Graph<S>::Id completed_features,
                                    const std::vector<int64_t>& parents) {
  const int64_t K = static_cast<int64_t>(parents.size());
  if (K < 2) throw std::invalid_argument("local_regress: need at least two joints");
  const auto adj = g.constant(gcn_adjacency<S>(parents));
  auto h = g.concat({completed_positions, completed_features}, 1);  // [K, 3 + F2]
  h = g.relu(g.matmul(adj, g.matmul(h, g.param("local.gcn1.w", store.at("local.gcn1.w")))));
  h = g.relu(g.matmul(adj, g.matmul(h, g.param("local.gcn2.w", store.at("local.gcn2.w")))));
  h = g.bias_add(g.matmul(h, g.param("local.out.w", store.at("local.out.w"))),
                 g.param("local.out.b", store.at("local.out.b")));  // [K, 9]
  std::vector<int64_t> rows(static_cast<size_t>(K - 1));
  for (int64_t k = 1; k < K; ++k) rows[static_cast<size_t>(k - 1)] = k;
  return g.gather_rows(h, rows);  // [(K-1), 9]
}

}  // namespace votebody
