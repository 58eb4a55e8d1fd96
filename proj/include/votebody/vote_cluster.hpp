#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "votebody/backbone.hpp"
#include "votebody/graph.hpp"
#include "votebody/init.hpp"
#include "votebody/optimizer.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

// per-point voting (segmentation / offset / feature heads on a shared trunk),
// soft clustering of votes into joint positions+features, confidence-based
// visibility masking, and completion of occluded joints from the visible ones

constexpr double kVisibilityThreshold = 0.1;
constexpr int64_t kCompletionHidden = 512;
// fixed temperature on the segmentation logits: per-class decisions need
// logit swings of several units, and at small learning rates a plain linear
// head takes thousands of steps to grow weights that far; the gain gets the
// same swing from 10x smaller weights (init is shrunk to match, so the
// initial distribution is unchanged)
constexpr double kSegLogitGain = 10.0;

template <typename S>
struct VoteNodes {
  typename Graph<S>::Id seg;       // [N, K] simplex rows
  typename Graph<S>::Id offsets;   // [N, 3]
  typename Graph<S>::Id features;  // [N, F1]
};

template <typename S>
struct ClusterNodes {
  typename Graph<S>::Id positions;  // [K, 3], zeroed where invisible
  typename Graph<S>::Id features;   // [K, F1], zeroed where invisible
  std::vector<bool> visible;        // confidence_k = max_i s_i^k >= threshold
  std::vector<double> confidence;
};

template <typename S>
struct CompletionNodes {
  typename Graph<S>::Id positions;  // [K, 3] completed joints
  typename Graph<S>::Id features;   // [K, F2] completed features
};

template <typename S>
void register_vote_params(ParamStore<S>& store, Rng& rng, int64_t num_joints) {
  register_relu_linear(store, rng, "vote.trunk.l1", kPointFeatureDim, 128);
  register_relu_linear(store, rng, "vote.trunk.l2", 128, 128);
  register_linear(store, rng, "vote.seg", 128, num_joints);
  for (auto& v : store.at("vote.seg.w").data) v = static_cast<S>(static_cast<double>(v) / kSegLogitGain);
  register_linear(store, rng, "vote.offset", 128, 3);
  register_linear(store, rng, "vote.feat", 128, kPointFeatureDim);
}

template <typename S>
void register_completion_params(ParamStore<S>& store, Rng& rng, int64_t num_joints) {
  // small positive bias keeps the relu responsive when every cluster is masked
  // to zeros (fully occluded input would otherwise sit exactly on the kink)
  register_relu_linear(store, rng, "complete.l1", num_joints * (3 + kPointFeatureDim), kCompletionHidden,
                       S(0.01));
  register_linear(store, rng, "complete.l2", kCompletionHidden, num_joints * kGlobalFeatureDim);
  register_linear(store, rng, "complete.pos", kGlobalFeatureDim, 3);
}

// shared trunk then three heads; the feature head is a residual update on the
// incoming per-point features
template <typename S>
VoteNodes<S> vote_forward(Graph<S>& g, const ParamStore<S>& store, typename Graph<S>::Id point_features) {
  auto x = detail::linear_relu(g, store, "vote.trunk.l1", point_features);
  x = detail::linear_relu(g, store, "vote.trunk.l2", x);
  auto head = [&](const std::string& name) {
    return g.bias_add(g.matmul(x, g.param(name + ".w", store.at(name + ".w"))),
                      g.param(name + ".b", store.at(name + ".b")));
  };
  VoteNodes<S> out;
  out.seg = g.softmax(g.scale(head("vote.seg"), static_cast<S>(kSegLogitGain)), 1);
  out.offsets = head("vote.offset");
  out.features = g.add(point_features, head("vote.feat"));
  return out;
}

// c_k and q_k are seg-score-weighted means of votes and features; a joint whose
// peak score stays below the threshold counts as occluded and is zeroed
// (gradients flow through the zeroed rows as zero)
template <typename S>
ClusterNodes<S> cluster_votes(Graph<S>& g, typename Graph<S>::Id points, const VoteNodes<S>& votes) {
  const auto vote_positions = g.add(points, votes.offsets);
  const auto raw_positions = g.scatter_weighted_mean(vote_positions, votes.seg);
  const auto raw_features = g.scatter_weighted_mean(votes.features, votes.seg);

  const Tensor<S>& seg = g.value(votes.seg);
  const int64_t N = seg.shape[0], K = seg.shape[1];
  ClusterNodes<S> out;
  out.visible.resize(static_cast<size_t>(K));
  out.confidence.resize(static_cast<size_t>(K));
  Tensor<S> mask({K});
  for (int64_t k = 0; k < K; ++k) {
    double conf = 0.0;
    for (int64_t i = 0; i < N; ++i) conf = std::max(conf, static_cast<double>(seg.at(i, k)));
    out.confidence[static_cast<size_t>(k)] = conf;
    out.visible[static_cast<size_t>(k)] = conf >= kVisibilityThreshold;
    mask.at(k) = out.visible[static_cast<size_t>(k)] ? S(1) : S(0);
  }
  const auto mask_node = g.constant(mask);
  out.positions = g.scale_rows(raw_positions, mask_node);
  out.features = g.scale_rows(raw_features, mask_node);
  return out;
}

// joints exchange information through a flattened two-layer perceptron so that
// occluded entries are inferred from visible ones; a final shared linear layer
// reads completed positions off the completed features
template <typename S>
CompletionNodes<S> complete_joints(Graph<S>& g, const ParamStore<S>& store, const ClusterNodes<S>& cluster) {
  const auto& pos_shape = g.value(cluster.positions).shape;
  const int64_t K = pos_shape[0];
  auto x = g.concat({cluster.positions, cluster.features}, 1);  // [K, 3 + F1]
  x = g.reshape(x, {1, K * (3 + kPointFeatureDim)});
  x = detail::linear_relu(g, store, "complete.l1", x);
  x = g.bias_add(g.matmul(x, g.param("complete.l2.w", store.at("complete.l2.w"))),
                 g.param("complete.l2.b", store.at("complete.l2.b")));
  CompletionNodes<S> out;
  out.features = g.reshape(x, {K, kGlobalFeatureDim});
  out.positions = g.bias_add(g.matmul(out.features, g.param("complete.pos.w", store.at("complete.pos.w"))),
                             g.param("complete.pos.b", store.at("complete.pos.b")));
  return out;
}

}  // namespace votebody
