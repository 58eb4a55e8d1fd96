#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "votebody/body_model.hpp"
#include "votebody/graph.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

// Training objective: a vote-generation term (segmentation + offset
// regression), a parameter term (l1 to ground truth + rotation
// orthogonality), and a model-fit term (vertex l1 + directional chamfer +
// skeleton l1). Sub-term weights live inside the three groups; the group
// weights combine them into the total.
struct LossWeights {
  double l1 = 1.0;    // vote-generation group
  double l2 = 10.0;   // parameter-regularization group
  double l3 = 10.0;   // model-fit group
  double l11 = 0.1;   // vote offset regression
  double l12 = 1.0;   // segmentation cross-entropy
  double l21 = 1.0;   // l1 to ground-truth parameters (0 disables supervision)
  double l22 = 1.0;   // rotation orthogonality
  double l31 = 1.0;   // per-vertex l1
  double l32 = 1.0;   // chamfer, input points to predicted vertices
  double l33 = 1.0;   // skeleton l1 (clustered masked by visibility + completed)
};

// cross-entropy of per-point part scores against hard labels, averaged over
// points (the offset term below averages too, so the two stay comparable
// across cloud sizes); zero scores are clamped at 1e-12 before the log
template <typename S>
typename Graph<S>::Id seg_loss(Graph<S>& g, typename Graph<S>::Id seg_scores,
                               const std::vector<int64_t>& gt_labels) {
  const auto& s = g.value(seg_scores);
  if (s.rank() != 2 || s.shape[0] != static_cast<int64_t>(gt_labels.size()))
    throw std::invalid_argument("seg_loss: scores " + shape_str(s.shape) + " do not match " +
                                std::to_string(gt_labels.size()) + " labels");
  const int64_t N = s.shape[0], K = s.shape[1];
  Tensor<S> onehot({N, K});
  for (int64_t i = 0; i < N; ++i) {
    const int64_t t = gt_labels[static_cast<size_t>(i)];
    if (t < 0 || t >= K) throw std::invalid_argument("seg_loss: label out of range");
    onehot.at(i, t) = S(1);
  }
  const auto picked = g.mul(g.log_clamped(seg_scores), g.constant(onehot));
  return g.scale(g.reduce_sum(picked), -1.0 / static_cast<double>(N));
}

// mean elementwise smooth-l1 between predicted offsets and the ground-truth
// point-to-joint offsets (quadratic inside unit residuals, linear outside)
template <typename S>
typename Graph<S>::Id vote_reg_loss(Graph<S>& g, typename Graph<S>::Id offsets,
                                    const Tensor<S>& gt_offsets) {
  // note: node handles, never references into the graph, survive node creation
  const Shape o_shape = g.value(offsets).shape;
  if (o_shape != gt_offsets.shape)
    throw std::invalid_argument("vote_reg_loss: offsets " + shape_str(o_shape) + " vs gt " +
                                shape_str(gt_offsets.shape));
  const auto residual = g.sub(offsets, g.constant(gt_offsets));
  return g.scale(g.reduce_sum(g.smooth_l1(residual)), 1.0 / static_cast<double>(o_shape[0]));
}

template <typename S>
struct VoteGenNodes {
  typename Graph<S>::Id seg;
  typename Graph<S>::Id vote_reg;
  typename Graph<S>::Id total;  // l11 * vote_reg + l12 * seg
};

template <typename S>
VoteGenNodes<S> vote_gen_loss(Graph<S>& g, typename Graph<S>::Id seg_scores,
                              const std::vector<int64_t>& gt_labels, typename Graph<S>::Id offsets,
                              const Tensor<S>& gt_offsets, const LossWeights& w) {
  VoteGenNodes<S> out;
  out.seg = seg_loss(g, seg_scores, gt_labels);
  out.vote_reg = vote_reg_loss(g, offsets, gt_offsets);
  out.total = g.add(g.scale(out.vote_reg, w.l11), g.scale(out.seg, w.l12));
  return out;
}

// flatten root + local rotations into one row-major [K, 9] block, the layout
// the regressor heads emit
template <typename S>
Tensor<S> stack_rotations(const BodyParams<S>& p) {
  const int64_t K = p.num_joints();
  Tensor<S> out({K, 9});
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.at(0, 3 * r + c) = p.root_rotation.at(r, c);
  for (int64_t k = 1; k < K; ++k)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.at(k, 3 * r + c) = p.local_rotations.at(k - 1, r, c);
  return out;
}

template <typename S>
struct ParamRegNodes {
  typename Graph<S>::Id gt_l1;  // ||betas - betas*||_1 + sum_k ||R_k - R_k*||_1
  typename Graph<S>::Id orth;   // sum_k ||R_k R_k^T - I||_F
  typename Graph<S>::Id total;  // l21 * gt_l1 + l22 * orth
};

// betas: [1, 10]; rotations: [K, 9] rows of row-major 3x3 entries
template <typename S>
ParamRegNodes<S> param_reg_loss(Graph<S>& g, typename Graph<S>::Id betas, const Tensor<S>& gt_betas,
                                typename Graph<S>::Id rotations, const Tensor<S>& gt_rotations,
                                const LossWeights& w) {
  const auto& r = g.value(rotations);
  if (r.rank() != 2 || r.shape[1] != 9)
    throw std::invalid_argument("param_reg_loss: rotations must be Kx9, got " + shape_str(r.shape));
  if (r.shape != gt_rotations.shape)
    throw std::invalid_argument("param_reg_loss: rotation shapes disagree");
  const int64_t K = r.shape[0];

  ParamRegNodes<S> out;
  Tensor<S> gt_beta_row({1, g.value(betas).shape[1]});
  for (int64_t i = 0; i < gt_beta_row.shape[1]; ++i) gt_beta_row.at(0, i) = gt_betas.data[static_cast<size_t>(i)];
  out.gt_l1 = g.add(g.l1_norm(g.sub(betas, g.constant(gt_beta_row))),
                    g.l1_norm(g.sub(rotations, g.constant(gt_rotations))));

  Tensor<S> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = S(1);
  typename Graph<S>::Id orth = -1;
  for (int64_t k = 0; k < K; ++k) {
    const auto rk = g.reshape(g.gather_rows(rotations, {k}), {3, 3});
    const auto term = g.frobenius_norm(g.sub(g.matmul(rk, g.transpose(rk)), g.constant(eye)));
    orth = (k == 0) ? term : g.add(orth, term);
  }
  out.orth = orth;
  out.total = g.add(g.scale(out.gt_l1, w.l21), g.scale(out.orth, w.l22));
  return out;
}

template <typename S>
struct ModelFitNodes {
  typename Graph<S>::Id vertex;    // (1/M) l1 between meshes
  typename Graph<S>::Id chamfer;   // mean nearest-vertex distance, points -> mesh
  typename Graph<S>::Id skeleton;  // (1/K) [ l1(mask o (c - c*)) + l1(completed - c*) ]
  typename Graph<S>::Id total;     // l31 * vertex + l32 * chamfer + l33 * skeleton
};

// clustered joints contribute only where visible (occluded clusters carry no
// signal); completed joints are penalized everywhere
template <typename S>
ModelFitNodes<S> model_fit_loss(Graph<S>& g, typename Graph<S>::Id pred_vertices,
                                const Tensor<S>& gt_vertices, const Tensor<S>& points,
                                typename Graph<S>::Id clustered, typename Graph<S>::Id completed,
                                const Tensor<S>& gt_joints, const std::vector<bool>& visible,
                                const LossWeights& w) {
  const Shape v_shape = g.value(pred_vertices).shape;
  if (v_shape != gt_vertices.shape)
    throw std::invalid_argument("model_fit_loss: mesh shapes disagree: " + shape_str(v_shape) + " vs " +
                                shape_str(gt_vertices.shape));
  const int64_t K = gt_joints.shape[0];
  if (static_cast<int64_t>(visible.size()) != K)
    throw std::invalid_argument("model_fit_loss: visibility size does not match joint count");

  ModelFitNodes<S> out;
  out.vertex = g.scale(g.l1_norm(g.sub(pred_vertices, g.constant(gt_vertices))),
                       1.0 / static_cast<double>(v_shape[0]));
  out.chamfer = g.chamfer(g.constant(points), pred_vertices);

  Tensor<S> mask({K});
  for (int64_t k = 0; k < K; ++k) mask.at(k) = visible[static_cast<size_t>(k)] ? S(1) : S(0);
  const auto gt_c = g.constant(gt_joints);
  const auto masked = g.scale_rows(g.sub(clustered, gt_c), g.constant(mask));
  out.skeleton = g.scale(g.add(g.l1_norm(masked), g.l1_norm(g.sub(completed, gt_c))),
                         1.0 / static_cast<double>(K));
  out.total = g.add(g.add(g.scale(out.vertex, w.l31), g.scale(out.chamfer, w.l32)),
                    g.scale(out.skeleton, w.l33));
  return out;
}

template <typename S>
typename Graph<S>::Id total_loss(Graph<S>& g, const VoteGenNodes<S>& vg, const ParamRegNodes<S>& pr,
                                 const ModelFitNodes<S>& mf, const LossWeights& w) {
  return g.add(g.add(g.scale(vg.total, w.l1), g.scale(pr.total, w.l2)), g.scale(mf.total, w.l3));
}

}  // namespace votebody
