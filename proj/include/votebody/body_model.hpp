#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "votebody/checkpoint.hpp"
#include "votebody/graph.hpp"
#include "votebody/rng.hpp"
#include "votebody/rotation.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

inline constexpr int64_t kShapeDims = 10;

// Parametric body: template mesh deformed by a linear shape basis, skeleton
// regressed from vertices, posed by per-joint rotations via blend skinning.
// Joints are ordered so that every parent index is smaller than its child
// (root at index 0, parents[0] == 0).
template <typename S>
struct BodyModel {
  Tensor<S> template_vertices;  // M x 3
  Tensor<S> shape_basis;        // M x 3 x S
  Tensor<S> joint_regressor;    // K x M, rows on the simplex
  Tensor<S> skinning_weights;   // M x K, rows on the simplex
  std::vector<int64_t> parents;       // K
  std::vector<int64_t> part_labels;   // M, in [0, K)
  std::vector<int64_t> faces;         // 3T flat triangle indices
  std::vector<int64_t> eval_subset;   // indices into vertices

  int64_t num_vertices() const { return template_vertices.shape[0]; }
  int64_t num_joints() const { return static_cast<int64_t>(parents.size()); }
  int64_t num_faces() const { return static_cast<int64_t>(faces.size()) / 3; }

  void validate() const {
    const int64_t M = num_vertices(), K = num_joints();
    if (template_vertices.rank() != 2 || template_vertices.shape[1] != 3)
      throw std::invalid_argument("template must be Mx3, got " + shape_str(template_vertices.shape));
    if (shape_basis.shape != Shape{M, 3, kShapeDims})
      throw std::invalid_argument("shape basis must be Mx3x" + std::to_string(kShapeDims) + ", got " +
                                  shape_str(shape_basis.shape));
    if (joint_regressor.shape != Shape{K, M})
      throw std::invalid_argument("joint regressor must be KxM, got " + shape_str(joint_regressor.shape));
    if (skinning_weights.shape != Shape{M, K})
      throw std::invalid_argument("skinning weights must be MxK, got " + shape_str(skinning_weights.shape));
    int roots = 0;
    for (int64_t k = 0; k < K; ++k) {
      if (parents[static_cast<size_t>(k)] == k) ++roots;
      else if (parents[static_cast<size_t>(k)] > k || parents[static_cast<size_t>(k)] < 0)
        throw std::invalid_argument("parents must be topologically ordered (parent < child)");
    }
    if (roots != 1 || parents[0] != 0)
      throw std::invalid_argument("kinematic tree must have exactly one root at index 0");
    for (int64_t k = 0; k < K; ++k) {
      double sum = 0.0;
      for (int64_t m = 0; m < M; ++m) sum += static_cast<double>(joint_regressor.at(k, m));
      if (std::fabs(sum - 1.0) > 1e-5)
        throw std::invalid_argument("joint regressor row " + std::to_string(k) + " sums to " +
                                    std::to_string(sum));
    }
    for (int64_t m = 0; m < M; ++m) {
      double sum = 0.0;
      for (int64_t k = 0; k < K; ++k) sum += static_cast<double>(skinning_weights.at(m, k));
      if (std::fabs(sum - 1.0) > 1e-5)
        throw std::invalid_argument("skinning row " + std::to_string(m) + " sums to " + std::to_string(sum));
    }
    if (static_cast<int64_t>(part_labels.size()) != M)
      throw std::invalid_argument("part label count mismatch");
    for (int64_t l : part_labels)
      if (l < 0 || l >= K) throw std::invalid_argument("part label out of range: " + std::to_string(l));
    for (int64_t f : faces)
      if (f < 0 || f >= M) throw std::invalid_argument("face index out of range: " + std::to_string(f));
    for (int64_t e : eval_subset)
      if (e < 0 || e >= M) throw std::invalid_argument("eval subset index out of range: " + std::to_string(e));
  }

  template <typename T>
  BodyModel<T> cast() const {
    BodyModel<T> o;
    o.template_vertices = template_vertices.template cast<T>();
    o.shape_basis = shape_basis.template cast<T>();
    o.joint_regressor = joint_regressor.template cast<T>();
    o.skinning_weights = skinning_weights.template cast<T>();
    o.parents = parents;
    o.part_labels = part_labels;
    o.faces = faces;
    o.eval_subset = eval_subset;
    return o;
  }
};

// Pose/shape state: betas (10), root rotation, K-1 local rotations in joint
// order, then a world translation applied last.
template <typename S>
struct BodyParams {
  Tensor<S> betas;            // {10}
  Tensor<S> root_rotation;    // {3,3}
  Tensor<S> local_rotations;  // {K-1,3,3}
  Tensor<S> translation;      // {3}

  static BodyParams identity(int64_t num_joints) {
    BodyParams p;
    p.betas = Tensor<S>({kShapeDims});
    p.root_rotation = tensor_from_mat3<S>(mat3_identity());
    p.local_rotations = Tensor<S>({num_joints - 1, 3, 3});
    for (int64_t k = 0; k + 1 < num_joints; ++k)
      for (int i = 0; i < 3; ++i) p.local_rotations.at(k, i, i) = S(1);
    p.translation = Tensor<S>({3});
    return p;
  }

  int64_t num_joints() const { return local_rotations.shape[0] + 1; }

  // finalized-for-mesh-generation invariant: near-orthogonal rotations
  void validate(double orth_tol = 1e-3) const {
    if (betas.shape != Shape{kShapeDims})
      throw std::invalid_argument("betas must have " + std::to_string(kShapeDims) + " entries, got " +
                                  shape_str(betas.shape));
    if (!betas.all_finite() || !root_rotation.all_finite() || !local_rotations.all_finite() ||
        !translation.all_finite())
      throw std::invalid_argument("non-finite body parameter");
    const double e0 = orthogonality_error(mat3_from_tensor(root_rotation));
    if (e0 >= orth_tol)
      throw std::invalid_argument("root rotation violates orthogonality: error " + std::to_string(e0));
    for (int64_t k = 0; k < local_rotations.shape[0]; ++k) {
      const double e = orthogonality_error(mat3_from_tensor(local_rotations, k));
      if (e >= orth_tol)
        throw std::invalid_argument("rotation " + std::to_string(k + 1) + " violates orthogonality: error " +
                                    std::to_string(e));
    }
  }
};

template <typename S>
struct Posed {
  Tensor<S> vertices;  // M x 3
  Tensor<S> joints;    // K x 3
};

// shaped = template + basis . betas ; rest joints = regressor . shaped
template <typename S>
Posed<S> shape_blend(const BodyModel<S>& model, const Tensor<S>& betas) {
  if (betas.shape != Shape{kShapeDims})
    throw std::invalid_argument("betas must have " + std::to_string(kShapeDims) + " entries, got " +
                                shape_str(betas.shape));
  const int64_t M = model.num_vertices(), K = model.num_joints();
  Posed<S> out;
  out.vertices = model.template_vertices;
  for (int64_t m = 0; m < M; ++m)
    for (int64_t c = 0; c < 3; ++c) {
      double acc = static_cast<double>(out.vertices.at(m, c));
      for (int64_t s = 0; s < kShapeDims; ++s)
        acc += static_cast<double>(model.shape_basis.at(m, c, s)) * static_cast<double>(betas.at(s));
      out.vertices.at(m, c) = static_cast<S>(acc);
    }
  out.joints = Tensor<S>({K, 3});
  for (int64_t k = 0; k < K; ++k)
    for (int64_t c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int64_t m = 0; m < M; ++m)
        acc += static_cast<double>(model.joint_regressor.at(k, m)) * static_cast<double>(out.vertices.at(m, c));
      out.joints.at(k, c) = static_cast<S>(acc);
    }
  return out;
}

// Forward kinematics + linear blend skinning on the value path (double
// internals). Joint k's world transform composes its parent's; vertices are
// convex combinations of per-joint rigid motions of the shaped rest pose;
// translation is added last.
template <typename S>
Posed<S> lbs_forward(const BodyModel<S>& model, const BodyParams<S>& params) {
  params.validate();
  if (params.num_joints() != model.num_joints())
    throw std::invalid_argument("params have " + std::to_string(params.num_joints()) + " joints, model has " +
                                std::to_string(model.num_joints()));
  const int64_t M = model.num_vertices(), K = model.num_joints();
  const Posed<S> rest = shape_blend(model, params.betas);

  std::vector<Mat3> rw(static_cast<size_t>(K));
  std::vector<std::array<double, 3>> cw(static_cast<size_t>(K));
  std::vector<std::array<double, 3>> j(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k)
    j[static_cast<size_t>(k)] = {static_cast<double>(rest.joints.at(k, 0)),
                                 static_cast<double>(rest.joints.at(k, 1)),
                                 static_cast<double>(rest.joints.at(k, 2))};
  rw[0] = mat3_from_tensor(params.root_rotation);
  cw[0] = j[0];
  for (int64_t k = 1; k < K; ++k) {
    const auto p = static_cast<size_t>(model.parents[static_cast<size_t>(k)]);
    const Mat3 rk = mat3_from_tensor(params.local_rotations, k - 1);
    rw[static_cast<size_t>(k)] = mat3_mul(rw[p], rk);
    const std::array<double, 3> d = {j[static_cast<size_t>(k)][0] - j[p][0], j[static_cast<size_t>(k)][1] - j[p][1],
                                     j[static_cast<size_t>(k)][2] - j[p][2]};
    const auto rd = mat3_apply(rw[p], d);
    cw[static_cast<size_t>(k)] = {rd[0] + cw[p][0], rd[1] + cw[p][1], rd[2] + cw[p][2]};
  }

  const std::array<double, 3> t = {static_cast<double>(params.translation.at(0)),
                                   static_cast<double>(params.translation.at(1)),
                                   static_cast<double>(params.translation.at(2))};
  Posed<S> out;
  out.vertices = Tensor<S>({M, 3});
  out.joints = Tensor<S>({K, 3});
  for (int64_t k = 0; k < K; ++k)
    for (int64_t c = 0; c < 3; ++c)
      out.joints.at(k, c) = static_cast<S>(cw[static_cast<size_t>(k)][static_cast<size_t>(c)] + t[static_cast<size_t>(c)]);
  for (int64_t m = 0; m < M; ++m) {
    const std::array<double, 3> v = {static_cast<double>(rest.vertices.at(m, 0)),
                                     static_cast<double>(rest.vertices.at(m, 1)),
                                     static_cast<double>(rest.vertices.at(m, 2))};
    std::array<double, 3> acc = {0, 0, 0};
    for (int64_t k = 0; k < K; ++k) {
      const double w = static_cast<double>(model.skinning_weights.at(m, k));
      if (w == 0.0) continue;
      const auto& ck = cw[static_cast<size_t>(k)];
      const std::array<double, 3> shifted = {v[0] - j[static_cast<size_t>(k)][0], v[1] - j[static_cast<size_t>(k)][1],
                                             v[2] - j[static_cast<size_t>(k)][2]};
      const auto rv = mat3_apply(rw[static_cast<size_t>(k)], shifted);
      for (int c = 0; c < 3; ++c) acc[static_cast<size_t>(c)] += w * (rv[static_cast<size_t>(c)] + ck[static_cast<size_t>(c)]);
    }
    for (int c = 0; c < 3; ++c)
      out.vertices.at(m, c) = static_cast<S>(acc[static_cast<size_t>(c)] + t[static_cast<size_t>(c)]);
  }
  if (!out.vertices.all_finite() || !out.joints.all_finite())
    throw std::runtime_error("skinning produced non-finite output");
  return out;
}

template <typename S>
Tensor<S> eval_subset_vertices(const BodyModel<S>& model, const Tensor<S>& vertices) {
  Tensor<S> out({static_cast<int64_t>(model.eval_subset.size()), 3});
  for (size_t i = 0; i < model.eval_subset.size(); ++i) {
    const int64_t v = model.eval_subset[i];
    if (v < 0 || v >= vertices.shape[0])
      throw std::invalid_argument("eval subset index " + std::to_string(v) + " out of range");
    for (int64_t c = 0; c < 3; ++c) out.at(static_cast<int64_t>(i), c) = vertices.at(v, c);
  }
  return out;
}

// ---- differentiable path -------------------------------------------------

template <typename S>
struct ShapeBlendNodes {
  typename Graph<S>::Id vertices;  // {M,3}
  typename Graph<S>::Id joints;    // {K,3}
};

template <typename S>
ShapeBlendNodes<S> shape_blend_graph(Graph<S>& g, const BodyModel<S>& model, typename Graph<S>::Id betas) {
  const int64_t M = model.num_vertices();
  Tensor<S> basis2d = model.shape_basis;
  basis2d.shape = {M * 3, kShapeDims};
  auto disp = g.matmul(g.constant(std::move(basis2d)), g.reshape(betas, {kShapeDims, 1}));
  auto verts = g.add(g.constant(model.template_vertices), g.reshape(disp, {M, 3}));
  auto joints = g.matmul(g.constant(model.joint_regressor), verts);
  return {verts, joints};
}

template <typename S>
struct LbsNodes {
  typename Graph<S>::Id vertices;  // {M,3}
  typename Graph<S>::Id joints;    // {K,3}
};

// Graph version of lbs_forward. root9 is the vectorized root rotation {9} (or
// {1,9}/{3,3}); locals9 rows are the vectorized non-root rotations {K-1,9};
// translation {3} is optional (negative id = none).
template <typename S>
LbsNodes<S> lbs_graph(Graph<S>& g, const BodyModel<S>& model, const ShapeBlendNodes<S>& rest,
                      typename Graph<S>::Id root9, typename Graph<S>::Id locals9,
                      typename Graph<S>::Id translation = -1) {
  using Id = typename Graph<S>::Id;
  const int64_t M = model.num_vertices(), K = model.num_joints();
  const auto ones_m = g.constant(Tensor<S>::full({M, 1}, S(1)));

  std::vector<Id> rw(static_cast<size_t>(K));   // {3,3} world rotations
  std::vector<Id> cw(static_cast<size_t>(K));   // {1,3} world joint positions
  rw[0] = g.reshape(root9, {3, 3});
  cw[0] = g.gather_rows(rest.joints, {0});
  for (int64_t k = 1; k < K; ++k) {
    const auto p = static_cast<size_t>(model.parents[static_cast<size_t>(k)]);
    const auto rk = g.reshape(g.gather_rows(locals9, {k - 1}), {3, 3});
    rw[static_cast<size_t>(k)] = g.matmul(rw[p], rk);
    const auto jk = g.gather_rows(rest.joints, {k});
    const auto jp = g.gather_rows(rest.joints, {static_cast<int64_t>(p)});
    const auto d = g.matmul(g.sub(jk, jp), g.transpose(rw[p]));
    cw[static_cast<size_t>(k)] = g.add(d, cw[p]);
  }

  Id skinned = -1;
  for (int64_t k = 0; k < K; ++k) {
    const auto jk_rep = g.matmul(ones_m, g.gather_rows(rest.joints, {k}));
    const auto rotated = g.matmul(g.sub(rest.vertices, jk_rep), g.transpose(rw[static_cast<size_t>(k)]));
    const auto ck_rep = g.matmul(ones_m, cw[static_cast<size_t>(k)]);
    Tensor<S> wcol({M});
    for (int64_t m = 0; m < M; ++m) wcol.at(m) = model.skinning_weights.at(m, k);
    const auto contrib = g.scale_rows(g.add(rotated, ck_rep), g.constant(std::move(wcol)));
    skinned = (skinned < 0) ? contrib : g.add(skinned, contrib);
  }

  auto joints = g.concat(cw, 0);
  if (translation >= 0) {
    const auto t_row = g.reshape(translation, {1, 3});
    skinned = g.add(skinned, g.matmul(ones_m, t_row));
    joints = g.add(joints, g.matmul(g.constant(Tensor<S>::full({K, 1}, S(1))), t_row));
  }
  return {skinned, joints};
}

// ---- deterministic toy body ----------------------------------------------

namespace detail {

inline double point_segment_dist(const std::array<double, 3>& p, const std::array<double, 3>& a,
                                 const std::array<double, 3>& b) {
  const std::array<double, 3> ab = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const std::array<double, 3> ap = {p[0] - a[0], p[1] - a[1], p[2] - a[2]};
  const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
  double t = len2 > 0.0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = p[static_cast<size_t>(c)] - (a[static_cast<size_t>(c)] + t * ab[static_cast<size_t>(c)]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace detail

// Capsule-limb body on a heap-shaped kinematic tree: joint k's parent is
// (k-1)/2, bones shrink geometrically with depth, vertices form twisted tube
// rings around each bone. Deterministic per (num_joints, num_vertices, seed).
template <typename S = float>
BodyModel<S> make_toy_model(int64_t num_joints, int64_t num_vertices, uint64_t seed) {
  if (num_joints < 2) throw std::invalid_argument("toy model needs at least 2 joints");
  if (num_vertices < 4 * num_joints)
    throw std::invalid_argument("toy model needs at least 4 vertices per joint, got " +
                                std::to_string(num_vertices) + " for " + std::to_string(num_joints) +
                                " joints");
  const int64_t K = num_joints, M = num_vertices;
  constexpr double kGolden = 2.399963229728653;
  Rng rng(seed);

  std::vector<int64_t> parents(static_cast<size_t>(K));
  std::vector<int> depth(static_cast<size_t>(K), 0);
  parents[0] = 0;
  for (int64_t k = 1; k < K; ++k) {
    parents[static_cast<size_t>(k)] = (k - 1) / 2;
    depth[static_cast<size_t>(k)] = depth[static_cast<size_t>(parents[static_cast<size_t>(k)])] + 1;
  }

  // joint skeleton: upward-biased limbs fanned by golden-angle azimuth
  std::vector<std::array<double, 3>> joints(static_cast<size_t>(K));
  joints[0] = {0.0, 0.0, 0.0};
  for (int64_t k = 1; k < K; ++k) {
    const double az = static_cast<double>(k) * kGolden + rng.uniform(-0.3, 0.3);
    const double polar = rng.uniform(0.25, 0.95);
    const double len = 0.32 * std::pow(0.85, depth[static_cast<size_t>(k)] - 1);
    const auto& jp = joints[static_cast<size_t>(parents[static_cast<size_t>(k)])];
    joints[static_cast<size_t>(k)] = {jp[0] + len * std::sin(polar) * std::cos(az),
                                      jp[1] + len * std::sin(polar) * std::sin(az),
                                      jp[2] + len * std::cos(polar)};
  }

  // per-part bone segments (part 0 = a short vertical stub at the root)
  std::vector<std::array<double, 3>> seg_a(static_cast<size_t>(K)), seg_b(static_cast<size_t>(K));
  std::vector<double> radius(static_cast<size_t>(K));
  seg_a[0] = {0.0, 0.0, -0.08};
  seg_b[0] = {0.0, 0.0, 0.08};
  radius[0] = 0.06;
  for (int64_t k = 1; k < K; ++k) {
    seg_a[static_cast<size_t>(k)] = joints[static_cast<size_t>(parents[static_cast<size_t>(k)])];
    seg_b[static_cast<size_t>(k)] = joints[static_cast<size_t>(k)];
    radius[static_cast<size_t>(k)] = 0.06 * std::pow(0.9, depth[static_cast<size_t>(k)]);
  }

  // vertex budget per part
  std::vector<int64_t> count(static_cast<size_t>(K), M / K);
  for (int64_t k = 0; k < M % K; ++k) ++count[static_cast<size_t>(k)];

  Tensor<S> tmpl({M, 3});
  std::vector<int64_t> faces;
  int64_t vbase = 0;
  for (int64_t k = 0; k < K; ++k) {
    const int64_t m = count[static_cast<size_t>(k)];
    const int64_t W = std::clamp<int64_t>(m / 4, 3, 6);
    const int64_t rows = m / W;
    const int64_t extra = m - rows * W;
    const auto &a = seg_a[static_cast<size_t>(k)], &b = seg_b[static_cast<size_t>(k)];
    std::array<double, 3> axis = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const double alen = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    for (auto& v : axis) v /= alen;
    // orthonormal frame around the bone
    std::array<double, 3> ref = std::fabs(axis[2]) < 0.9 ? std::array<double, 3>{0, 0, 1}
                                                         : std::array<double, 3>{1, 0, 0};
    std::array<double, 3> u = {axis[1] * ref[2] - axis[2] * ref[1], axis[2] * ref[0] - axis[0] * ref[2],
                               axis[0] * ref[1] - axis[1] * ref[0]};
    const double ulen = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    for (auto& x : u) x /= ulen;
    const std::array<double, 3> w = {axis[1] * u[2] - axis[2] * u[1], axis[2] * u[0] - axis[0] * u[2],
                                     axis[0] * u[1] - axis[1] * u[0]};
    const double r = radius[static_cast<size_t>(k)];
    auto emit = [&](int64_t slot, double t, double ang, double rad) {
      for (int c = 0; c < 3; ++c)
        tmpl.at(vbase + slot, c) =
            static_cast<S>(a[static_cast<size_t>(c)] + t * (b[static_cast<size_t>(c)] - a[static_cast<size_t>(c)]) +
                           rad * (std::cos(ang) * u[static_cast<size_t>(c)] + std::sin(ang) * w[static_cast<size_t>(c)]));
    };
    for (int64_t row = 0; row < rows; ++row) {
      const double t = rows > 1 ? static_cast<double>(row) / static_cast<double>(rows - 1) : 0.5;
      const double twist = 0.35 * static_cast<double>(row);
      for (int64_t c = 0; c < W; ++c)
        emit(row * W + c, t, 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(W) + twist, r);
    }
    for (int64_t e = 0; e < extra; ++e)  // leftover vertices ring the far cap
      emit(rows * W + e, 1.0, 2.0 * M_PI * (static_cast<double>(e) + 0.5) / static_cast<double>(extra), 0.5 * r);
    for (int64_t row = 0; row + 1 < rows; ++row)
      for (int64_t c = 0; c < W; ++c) {
        const int64_t i0 = vbase + row * W + c;
        const int64_t i1 = vbase + row * W + (c + 1) % W;
        const int64_t i2 = i0 + W;
        const int64_t i3 = i1 + W;
        faces.insert(faces.end(), {i0, i1, i2});
        faces.insert(faces.end(), {i1, i3, i2});
      }
    vbase += m;
  }

  // skinning from inverse bone proximity (top 4), labels from the nearest bone
  Tensor<S> skin({M, K});
  std::vector<int64_t> labels(static_cast<size_t>(M));
  for (int64_t i = 0; i < M; ++i) {
    const std::array<double, 3> p = {static_cast<double>(tmpl.at(i, 0)), static_cast<double>(tmpl.at(i, 1)),
                                     static_cast<double>(tmpl.at(i, 2))};
    std::vector<std::pair<double, int64_t>> prox(static_cast<size_t>(K));
    for (int64_t k = 0; k < K; ++k) {
      const double d = detail::point_segment_dist(p, seg_a[static_cast<size_t>(k)], seg_b[static_cast<size_t>(k)]);
      const double q = 1.0 / ((d * d + 1e-4) * (d * d + 1e-4));
      prox[static_cast<size_t>(k)] = {q, k};
    }
    labels[static_cast<size_t>(i)] =
        std::max_element(prox.begin(), prox.end(),
                         [](const auto& x, const auto& y) {
                           return x.first < y.first || (x.first == y.first && x.second > y.second);
                         })
            ->second;
    std::partial_sort(prox.begin(), prox.begin() + std::min<int64_t>(4, K), prox.end(),
                      [](const auto& x, const auto& y) { return x.first > y.first; });
    double sum = 0.0;
    const int64_t top = std::min<int64_t>(4, K);
    for (int64_t t = 0; t < top; ++t) sum += prox[static_cast<size_t>(t)].first;
    for (int64_t t = 0; t < top; ++t)
      skin.at(i, prox[static_cast<size_t>(t)].second) = static_cast<S>(prox[static_cast<size_t>(t)].first / sum);
  }

  // joint regressor: gaussian vertex weights around each joint
  Tensor<S> regressor({K, M});
  constexpr double kSigma = 0.08;
  for (int64_t k = 0; k < K; ++k) {
    double sum = 0.0;
    std::vector<double> wts(static_cast<size_t>(M));
    for (int64_t i = 0; i < M; ++i) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(tmpl.at(i, c)) - joints[static_cast<size_t>(k)][static_cast<size_t>(c)];
        d2 += d * d;
      }
      wts[static_cast<size_t>(i)] = std::exp(-d2 / (2.0 * kSigma * kSigma)) + 1e-12;
      sum += wts[static_cast<size_t>(i)];
    }
    for (int64_t i = 0; i < M; ++i) regressor.at(k, i) = static_cast<S>(wts[static_cast<size_t>(i)] / sum);
  }

  // smooth global deformation fields
  double zmin = 1e30, zmax = -1e30;
  for (int64_t i = 0; i < M; ++i) {
    zmin = std::min(zmin, static_cast<double>(tmpl.at(i, 2)));
    zmax = std::max(zmax, static_cast<double>(tmpl.at(i, 2)));
  }
  const double zspan = std::max(zmax - zmin, 1e-6);
  Tensor<S> basis({M, 3, kShapeDims});
  for (int64_t i = 0; i < M; ++i) {
    const double x = static_cast<double>(tmpl.at(i, 0));
    const double y = static_cast<double>(tmpl.at(i, 1));
    const double z = static_cast<double>(tmpl.at(i, 2));
    const double zn = (z - zmin) / zspan;  // 0 at feet, 1 at crown
    const double tw = 0.25 * (zn - 0.5);
    const std::array<std::array<double, 3>, kShapeDims> fields = {{
        {0.0, 0.0, 0.08 * (z - 0.5 * (zmin + zmax))},           // axial stretch
        {0.08 * x, 0.08 * y, 0.0},                              // uniform girth
        {0.06 * x * zn, 0.06 * y * zn, 0.0},                    // taper toward the top
        {0.05 * std::sin(M_PI * zn), 0.0, 0.0},                 // bend in x
        {0.0, 0.05 * std::sin(M_PI * zn), 0.0},                 // bend in y
        {x * std::cos(tw) - y * std::sin(tw) - x,               // twist about z
         x * std::sin(tw) + y * std::cos(tw) - y, 0.0},
        {0.06 * std::sin(2.0 * M_PI * zn) * x, 0.06 * std::sin(2.0 * M_PI * zn) * y, 0.0},  // bulge wave
        {0.06 * (zn - 0.5), 0.0, 0.0},                          // shear in x
        {0.0, 0.0, 0.04 * std::sin(2.0 * M_PI * zn)},           // axial ripple
        {0.04 * std::cos(3.0 * M_PI * zn) * x, 0.04 * std::cos(3.0 * M_PI * zn) * y, 0.0},  // fine girth wave
    }};
    for (int64_t s = 0; s < kShapeDims; ++s)
      for (int64_t c = 0; c < 3; ++c)
        basis.at(i, c, s) = static_cast<S>(fields[static_cast<size_t>(s)][static_cast<size_t>(c)]);
  }

  BodyModel<S> model;
  model.template_vertices = std::move(tmpl);
  model.shape_basis = std::move(basis);
  model.joint_regressor = std::move(regressor);
  model.skinning_weights = std::move(skin);
  model.parents = std::move(parents);
  model.part_labels = std::move(labels);
  model.faces = std::move(faces);
  for (int64_t i = 0; i < M; i += 2) model.eval_subset.push_back(i);
  model.validate();
  return model;
}

// z extent of the rest template; the scale reference for error bounds
template <typename S>
double body_height(const BodyModel<S>& model) {
  double zmin = 1e30, zmax = -1e30;
  for (int64_t i = 0; i < model.num_vertices(); ++i) {
    zmin = std::min(zmin, static_cast<double>(model.template_vertices.at(i, 2)));
    zmax = std::max(zmax, static_cast<double>(model.template_vertices.at(i, 2)));
  }
  return zmax - zmin;
}

// ---- asset archive ---------------------------------------------------------

namespace detail {

inline Tensor<float> index_tensor(const std::vector<int64_t>& v, Shape shape) {
  Tensor<float> t(std::move(shape));
  for (size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<float>(v[i]);
  return t;
}

inline std::vector<int64_t> tensor_indices(const Tensor<float>& t) {
  std::vector<int64_t> v(t.data.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int64_t>(std::llround(t.data[i]));
  return v;
}

}  // namespace detail

template <typename S>
void save_body_asset(const std::string& path, const BodyModel<S>& model) {
  std::vector<ArchiveEntry> entries;
  entries.emplace_back("template", model.template_vertices.template cast<float>());
  entries.emplace_back("shape_basis", model.shape_basis.template cast<float>());
  entries.emplace_back("joint_regressor", model.joint_regressor.template cast<float>());
  entries.emplace_back("skinning_weights", model.skinning_weights.template cast<float>());
  entries.emplace_back("parents", detail::index_tensor(model.parents, {model.num_joints()}));
  entries.emplace_back("part_labels", detail::index_tensor(model.part_labels, {model.num_vertices()}));
  entries.emplace_back("faces", detail::index_tensor(model.faces, {model.num_faces(), 3}));
  entries.emplace_back("eval_subset",
                       detail::index_tensor(model.eval_subset, {static_cast<int64_t>(model.eval_subset.size())}));
  write_archive(path, entries);
}

template <typename S>
BodyModel<S> load_body_asset(const std::string& path) {
  const auto entries = read_archive(path);
  std::unordered_map<std::string, const Tensor<float>*> table;
  for (const auto& [name, t] : entries) table[name] = &t;
  auto need = [&](const char* name) -> const Tensor<float>& {
    auto it = table.find(name);
    if (it == table.end()) throw std::runtime_error(std::string("body asset missing entry: ") + name);
    return *it->second;
  };
  BodyModel<S> model;
  model.template_vertices = need("template").template cast<S>();
  model.shape_basis = need("shape_basis").template cast<S>();
  model.joint_regressor = need("joint_regressor").template cast<S>();
  model.skinning_weights = need("skinning_weights").template cast<S>();
  model.parents = detail::tensor_indices(need("parents"));
  model.part_labels = detail::tensor_indices(need("part_labels"));
  model.faces = detail::tensor_indices(need("faces"));
  model.eval_subset = detail::tensor_indices(need("eval_subset"));
  model.validate();
  return model;
}

}  // namespace votebody
