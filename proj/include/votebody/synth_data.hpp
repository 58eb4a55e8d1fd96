#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "votebody/body_model.hpp"
#include "votebody/camera.hpp"
#include "votebody/checkpoint.hpp"
#include "votebody/rasterizer.hpp"
#include "votebody/rng.hpp"
#include "votebody/rotation.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

// One synthetic observation: a centered, fixed-size, optionally noisy partial
// point cloud with full ground truth. Offsets are stored so that
// fl(pre-noise point + offset) reproduces the part's joint bit-exactly.
struct TrainingSample {
  Tensor<float> points;              // N x 3, centroid at origin
  std::vector<int64_t> gt_labels;    // N, in [0, K)
  Tensor<float> gt_offsets;          // N x 3
  Tensor<float> gt_joints;           // K x 3
  BodyParams<float> gt_params;       // translation carries the centering shift
  Tensor<float> gt_vertices;         // M x 3
  float noise_sigma = 0.f;           // meters
  Tensor<float> camera;              // Camera::to_record()

  int64_t num_points() const { return points.shape[0]; }
};

// Offset whose float sum with `point` lands exactly on `joint`, coordinate by
// coordinate: start from the rounded difference and walk ulps until the sum
// bit-matches.
namespace detail {

// walk v by ulps until fl(point + v) == joint; fails when no such float exists
// (the sum grid near the joint can be coarser than the joint's own grid)
inline bool exact_offset_coord(float joint, float point, float& out) {
  float v = static_cast<float>(static_cast<double>(joint) - static_cast<double>(point));
  for (int iter = 0; iter < 64; ++iter) {
    const float sum = point + v;
    if (sum == joint) {
      out = v;
      return true;
    }
    v = std::nextafterf(v, sum < joint ? std::numeric_limits<float>::infinity()
                                       : -std::numeric_limits<float>::infinity());
  }
  return false;
}

}  // namespace detail

inline std::array<float, 3> exact_offset(const std::array<float, 3>& joint, const std::array<float, 3>& point) {
  std::array<float, 3> o;
  for (int c = 0; c < 3; ++c) {
    if (!detail::exact_offset_coord(joint[static_cast<size_t>(c)], point[static_cast<size_t>(c)],
                                    o[static_cast<size_t>(c)])) {
      std::ostringstream msg;
      msg << "could not construct an exactly-summing offset: point=" << std::hexfloat
          << point[static_cast<size_t>(c)] << " joint=" << joint[static_cast<size_t>(c)];
      throw std::runtime_error(msg.str());
    }
  }
  return o;
}

// Choose a stored float for one joint coordinate that every member point can
// reach via fl(point + offset), nudging where necessary. Exact float sums from
// a point p lie on a lattice whose spacing is the offset's ulp and whose
// residue is fixed by p's own low mantissa bits, so an arbitrary joint value
// can be unreachable. Two remedies combine here, both far below any physical
// tolerance: snap the joint to a power-of-two grid near the largest member
// coordinate (~1e-7 at body scale), and shift individual points by up to four
// ulps to align their lattices. Coarsening the grid until the snap reaches
// zero guarantees termination (a zero target makes every offset an exact
// negation). On success the nudged coordinates are written back through the
// member pointers.
inline float reachable_joint_coord(float j0, const std::vector<float*>& members) {
  std::vector<float> adjusted(members.size());
  auto solve_all = [&members, &adjusted](float j) -> bool {
    float tmp;
    for (size_t n = 0; n < members.size(); ++n) {
      const float p = *members[n];
      if (detail::exact_offset_coord(j, p, tmp)) {
        adjusted[n] = p;
        continue;
      }
      bool ok = false;
      for (int d = 1; d <= 4 && !ok; ++d)
        for (float dir : {1.0f, -1.0f}) {
          float q = p;
          for (int s = 0; s < d; ++s)
            q = std::nextafterf(q, dir * std::numeric_limits<float>::infinity());
          if (detail::exact_offset_coord(j, q, tmp)) {
            adjusted[n] = q;
            ok = true;
            break;
          }
        }
      if (!ok) return false;
    }
    return true;
  };
  auto commit = [&members, &adjusted]() {
    for (size_t n = 0; n < members.size(); ++n) *members[n] = adjusted[n];
  };
  if (members.empty()) return j0;
  if (solve_all(j0)) {
    commit();
    return j0;
  }
  float maxabs = std::fabs(j0);
  for (const float* p : members) maxabs = std::max(maxabs, std::fabs(*p));
  double grid = 2.0 * static_cast<double>(std::nextafterf(maxabs, std::numeric_limits<float>::infinity()) - maxabs);
  for (int widen = 0; widen < 64; ++widen, grid *= 2.0) {
    const double base = std::nearbyint(static_cast<double>(j0) / grid) * grid;
    for (double shift : {0.0, 1.0, -1.0, 2.0, -2.0}) {
      const float cand = static_cast<float>(base + shift * grid);
      if (solve_all(cand)) {
        commit();
        return cand;
      }
    }
  }
  throw std::runtime_error("no reachable float value for a joint coordinate");
}

// label_i = part label of the nearest mesh vertex (squared-distance scan,
// first minimum wins ties)
template <typename S>
std::vector<int64_t> annotate_labels(const std::vector<std::array<double, 3>>& points,
                                     const BodyModel<S>& model, const Tensor<S>& posed_vertices) {
  const int64_t M = posed_vertices.shape[0];
  std::vector<int64_t> labels(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int64_t arg = 0;
    for (int64_t m = 0; m < M; ++m) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = points[i][static_cast<size_t>(c)] - static_cast<double>(posed_vertices.at(m, c));
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        arg = m;
      }
    }
    labels[i] = model.part_labels[static_cast<size_t>(arg)];
  }
  return labels;
}

// Uniform index draw: without replacement when enough input, with replacement
// otherwise (partial Fisher-Yates keeps count == want a pure permutation).
inline std::vector<int64_t> sample_fixed_indices(int64_t count, int64_t want, Rng& rng) {
  if (count <= 0) throw std::invalid_argument("cannot sample from an empty point set");
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(want));
  if (count >= want) {
    std::vector<int64_t> pool(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) pool[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < want; ++i) {
      const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(count - i)));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
      out.push_back(pool[static_cast<size_t>(i)]);
    }
  } else {
    for (int64_t i = 0; i < want; ++i) out.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(count))));
  }
  return out;
}

inline void add_noise(std::vector<std::array<double, 3>>& points, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("noise sigma must be nonnegative");
  if (sigma == 0.0) return;
  for (auto& p : points)
    for (int c = 0; c < 3; ++c) p[static_cast<size_t>(c)] += sigma * rng.normal();
}

// Training pose distribution: random root orientation, per-joint axis-angle
// of magnitude U[0, 0.6], betas U[-2, 2].
template <typename S>
BodyParams<S> sample_pose(int64_t num_joints, Rng& rng, double beta_range = 2.0, double max_angle = 0.6) {
  BodyParams<S> p = BodyParams<S>::identity(num_joints);
  for (auto& b : p.betas.data) b = static_cast<S>(rng.uniform(-beta_range, beta_range));
  double axis[3];
  rng.unit_vector(axis);
  const double root_ang = rng.uniform(0.0, 2.0 * M_PI);
  const Mat3 root = rodrigues(axis[0] * root_ang, axis[1] * root_ang, axis[2] * root_ang);
  p.root_rotation = tensor_from_mat3<S>(root);
  for (int64_t k = 0; k + 1 < num_joints; ++k) {
    rng.unit_vector(axis);
    const double ang = rng.uniform(0.0, max_angle);
    const Mat3 r = rodrigues(axis[0] * ang, axis[1] * ang, axis[2] * ang);
    for (int i = 0; i < 9; ++i) p.local_rotations.data[static_cast<size_t>(k * 9 + i)] = static_cast<S>(r[static_cast<size_t>(i)]);
  }
  return p;
}

struct GenerateOptions {
  int64_t num_samples = 64;
  int64_t points_per_sample = 512;
  double noise_sigma = 0.0;  // meters
  int64_t num_cameras = 10;
  uint64_t seed = 1;
  int width = 160, height = 120;
  // pose overrides let eval shards reuse training poses at different N/noise
  double beta_range = 2.0;
  double max_angle = 0.6;
};

// Build one fully annotated sample. The posed body is rendered from an orbit
// camera, labeled against the GT mesh, resampled to a fixed size, noised, and
// finally centered on the noisy centroid (points, GT, and translation shift
// together, so the GT translation is minus the centering shift).
inline TrainingSample generate_sample(const BodyModel<double>& model, const GenerateOptions& opt,
                                      int64_t sample_index) {
  Rng rng = Rng::fork(opt.seed, static_cast<uint64_t>(sample_index));
  const int64_t K = model.num_joints(), M = model.num_vertices(), N = opt.points_per_sample;

  const BodyParams<double> pose = sample_pose<double>(K, rng, opt.beta_range, opt.max_angle);
  const Posed<double> posed = lbs_forward(model, pose);

  // orbit camera covering view sample_index % num_cameras
  std::array<double, 3> lo = {1e30, 1e30, 1e30}, hi = {-1e30, -1e30, -1e30};
  for (int64_t m = 0; m < M; ++m)
    for (int c = 0; c < 3; ++c) {
      lo[static_cast<size_t>(c)] = std::min(lo[static_cast<size_t>(c)], posed.vertices.at(m, c));
      hi[static_cast<size_t>(c)] = std::max(hi[static_cast<size_t>(c)], posed.vertices.at(m, c));
    }
  const std::array<double, 3> center = {(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
  double radius = 0.0;
  for (int c = 0; c < 3; ++c) radius = std::max(radius, (hi[static_cast<size_t>(c)] - lo[static_cast<size_t>(c)]) / 2);
  const double azimuth = 2.0 * M_PI * static_cast<double>(sample_index % opt.num_cameras) /
                             static_cast<double>(opt.num_cameras) +
                         rng.uniform(-0.1, 0.1);
  const double elevation = rng.uniform(-0.25, 0.45);
  const double distance = std::max(radius, 0.2) * rng.uniform(3.2, 4.2);
  const Camera cam = make_orbit_camera(center, distance, azimuth, elevation, opt.width, opt.height);

  SurfacePoints surface = render_partial(posed.vertices, model.faces, cam);
  const std::vector<int64_t> raw_labels = annotate_labels(surface.points, model, posed.vertices);

  const std::vector<int64_t> pick =
      sample_fixed_indices(static_cast<int64_t>(surface.points.size()), N, rng);
  std::vector<std::array<double, 3>> pre_noise(static_cast<size_t>(N));
  std::vector<int64_t> labels(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    pre_noise[static_cast<size_t>(i)] = surface.points[static_cast<size_t>(pick[static_cast<size_t>(i)])];
    labels[static_cast<size_t>(i)] = raw_labels[static_cast<size_t>(pick[static_cast<size_t>(i)])];
  }
  std::vector<std::array<double, 3>> noisy = pre_noise;
  add_noise(noisy, opt.noise_sigma, rng);

  std::array<double, 3> centroid = {0, 0, 0};
  for (const auto& p : noisy)
    for (int c = 0; c < 3; ++c) centroid[static_cast<size_t>(c)] += p[static_cast<size_t>(c)];
  for (int c = 0; c < 3; ++c) centroid[static_cast<size_t>(c)] /= static_cast<double>(N);

  TrainingSample s;
  s.noise_sigma = static_cast<float>(opt.noise_sigma);
  s.camera = cam.to_record();
  s.points = Tensor<float>({N, 3});
  s.gt_offsets = Tensor<float>({N, 3});
  s.gt_labels = labels;
  s.gt_joints = Tensor<float>({K, 3});
  s.gt_vertices = Tensor<float>({M, 3});
  for (int64_t m = 0; m < M; ++m)
    for (int c = 0; c < 3; ++c)
      s.gt_vertices.at(m, c) = static_cast<float>(posed.vertices.at(m, c) - centroid[static_cast<size_t>(c)]);
  std::vector<std::array<float, 3>> pre_f(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i)
    for (int c = 0; c < 3; ++c) {
      s.points.at(i, c) = static_cast<float>(noisy[static_cast<size_t>(i)][static_cast<size_t>(c)] -
                                             centroid[static_cast<size_t>(c)]);
      pre_f[static_cast<size_t>(i)][static_cast<size_t>(c)] =
          static_cast<float>(pre_noise[static_cast<size_t>(i)][static_cast<size_t>(c)] -
                             centroid[static_cast<size_t>(c)]);
    }
  for (int64_t k = 0; k < K; ++k)
    for (int c = 0; c < 3; ++c) {
      std::vector<float*> members;
      for (int64_t i = 0; i < N; ++i)
        if (labels[static_cast<size_t>(i)] == k)
          members.push_back(&pre_f[static_cast<size_t>(i)][static_cast<size_t>(c)]);
      const float j0 = static_cast<float>(posed.joints.at(k, c) - centroid[static_cast<size_t>(c)]);
      s.gt_joints.at(k, c) = reachable_joint_coord(j0, members);
    }
  if (opt.noise_sigma == 0.0)  // noiseless stored points are the pre-noise points, nudges included
    for (int64_t i = 0; i < N; ++i)
      for (int c = 0; c < 3; ++c) s.points.at(i, c) = pre_f[static_cast<size_t>(i)][static_cast<size_t>(c)];
  for (int64_t i = 0; i < N; ++i) {
    std::array<float, 3> joint_f;
    for (int c = 0; c < 3; ++c) joint_f[static_cast<size_t>(c)] = s.gt_joints.at(labels[static_cast<size_t>(i)], c);
    const auto off = exact_offset(joint_f, pre_f[static_cast<size_t>(i)]);
    for (int c = 0; c < 3; ++c) s.gt_offsets.at(i, c) = off[static_cast<size_t>(c)];
  }

  s.gt_params.betas = pose.betas.cast<float>();
  s.gt_params.root_rotation = pose.root_rotation.cast<float>();
  s.gt_params.local_rotations = pose.local_rotations.cast<float>();
  s.gt_params.translation = Tensor<float>({3});
  for (int c = 0; c < 3; ++c) s.gt_params.translation.at(c) = static_cast<float>(-centroid[static_cast<size_t>(c)]);
  return s;
}

inline std::vector<TrainingSample> generate_dataset(const BodyModel<double>& model, const GenerateOptions& opt) {
  std::vector<TrainingSample> out;
  out.reserve(static_cast<size_t>(opt.num_samples));
  for (int64_t i = 0; i < opt.num_samples; ++i) out.push_back(generate_sample(model, opt, i));
  return out;
}

// ---- shard archive ---------------------------------------------------------

namespace detail {

inline std::string sample_key(int64_t i, const char* field) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample%06lld.", static_cast<long long>(i));
  return std::string(buf) + field;
}

}  // namespace detail

inline void save_shard(const std::string& path, const std::vector<TrainingSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("refusing to write an empty shard");
  std::vector<ArchiveEntry> entries;
  const int64_t count = static_cast<int64_t>(samples.size());
  const int64_t N = samples[0].num_points();
  const int64_t K = samples[0].gt_joints.shape[0];
  const int64_t M = samples[0].gt_vertices.shape[0];
  Tensor<float> manifest({5});
  manifest.data = {static_cast<float>(count), static_cast<float>(N), static_cast<float>(K),
                   static_cast<float>(M), static_cast<float>(kShapeDims)};
  entries.emplace_back("manifest", std::move(manifest));
  for (int64_t i = 0; i < count; ++i) {
    const TrainingSample& s = samples[static_cast<size_t>(i)];
    if (s.num_points() != N || s.gt_joints.shape[0] != K || s.gt_vertices.shape[0] != M)
      throw std::invalid_argument("shard samples disagree on dims");
    entries.emplace_back(detail::sample_key(i, "points"), s.points);
    entries.emplace_back(detail::sample_key(i, "labels"), detail::index_tensor(s.gt_labels, {N}));
    entries.emplace_back(detail::sample_key(i, "offsets"), s.gt_offsets);
    entries.emplace_back(detail::sample_key(i, "joints"), s.gt_joints);
    entries.emplace_back(detail::sample_key(i, "vertices"), s.gt_vertices);
    entries.emplace_back(detail::sample_key(i, "betas"), s.gt_params.betas);
    entries.emplace_back(detail::sample_key(i, "root"), s.gt_params.root_rotation);
    entries.emplace_back(detail::sample_key(i, "locals"), s.gt_params.local_rotations);
    entries.emplace_back(detail::sample_key(i, "trans"), s.gt_params.translation);
    Tensor<float> sigma({1});
    sigma.data[0] = s.noise_sigma;
    entries.emplace_back(detail::sample_key(i, "noise"), std::move(sigma));
    entries.emplace_back(detail::sample_key(i, "camera"), s.camera);
  }
  write_archive(path, entries);
}

inline std::vector<TrainingSample> load_shard(const std::string& path) {
  const auto entries = read_archive(path);
  std::unordered_map<std::string, const Tensor<float>*> table;
  for (const auto& [name, t] : entries) table[name] = &t;
  auto mit = table.find("manifest");
  if (mit == table.end() || mit->second->numel() != 5)
    throw std::runtime_error("shard missing manifest: " + path);
  const int64_t count = static_cast<int64_t>(mit->second->data[0]);
  std::vector<TrainingSample> out;
  out.reserve(static_cast<size_t>(count));
  auto need = [&](int64_t i, const char* field) -> const Tensor<float>& {
    const std::string key = detail::sample_key(i, field);
    auto it = table.find(key);
    if (it == table.end()) throw std::runtime_error("shard missing entry " + key + " in " + path);
    return *it->second;
  };
  for (int64_t i = 0; i < count; ++i) {
    TrainingSample s;
    s.points = need(i, "points");
    s.gt_labels = detail::tensor_indices(need(i, "labels"));
    s.gt_offsets = need(i, "offsets");
    s.gt_joints = need(i, "joints");
    s.gt_vertices = need(i, "vertices");
    s.gt_params.betas = need(i, "betas");
    s.gt_params.root_rotation = need(i, "root");
    s.gt_params.local_rotations = need(i, "locals");
    s.gt_params.translation = need(i, "trans");
    s.noise_sigma = need(i, "noise").data[0];
    s.camera = need(i, "camera");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace votebody
