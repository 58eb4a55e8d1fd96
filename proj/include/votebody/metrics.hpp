#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "votebody/tensor.hpp"

namespace votebody {

// Evaluation numbers, all in millimeters.
struct MetricReport {
  double pve_mm = 0.0;      // mean vertex distance
  double pve_max_mm = 0.0;  // worst vertex distance
  double mpjpe_mm = 0.0;    // mean joint distance
  double cd_mm = 0.0;       // mean nearest-vertex distance, points -> mesh
};

template <typename S>
Tensor<S> subset_rows(const Tensor<S>& t, const std::vector<int64_t>& rows) {
  if (t.rank() != 2) throw std::invalid_argument("subset_rows: want rank-2, got " + shape_str(t.shape));
  Tensor<S> out({static_cast<int64_t>(rows.size()), t.shape[1]});
  for (size_t r = 0; r < rows.size(); ++r) {
    const int64_t src = rows[r];
    if (src < 0 || src >= t.shape[0]) throw std::invalid_argument("subset_rows: row index out of range");
    for (int64_t c = 0; c < t.shape[1]; ++c) out.at(static_cast<int64_t>(r), c) = t.at(src, c);
  }
  return out;
}

namespace detail {

template <typename S>
double row_distance(const Tensor<S>& a, const Tensor<S>& b, int64_t i) {
  double acc = 0.0;
  for (int64_t c = 0; c < 3; ++c) {
    const double d = static_cast<double>(a.at(i, c)) - static_cast<double>(b.at(i, c));
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace detail

// pred/gt vertices already restricted to the evaluation subset; points are the
// (centered) input cloud the mesh was reconstructed from
template <typename S>
MetricReport compute_metrics(const Tensor<S>& pred_vertices, const Tensor<S>& gt_vertices,
                             const Tensor<S>& pred_joints, const Tensor<S>& gt_joints,
                             const Tensor<S>& points) {
  if (pred_vertices.shape != gt_vertices.shape || pred_vertices.rank() != 2 || pred_vertices.shape[1] != 3)
    throw std::invalid_argument("compute_metrics: vertex shapes disagree");
  if (pred_joints.shape != gt_joints.shape || pred_joints.rank() != 2 || pred_joints.shape[1] != 3)
    throw std::invalid_argument("compute_metrics: joint shapes disagree");
  if (points.rank() != 2 || points.shape[1] != 3)
    throw std::invalid_argument("compute_metrics: points must be Nx3");

  MetricReport m;
  const int64_t V = pred_vertices.shape[0];
  double acc = 0.0, worst = 0.0;
  for (int64_t i = 0; i < V; ++i) {
    const double d = detail::row_distance(pred_vertices, gt_vertices, i);
    acc += d;
    if (d > worst) worst = d;
  }
  m.pve_mm = 1000.0 * acc / static_cast<double>(V);
  m.pve_max_mm = 1000.0 * worst;

  const int64_t K = pred_joints.shape[0];
  acc = 0.0;
  for (int64_t k = 0; k < K; ++k) acc += detail::row_distance(pred_joints, gt_joints, k);
  m.mpjpe_mm = 1000.0 * acc / static_cast<double>(K);

  const int64_t N = points.shape[0];
  acc = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < V; ++j) {
      double d2 = 0.0;
      for (int64_t c = 0; c < 3; ++c) {
        const double d = static_cast<double>(points.at(i, c)) - static_cast<double>(pred_vertices.at(j, c));
        d2 += d * d;
      }
      if (d2 < best) best = d2;
    }
    acc += std::sqrt(best);
  }
  m.cd_mm = 1000.0 * acc / static_cast<double>(N);
  return m;
}

}  // namespace votebody
