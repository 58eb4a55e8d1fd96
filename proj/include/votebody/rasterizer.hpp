#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "votebody/camera.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

struct EmptyRenderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SurfacePoints {
  std::vector<std::array<double, 3>> points;  // world coordinates, front-most surfaces only
  std::vector<int64_t> triangles;             // source triangle per point
};

// Z-buffer rasterization of a triangle mesh into one back-projected 3D point
// per covered pixel. Depth is interpolated perspective-correctly (linear in
// 1/z across the screen-space triangle); triangles with any vertex closer
// than znear are dropped; no backface culling (depth sensors see whichever
// side faces them).
template <typename S>
SurfacePoints render_partial(const Tensor<S>& vertices, const std::vector<int64_t>& faces,
                             const Camera& cam) {
  if (vertices.rank() != 2 || vertices.shape[1] != 3)
    throw std::invalid_argument("vertices must be Mx3, got " + shape_str(vertices.shape));
  const int64_t W = cam.width, H = cam.height;
  std::vector<double> zbuf(static_cast<size_t>(W * H), std::numeric_limits<double>::infinity());
  std::vector<int64_t> tri(static_cast<size_t>(W * H), -1);

  const int64_t num_tris = static_cast<int64_t>(faces.size()) / 3;
  for (int64_t t = 0; t < num_tris; ++t) {
    std::array<std::array<double, 2>, 3> px;
    std::array<double, 3> inv_z;
    bool ok = true;
    for (int v = 0; v < 3; ++v) {
      const int64_t vid = faces[static_cast<size_t>(3 * t + v)];
      const std::array<double, 3> p = {static_cast<double>(vertices.at(vid, 0)),
                                       static_cast<double>(vertices.at(vid, 1)),
                                       static_cast<double>(vertices.at(vid, 2))};
      const auto c = cam.world_to_camera(p);
      if (c[2] <= cam.znear) {
        ok = false;
        break;
      }
      px[static_cast<size_t>(v)] = cam.project(c);
      inv_z[static_cast<size_t>(v)] = 1.0 / c[2];
    }
    if (!ok) continue;

    const auto &a = px[0], &b = px[1], &c = px[2];
    const double area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if (std::fabs(area) < 1e-12) continue;

    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min({a[0], b[0], c[0]}))));
    const int64_t x1 = std::min<int64_t>(W - 1, static_cast<int64_t>(std::ceil(std::max({a[0], b[0], c[0]}))));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min({a[1], b[1], c[1]}))));
    const int64_t y1 = std::min<int64_t>(H - 1, static_cast<int64_t>(std::ceil(std::max({a[1], b[1], c[1]}))));
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) {
        const double sx = static_cast<double>(x) + 0.5, sy = static_cast<double>(y) + 0.5;
        const double w0 = ((b[0] - sx) * (c[1] - sy) - (b[1] - sy) * (c[0] - sx)) / area;
        const double w1 = ((c[0] - sx) * (a[1] - sy) - (c[1] - sy) * (a[0] - sx)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        const double z = 1.0 / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]);
        const size_t pix = static_cast<size_t>(y * W + x);
        if (z < zbuf[pix]) {
          zbuf[pix] = z;
          tri[pix] = t;
        }
      }
  }

  SurfacePoints out;
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const size_t pix = static_cast<size_t>(y * W + x);
      if (tri[pix] < 0) continue;
      out.points.push_back(cam.back_project(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, zbuf[pix]));
      out.triangles.push_back(tri[pix]);
    }
  if (out.points.empty()) throw EmptyRenderError("mesh renders to zero pixels in this view");
  return out;
}

}  // namespace votebody
