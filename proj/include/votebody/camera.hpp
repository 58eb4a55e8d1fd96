#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "votebody/rotation.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

// Pinhole depth camera. rotation maps world directions into the camera frame
// (+z forward, +x right, +y down); pixel (u,v) covers [u,u+1)x[v,v+1) with
// its sample at the center.
struct Camera {
  Mat3 rotation = mat3_identity();
  std::array<double, 3> position = {0, 0, 0};
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;
  double znear = 0.05;

  std::array<double, 3> world_to_camera(const std::array<double, 3>& p) const {
    return mat3_apply(rotation, {p[0] - position[0], p[1] - position[1], p[2] - position[2]});
  }

  // (u, v) pixel coordinates; caller checks z > znear first
  std::array<double, 2> project(const std::array<double, 3>& cam) const {
    return {fx * cam[0] / cam[2] + cx, fy * cam[1] / cam[2] + cy};
  }

  std::array<double, 3> back_project(double u, double v, double z) const {
    const std::array<double, 3> cam = {(u - cx) * z / fx, (v - cy) * z / fy, z};
    const Mat3 rt = mat3_transpose(rotation);
    const auto w = mat3_apply(rt, cam);
    return {w[0] + position[0], w[1] + position[1], w[2] + position[2]};
  }

  // flat record for sample serialization: rotation, position, intrinsics, size
  Tensor<float> to_record() const {
    Tensor<float> t({18});
    for (int i = 0; i < 9; ++i) t.data[static_cast<size_t>(i)] = static_cast<float>(rotation[static_cast<size_t>(i)]);
    for (int i = 0; i < 3; ++i) t.data[static_cast<size_t>(9 + i)] = static_cast<float>(position[static_cast<size_t>(i)]);
    t.data[12] = static_cast<float>(fx);
    t.data[13] = static_cast<float>(fy);
    t.data[14] = static_cast<float>(cx);
    t.data[15] = static_cast<float>(cy);
    t.data[16] = static_cast<float>(width);
    t.data[17] = static_cast<float>(height);
    return t;
  }

  static Camera from_record(const Tensor<float>& t) {
    if (t.numel() != 18) throw std::invalid_argument("camera record must have 18 values");
    Camera c;
    for (int i = 0; i < 9; ++i) c.rotation[static_cast<size_t>(i)] = t.data[static_cast<size_t>(i)];
    for (int i = 0; i < 3; ++i) c.position[static_cast<size_t>(i)] = t.data[static_cast<size_t>(9 + i)];
    c.fx = t.data[12];
    c.fy = t.data[13];
    c.cx = t.data[14];
    c.cy = t.data[15];
    c.width = static_cast<int>(t.data[16]);
    c.height = static_cast<int>(t.data[17]);
    return c;
  }
};

// Camera on an orbit looking at a target point. fov_x is the full horizontal
// field of view in radians.
inline Camera make_orbit_camera(const std::array<double, 3>& target, double distance, double azimuth,
                                double elevation, int width, int height, double fov_x = 1.0471975511965976) {
  if (width < 1 || height < 1) throw std::invalid_argument("camera resolution must be positive");
  if (distance <= 0.0) throw std::invalid_argument("camera distance must be positive");
  Camera c;
  c.width = width;
  c.height = height;
  c.fx = (width / 2.0) / std::tan(fov_x / 2.0);
  c.fy = c.fx;
  c.cx = width / 2.0;
  c.cy = height / 2.0;
  c.position = {target[0] + distance * std::cos(elevation) * std::cos(azimuth),
                target[1] + distance * std::cos(elevation) * std::sin(azimuth),
                target[2] + distance * std::sin(elevation)};

  std::array<double, 3> fwd = {target[0] - c.position[0], target[1] - c.position[1], target[2] - c.position[2]};
  const double fl = std::sqrt(fwd[0] * fwd[0] + fwd[1] * fwd[1] + fwd[2] * fwd[2]);
  for (auto& v : fwd) v /= fl;
  const std::array<double, 3> up = {0, 0, 1};
  std::array<double, 3> right = {fwd[1] * up[2] - fwd[2] * up[1], fwd[2] * up[0] - fwd[0] * up[2],
                                 fwd[0] * up[1] - fwd[1] * up[0]};
  double rl = std::sqrt(right[0] * right[0] + right[1] * right[1] + right[2] * right[2]);
  if (rl < 1e-9) {  // looking straight up/down; pick an arbitrary right
    right = {1, 0, 0};
    rl = 1.0;
  }
  for (auto& v : right) v /= rl;
  const std::array<double, 3> down = {fwd[1] * right[2] - fwd[2] * right[1], fwd[2] * right[0] - fwd[0] * right[2],
                                      fwd[0] * right[1] - fwd[1] * right[0]};
  c.rotation = {right[0], right[1], right[2], down[0], down[1], down[2], fwd[0], fwd[1], fwd[2]};
  return c;
}

}  // namespace votebody
