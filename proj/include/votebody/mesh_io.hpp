#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "votebody/tensor.hpp"

namespace votebody {

namespace detail {

inline void require_mesh(const Shape& verts, const std::vector<int64_t>& faces) {
  if (verts.size() != 2 || verts[1] != 3) throw std::invalid_argument("mesh vertices must be Mx3");
  if (faces.size() % 3 != 0) throw std::invalid_argument("face list length must be a multiple of 3");
  for (int64_t idx : faces)
    if (idx < 0 || idx >= verts[0]) throw std::invalid_argument("face index out of range");
}

}  // namespace detail

template <typename S>
void write_obj(const std::string& path, const Tensor<S>& vertices, const std::vector<int64_t>& faces) {
  detail::require_mesh(vertices.shape, faces);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  char line[128];
  for (int64_t m = 0; m < vertices.shape[0]; ++m) {
    std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", static_cast<double>(vertices.at(m, 0)),
                  static_cast<double>(vertices.at(m, 1)), static_cast<double>(vertices.at(m, 2)));
    out << line;
  }
  for (size_t f = 0; f + 2 < faces.size(); f += 3) {
    std::snprintf(line, sizeof(line), "f %lld %lld %lld\n", static_cast<long long>(faces[f] + 1),
                  static_cast<long long>(faces[f + 1] + 1), static_cast<long long>(faces[f + 2] + 1));
    out << line;
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

// binary little-endian PLY; float vertex positions, uchar-counted int32 faces
template <typename S>
void write_ply(const std::string& path, const Tensor<S>& vertices, const std::vector<int64_t>& faces) {
  detail::require_mesh(vertices.shape, faces);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << vertices.shape[0] << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face " << faces.size() / 3 << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  for (int64_t m = 0; m < vertices.shape[0]; ++m)
    for (int c = 0; c < 3; ++c) {
      const float v = static_cast<float>(vertices.at(m, c));
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  for (size_t f = 0; f + 2 < faces.size(); f += 3) {
    const unsigned char n = 3;
    out.write(reinterpret_cast<const char*>(&n), 1);
    for (int c = 0; c < 3; ++c) {
      const int32_t idx = static_cast<int32_t>(faces[f + static_cast<size_t>(c)]);
      out.write(reinterpret_cast<const char*>(&idx), sizeof idx);
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

// text point cloud, one "x y z" triple per line (meters); blank lines are
// allowed, anything else that does not parse names its line number
inline Tensor<float> read_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<float> coords;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double x = 0.0, y = 0.0, z = 0.0;
    std::string extra;
    if (!(ls >> x >> y >> z) || (ls >> extra))
      throw std::runtime_error(path + " line " + std::to_string(line_no) + ": expected \"x y z\", got \"" +
                               line + "\"");
    coords.push_back(static_cast<float>(x));
    coords.push_back(static_cast<float>(y));
    coords.push_back(static_cast<float>(z));
  }
  if (coords.empty()) throw std::runtime_error(path + ": no points found");
  Tensor<float> out({static_cast<int64_t>(coords.size()) / 3, 3});
  out.data = std::move(coords);
  return out;
}

template <typename S>
void write_xyz(const std::string& path, const Tensor<S>& points) {
  if (points.rank() != 2 || points.shape[1] != 3) throw std::invalid_argument("points must be Nx3");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  char line[128];
  for (int64_t i = 0; i < points.shape[0]; ++i) {
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g\n", static_cast<double>(points.at(i, 0)),
                  static_cast<double>(points.at(i, 1)), static_cast<double>(points.at(i, 2)));
    out << line;
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace votebody
