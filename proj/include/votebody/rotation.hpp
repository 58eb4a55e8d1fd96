#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "votebody/tensor.hpp"

namespace votebody {

// 3x3 row-major helpers used on the value path (the graph has its own ops).
using Mat3 = std::array<double, 9>;

inline Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j) c[3 * i + j] += a[3 * i + k] * b[3 * k + j];
  return c;
}

inline Mat3 mat3_transpose(const Mat3& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

inline double mat3_det(const Mat3& a) {
  return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

inline std::array<double, 3> mat3_apply(const Mat3& a, const std::array<double, 3>& v) {
  return {a[0] * v[0] + a[1] * v[1] + a[2] * v[2], a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
          a[6] * v[0] + a[7] * v[1] + a[8] * v[2]};
}

// ||R R^T - I||_F
inline double orthogonality_error(const Mat3& r) {
  const Mat3 rrt = mat3_mul(r, mat3_transpose(r));
  double acc = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double d = rrt[3 * i + j] - (i == j ? 1.0 : 0.0);
      acc += d * d;
    }
  return std::sqrt(acc);
}

inline Mat3 rodrigues(double ax, double ay, double az) {
  const double theta = std::sqrt(ax * ax + ay * ay + az * az);
  if (theta < 1e-12) return mat3_identity();
  const double x = ax / theta, y = ay / theta, z = az / theta;
  const double c = std::cos(theta), s = std::sin(theta), t = 1.0 - c;
  return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
          t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
          t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

struct RotationProjection {
  Mat3 r = mat3_identity();
  bool degenerate = false;  // rank-deficient input, identity substituted
};

namespace detail {

// Eigendecomposition of a symmetric 3x3 by cyclic Jacobi sweeps.
// a is overwritten with the diagonalized matrix; v accumulates eigenvectors
// as columns.
inline void jacobi_sym3(Mat3& a, Mat3& v) {
  v = mat3_identity();
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = std::fabs(a[1]) + std::fabs(a[2]) + std::fabs(a[5]);
    if (off < 1e-15) break;
    constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& pq : pairs) {
      const int p = pq[0], q = pq[1];
      const double apq = a[3 * p + q];
      if (std::fabs(apq) < 1e-18) continue;
      const double app = a[3 * p + p], aqq = a[3 * q + q];
      const double tau = (aqq - app) / (2.0 * apq);
      const double t = (tau >= 0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
      const double c = 1.0 / std::sqrt(1.0 + t * t);
      const double s = t * c;
      for (int k = 0; k < 3; ++k) {
        const double akp = a[3 * k + p], akq = a[3 * k + q];
        a[3 * k + p] = c * akp - s * akq;
        a[3 * k + q] = s * akp + c * akq;
      }
      for (int k = 0; k < 3; ++k) {
        const double apk = a[3 * p + k], aqk = a[3 * q + k];
        a[3 * p + k] = c * apk - s * aqk;
        a[3 * q + k] = s * apk + c * aqk;
      }
      for (int k = 0; k < 3; ++k) {
        const double vkp = v[3 * k + p], vkq = v[3 * k + q];
        v[3 * k + p] = c * vkp - s * vkq;
        v[3 * k + q] = s * vkp + c * vkq;
      }
    }
  }
}

}  // namespace detail

// Nearest rotation to an arbitrary 3x3 (special orthogonal polar factor).
// SVD A = U S V^T from the eigendecomposition of A^T A; reflections corrected
// on the smallest singular direction. Rank-deficient input maps to identity
// with the degenerate flag raised.
inline RotationProjection project_rotation(const Mat3& a) {
  Mat3 ata{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a[3 * k + i] * a[3 * k + j];
      ata[3 * i + j] = acc;
    }
  Mat3 diag = ata, v;
  detail::jacobi_sym3(diag, v);

  std::array<double, 3> sig2 = {diag[0], diag[4], diag[8]};
  std::array<int, 3> ord = {0, 1, 2};
  // descending singular values
  for (int i = 0; i < 2; ++i)
    for (int j = i + 1; j < 3; ++j)
      if (sig2[static_cast<size_t>(ord[j])] > sig2[static_cast<size_t>(ord[i])]) std::swap(ord[i], ord[j]);

  std::array<double, 3> sigma;
  Mat3 vs;  // columns reordered
  for (int c = 0; c < 3; ++c) {
    sigma[static_cast<size_t>(c)] = std::sqrt(std::max(sig2[static_cast<size_t>(ord[c])], 0.0));
    for (int r = 0; r < 3; ++r) vs[3 * r + c] = v[3 * r + ord[c]];
  }

  RotationProjection out;
  if (!(sigma[0] > 0.0) || sigma[2] < 1e-9 * sigma[0]) {
    out.degenerate = true;
    return out;  // identity
  }

  Mat3 u;  // u_c = A v_c / sigma_c
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < 3; ++r) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a[3 * r + k] * vs[3 * k + c];
      u[3 * r + c] = acc / sigma[static_cast<size_t>(c)];
    }
  }
  // det(U V^T) = sign(det A); flip the least-significant direction if needed
  const double flip = mat3_det(a) < 0.0 ? -1.0 : 1.0;
  for (int r = 0; r < 3; ++r) u[3 * r + 2] *= flip;

  out.r = mat3_mul(u, mat3_transpose(vs));
  return out;
}

template <typename S>
Mat3 mat3_from_tensor(const Tensor<S>& t, int64_t row_offset = 0) {
  Mat3 m;
  for (int i = 0; i < 9; ++i) m[static_cast<size_t>(i)] = static_cast<double>(t.data[static_cast<size_t>(row_offset * 9 + i)]);
  return m;
}

template <typename S>
Tensor<S> tensor_from_mat3(const Mat3& m) {
  Tensor<S> t({3, 3});
  for (int i = 0; i < 9; ++i) t.data[static_cast<size_t>(i)] = static_cast<S>(m[static_cast<size_t>(i)]);
  return t;
}

}  // namespace votebody
