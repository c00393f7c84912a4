#include "cvs/kernel_geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cvs/error.hpp"

namespace cvs {

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  return out;
}

Mat3 mat_transpose(const Mat3& a) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[i][j] = a[j][i];
  return out;
}

double mat_det(const Mat3& a) {
  return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
         a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
}

Vec3 row_times(const Vec3& p, const Mat3& m) {
  Vec3 out{};
  for (int j = 0; j < 3; ++j) out[j] = p[0] * m[0][j] + p[1] * m[1][j] + p[2] * m[2][j];
  return out;
}

KernelLattice build_lattice(int K) {
  if (K < 1 || K % 2 == 0) throw ParameterError("kernel size must be odd and positive, got " + std::to_string(K));
  KernelLattice lattice;
  lattice.K = K;
  const int half = (K - 1) / 2;
  const int plane = K * K;
  lattice.points.reserve(static_cast<std::size_t>(plane) * K);
  for (int k = 0; k < plane * K; ++k) {
    const int in_plane = k % plane;
    lattice.points.push_back({static_cast<double>(in_plane % K - half), static_cast<double>(in_plane / K - half),
                              static_cast<double>(half - k / plane)});
  }
  return lattice;
}

namespace {

// Exact values at multiples of 90 degrees so lattice closure holds bitwise.
void sin_cos_deg(double deg, double& s, double& c) {
  const double turns = deg / 90.0;
  if (std::isfinite(turns) && turns == std::round(turns)) {
    const long q = ((static_cast<long>(std::round(turns)) % 4) + 4) % 4;
    constexpr double kSin[4] = {0.0, 1.0, 0.0, -1.0};
    constexpr double kCos[4] = {1.0, 0.0, -1.0, 0.0};
    s = kSin[q];
    c = kCos[q];
    return;
  }
  const double rad = deg * std::numbers::pi / 180.0;
  s = std::sin(rad);
  c = std::cos(rad);
}

}  // namespace

RotationSpec build_rotation(double theta_x_deg, double theta_y_deg, double theta_z_deg) {
  double sx, cx, sy, cy, sz, cz;
  sin_cos_deg(theta_x_deg, sx, cx);
  sin_cos_deg(theta_y_deg, sy, cy);
  sin_cos_deg(theta_z_deg, sz, cz);
  const Mat3 rx{{{-cx, sx, 0.0}, {-sx, -cx, 0.0}, {0.0, 0.0, 1.0}}};
  const Mat3 ry{{{cy, 0.0, sy}, {0.0, 1.0, 0.0}, {-sy, 0.0, cy}}};
  const Mat3 rz{{{1.0, 0.0, 0.0}, {0.0, -cz, sz}, {0.0, -sz, -cz}}};
  RotationSpec spec;
  spec.theta_x = theta_x_deg;
  spec.theta_y = theta_y_deg;
  spec.theta_z = theta_z_deg;
  spec.matrix = mat_mul(mat_mul(rx, ry), rz);
  return spec;
}

RotatedKernel rotate_kernel(const KernelLattice& lattice, const RotationSpec& spec) {
  RotatedKernel out;
  out.spec = spec;
  out.points.reserve(lattice.points.size());
  out.lattice_exact = true;
  for (const auto& p : lattice.points) {
    Vec3 q = row_times(p, spec.matrix);
    for (auto& c : q) {
      if (c == 0.0) c = 0.0;  // fold -0.0
      if (std::abs(c - std::round(c)) > 1e-9) out.lattice_exact = false;
    }
    out.points.push_back(q);
  }
  return out;
}

}  // namespace cvs
