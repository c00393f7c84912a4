#pragma once

#include <array>
#include <vector>

namespace cvs {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 mat_transpose(const Mat3& a);
double mat_det(const Mat3& a);
// Row vector times matrix.
Vec3 row_times(const Vec3& p, const Mat3& m);

// The K*K*K kernel as points in lattice units, centered on the origin.
// Index k runs with x fastest, then y; z decreases with k.
struct KernelLattice {
  int K = 1;
  std::vector<Vec3> points;

  std::size_t center_index() const { return points.size() / 2; }
};

// Composite rotation in degrees, stored alongside its matrix.
struct RotationSpec {
  double theta_x = 0.0;
  double theta_y = 0.0;
  double theta_z = 0.0;
  Mat3 matrix{};
};

struct RotatedKernel {
  RotationSpec spec;
  std::vector<Vec3> points;
  // Every rotated point lies on an integer coordinate (within 1e-9).
  bool lattice_exact = false;
};

// Throws ParameterError unless K is odd and positive.
KernelLattice build_lattice(int K);

// R(tx) * R(ty) * R(tz) with the factor matrices
//   R(tx) = [[-c, s, 0], [-s, -c, 0], [0, 0, 1]]
//   R(ty) = [[ c, 0, s], [ 0, 1, 0], [-s, 0, c]]
//   R(tz) = [[1, 0, 0], [0, -c, s], [0, -s, -c]]
// Note R(0, 0, 0) = diag(-1, 1, -1).
RotationSpec build_rotation(double theta_x_deg, double theta_y_deg, double theta_z_deg);

// points[k] = lattice.points[k] * spec.matrix.
RotatedKernel rotate_kernel(const KernelLattice& lattice, const RotationSpec& spec);

}  // namespace cvs
