#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "cvs/kernel_geometry.hpp"
#include "cvs/layers.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

// Which stage of the network a (H, W, D, C) volume belongs to.
enum class VolumeRole { original, synthetic, augmented, semantic, geometric };

std::string to_string(VolumeRole role);

// Volumes are indexed (h, w, d); kernel point coordinates (x, y, z) map onto
// those axes in order.
using GridIndex = std::array<long, 3>;

// Rejects anything that is not a rank-4 tensor with positive extents.
void check_volume(const Tensor& volume, const char* what);

// v_i + P'_k for every kernel point. Positions may be fractional or lie
// outside the volume.
std::vector<Vec3> neighbor_positions(const GridIndex& vertex, const RotatedKernel& kernel);

// One of the (up to) eight in-volume corners of the unit cube enclosing a
// sample position.
struct Corner {
  std::int64_t index = -1;  // flat voxel index, -1 when outside the volume
  double weight = 0.0;
};

using CornerSet = std::array<Corner, 8>;

// Trilinear weights prod_d (1 - |corner_d - p_d|); corners outside the
// volume get index -1. Throws ParameterError on non-finite positions.
CornerSet trilinear_corners(const Shape& volume_shape, const Vec3& position);

// Zero-padded trilinear sample of a C-vector.
std::vector<double> interpolate(const Tensor& volume, const Vec3& position);
// Adds grad_feature spread by the interpolation weights into grad_volume.
void interpolate_backward(const Vec3& position, std::span<const double> grad_feature, Tensor& grad_volume);

// Precomputed corners for every (vertex, kernel point) of one view over one
// spatial shape. Rotation geometry does not depend on the features.
struct SamplingPlan {
  std::array<std::size_t, 3> extents{};
  std::size_t taps = 0;
  std::vector<CornerSet> corners;  // [vertex * taps + tap]
};

SamplingPlan build_sampling_plan(const RotatedKernel& kernel, std::size_t h, std::size_t w, std::size_t d);

// Rotated-kernel convolution layer: one independent weight tensor
// (K^3, C_in, C_out) per view, stride 1, zero padding.
class MvfsLayer {
 public:
  MvfsLayer() = default;
  MvfsLayer(int kernel_size, const std::vector<RotationSpec>& rotations, std::size_t c_in, std::size_t c_out);
  static MvfsLayer kaiming(int kernel_size, const std::vector<RotationSpec>& rotations, std::size_t c_in,
                           std::size_t c_out, Rng& rng);

  MvfsLayer(const MvfsLayer& other);
  MvfsLayer& operator=(const MvfsLayer& other);
  MvfsLayer(MvfsLayer&&) noexcept = default;
  MvfsLayer& operator=(MvfsLayer&&) noexcept = default;

  std::size_t view_count() const { return views_.size(); }
  int kernel_size() const { return lattice_.K; }
  std::size_t in_channels() const { return c_in_; }
  std::size_t out_channels() const { return c_out_; }

  const KernelLattice& lattice() const { return lattice_; }
  const RotatedKernel& view(std::size_t r) const { return views_.at(r); }
  Tensor& weights(std::size_t r) { return weights_.at(r); }
  const Tensor& weights(std::size_t r) const { return weights_.at(r); }

  // Cached per (view, spatial extents).
  const SamplingPlan& plan(std::size_t r, std::size_t h, std::size_t w, std::size_t d) const;

  void collect(ParamList& params, const std::string& prefix);

 private:
  KernelLattice lattice_;
  std::vector<RotatedKernel> views_;
  std::vector<Tensor> weights_;
  std::size_t c_in_ = 0;
  std::size_t c_out_ = 0;

  using PlanKey = std::array<std::size_t, 4>;
  mutable std::map<PlanKey, std::shared_ptr<const SamplingPlan>> plans_;
  mutable std::unique_ptr<std::mutex> plans_mutex_ = std::make_unique<std::mutex>();
};

// V'_r: out[i] = sum_k w'_{r,k} . interp(V, v_i + P'_{r,k}).
Tensor synth_view_conv(const Tensor& volume, const MvfsLayer& layer, std::size_t r);
// Returns dL/dV and accumulates dL/dw'_r into layer.weights(r).grad().
Tensor synth_view_conv_backward(const Tensor& volume, MvfsLayer& layer, std::size_t r, const Tensor& grad_out);

std::vector<Tensor> mvfs_forward(const Tensor& volume, const MvfsLayer& layer);
// grad_views[r] = dL/dV'_r. Returns dL/dV summed over views.
Tensor mvfs_backward(const Tensor& volume, MvfsLayer& layer, const std::vector<Tensor>& grad_views);

}  // namespace cvs
