#include "cvs/mvfs.hpp"

#include <cmath>

#include "cvs/error.hpp"

namespace cvs {

std::string to_string(VolumeRole role) {
  switch (role) {
    case VolumeRole::original: return "original";
    case VolumeRole::synthetic: return "synthetic";
    case VolumeRole::augmented: return "augmented";
    case VolumeRole::semantic: return "semantic";
    case VolumeRole::geometric: return "geometric";
  }
  return "unknown";
}

void check_volume(const Tensor& volume, const char* what) {
  if (volume.rank() != 4) {
    throw DimensionError(std::string(what) + ": expected an (H, W, D, C) volume, got " + shape_str(volume.shape()));
  }
}

std::vector<Vec3> neighbor_positions(const GridIndex& vertex, const RotatedKernel& kernel) {
  std::vector<Vec3> out;
  out.reserve(kernel.points.size());
  for (const auto& p : kernel.points) {
    out.push_back({static_cast<double>(vertex[0]) + p[0], static_cast<double>(vertex[1]) + p[1],
                   static_cast<double>(vertex[2]) + p[2]});
  }
  return out;
}

CornerSet trilinear_corners(const Shape& volume_shape, const Vec3& position) {
  for (double c : position) {
    if (!std::isfinite(c)) throw ParameterError("interpolate: non-finite sample position");
  }
  std::array<long, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor(position[a]);
    base[a] = static_cast<long>(f);
    frac[a] = position[a] - f;
  }
  CornerSet corners;
  for (int c = 0; c < 8; ++c) {
    const std::array<int, 3> bit{(c >> 2) & 1, (c >> 1) & 1, c & 1};
    double weight = 1.0;
    bool inside = true;
    std::int64_t index = 0;
    for (int a = 0; a < 3; ++a) {
      weight *= bit[a] ? frac[a] : 1.0 - frac[a];
      const long coord = base[a] + bit[a];
      const auto extent = static_cast<long>(volume_shape[a]);
      if (coord < 0 || coord >= extent) inside = false;
      index = index * extent + coord;
    }
    corners[c] = inside ? Corner{index, weight} : Corner{-1, weight};
  }
  return corners;
}

std::vector<double> interpolate(const Tensor& volume, const Vec3& position) {
  check_volume(volume, "interpolate");
  const std::size_t channels = volume.dim(3);
  std::vector<double> out(channels, 0.0);
  for (const Corner& corner : trilinear_corners(volume.shape(), position)) {
    if (corner.index < 0 || corner.weight == 0.0) continue;
    const double* f = volume.data().data() + static_cast<std::size_t>(corner.index) * channels;
    for (std::size_t c = 0; c < channels; ++c) out[c] += corner.weight * f[c];
  }
  return out;
}

void interpolate_backward(const Vec3& position, std::span<const double> grad_feature, Tensor& grad_volume) {
  check_volume(grad_volume, "interpolate_backward");
  const std::size_t channels = grad_volume.dim(3);
  if (grad_feature.size() != channels) throw DimensionError("interpolate_backward: channel mismatch");
  for (const Corner& corner : trilinear_corners(grad_volume.shape(), position)) {
    if (corner.index < 0 || corner.weight == 0.0) continue;
    double* g = grad_volume.data().data() + static_cast<std::size_t>(corner.index) * channels;
    for (std::size_t c = 0; c < channels; ++c) g[c] += corner.weight * grad_feature[c];
  }
}

SamplingPlan build_sampling_plan(const RotatedKernel& kernel, std::size_t h, std::size_t w, std::size_t d) {
  SamplingPlan plan;
  plan.extents = {h, w, d};
  plan.taps = kernel.points.size();
  plan.corners.reserve(h * w * d * plan.taps);
  const Shape shape{h, w, d, 1};
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < d; ++k) {
        const GridIndex v{static_cast<long>(i), static_cast<long>(j), static_cast<long>(k)};
        for (const auto& p : neighbor_positions(v, kernel)) {
          CornerSet cs = trilinear_corners(shape, p);
          // Zero-weight corners are dropped so lattice-exact views touch a
          // single voxel per tap.
          for (auto& c : cs)
            if (c.weight == 0.0) c.index = -1;
          plan.corners.push_back(cs);
        }
      }
  return plan;
}

// ---------------------------------------------------------------- layer

MvfsLayer::MvfsLayer(int kernel_size, const std::vector<RotationSpec>& rotations, std::size_t c_in, std::size_t c_out)
    : lattice_(build_lattice(kernel_size)), c_in_(c_in), c_out_(c_out) {
  if (rotations.empty()) throw ConfigError("MVFS needs at least one rotation");
  if (c_in == 0 || c_out == 0) throw ConfigError("MVFS channel counts must be positive");
  for (const auto& spec : rotations) {
    views_.push_back(rotate_kernel(lattice_, spec));
    weights_.emplace_back(Shape{lattice_.points.size(), c_in, c_out});
  }
}

MvfsLayer MvfsLayer::kaiming(int kernel_size, const std::vector<RotationSpec>& rotations, std::size_t c_in,
                             std::size_t c_out, Rng& rng) {
  MvfsLayer layer(kernel_size, rotations, c_in, c_out);
  const double stddev = std::sqrt(2.0 / static_cast<double>(layer.lattice_.points.size() * c_in));
  for (auto& w : layer.weights_) w = Tensor::randn(w.shape(), rng, stddev);
  return layer;
}

MvfsLayer::MvfsLayer(const MvfsLayer& other)
    : lattice_(other.lattice_),
      views_(other.views_),
      weights_(other.weights_),
      c_in_(other.c_in_),
      c_out_(other.c_out_) {
  std::lock_guard lock(*other.plans_mutex_);
  plans_ = other.plans_;
}

MvfsLayer& MvfsLayer::operator=(const MvfsLayer& other) {
  if (this != &other) {
    MvfsLayer copy(other);
    *this = std::move(copy);
  }
  return *this;
}

const SamplingPlan& MvfsLayer::plan(std::size_t r, std::size_t h, std::size_t w, std::size_t d) const {
  if (r >= views_.size()) throw DimensionError("MVFS view index " + std::to_string(r) + " out of range");
  std::lock_guard lock(*plans_mutex_);
  auto& slot = plans_[PlanKey{r, h, w, d}];
  if (!slot) slot = std::make_shared<const SamplingPlan>(build_sampling_plan(views_[r], h, w, d));
  return *slot;
}

void MvfsLayer::collect(ParamList& params, const std::string& prefix) {
  for (std::size_t r = 0; r < weights_.size(); ++r) {
    params.push_back({prefix + ".view" + std::to_string(r) + ".weight", &weights_[r]});
  }
}

// ---------------------------------------------------------------- conv

namespace {

void check_layer_input(const Tensor& volume, const MvfsLayer& layer) {
  check_volume(volume, "synth_view_conv");
  if (volume.dim(3) != layer.in_channels()) {
    throw DimensionError("synth_view_conv: volume has " + std::to_string(volume.dim(3)) +
                         " channels, layer expects " + std::to_string(layer.in_channels()));
  }
}

// Interpolated neighbor features for one vertex, laid out (tap, C_in).
void gather(const SamplingPlan& plan, std::size_t vertex, const double* X, std::size_t cin, double* out) {
  const CornerSet* cs = plan.corners.data() + vertex * plan.taps;
  std::fill(out, out + plan.taps * cin, 0.0);
  for (std::size_t t = 0; t < plan.taps; ++t) {
    double* dst = out + t * cin;
    for (const Corner& c : cs[t]) {
      if (c.index < 0) continue;
      const double* src = X + static_cast<std::size_t>(c.index) * cin;
      for (std::size_t ci = 0; ci < cin; ++ci) dst[ci] += c.weight * src[ci];
    }
  }
}

}  // namespace

Tensor synth_view_conv(const Tensor& volume, const MvfsLayer& layer, std::size_t r) {
  check_layer_input(volume, layer);
  const std::size_t h = volume.dim(0), w = volume.dim(1), d = volume.dim(2);
  const std::size_t cin = layer.in_channels(), cout = layer.out_channels();
  const SamplingPlan& plan = layer.plan(r, h, w, d);
  const double* X = volume.data().data();
  const double* W = layer.weights(r).data().data();
  Tensor out({h, w, d, cout});
  double* Y = out.data().data();
  const std::size_t fan = plan.taps * cin;
  std::vector<double> neighbors(fan);
  for (std::size_t v = 0; v < h * w * d; ++v) {
    gather(plan, v, X, cin, neighbors.data());
    double* y = Y + v * cout;
    for (std::size_t f = 0; f < fan; ++f) {
      const double n = neighbors[f];
      if (n == 0.0) continue;
      const double* wrow = W + f * cout;
      for (std::size_t co = 0; co < cout; ++co) y[co] += n * wrow[co];
    }
  }
  return out;
}

Tensor synth_view_conv_backward(const Tensor& volume, MvfsLayer& layer, std::size_t r, const Tensor& grad_out) {
  check_layer_input(volume, layer);
  const std::size_t h = volume.dim(0), w = volume.dim(1), d = volume.dim(2);
  const std::size_t cin = layer.in_channels(), cout = layer.out_channels();
  require_shape(grad_out, {h, w, d, cout}, "synth_view_conv_backward grad");
  const SamplingPlan& plan = layer.plan(r, h, w, d);
  const double* X = volume.data().data();
  Tensor& weights = layer.weights(r);
  const double* W = weights.data().data();
  double* GW = weights.grad().data();
  const double* G = grad_out.data().data();
  Tensor grad_volume(volume.shape());
  double* GX = grad_volume.data().data();
  const std::size_t fan = plan.taps * cin;
  std::vector<double> neighbors(fan);
  std::vector<double> grad_neighbors(fan);
  for (std::size_t v = 0; v < h * w * d; ++v) {
    gather(plan, v, X, cin, neighbors.data());
    const double* g = G + v * cout;
    for (std::size_t f = 0; f < fan; ++f) {
      const double* wrow = W + f * cout;
      double* gwrow = GW + f * cout;
      const double n = neighbors[f];
      double s = 0.0;
      for (std::size_t co = 0; co < cout; ++co) {
        s += wrow[co] * g[co];
        gwrow[co] += n * g[co];
      }
      grad_neighbors[f] = s;
    }
    const CornerSet* cs = plan.corners.data() + v * plan.taps;
    for (std::size_t t = 0; t < plan.taps; ++t) {
      const double* gn = grad_neighbors.data() + t * cin;
      for (const Corner& c : cs[t]) {
        if (c.index < 0) continue;
        double* dst = GX + static_cast<std::size_t>(c.index) * cin;
        for (std::size_t ci = 0; ci < cin; ++ci) dst[ci] += c.weight * gn[ci];
      }
    }
  }
  return grad_volume;
}

std::vector<Tensor> mvfs_forward(const Tensor& volume, const MvfsLayer& layer) {
  std::vector<Tensor> views;
  views.reserve(layer.view_count());
  for (std::size_t r = 0; r < layer.view_count(); ++r) views.push_back(synth_view_conv(volume, layer, r));
  return views;
}

Tensor mvfs_backward(const Tensor& volume, MvfsLayer& layer, const std::vector<Tensor>& grad_views) {
  if (grad_views.size() != layer.view_count()) throw DimensionError("mvfs_backward: one gradient per view required");
  Tensor grad(volume.shape());
  for (std::size_t r = 0; r < layer.view_count(); ++r) {
    add_into(grad, synth_view_conv_backward(volume, layer, r, grad_views[r]));
  }
  return grad;
}

}  // namespace cvs
