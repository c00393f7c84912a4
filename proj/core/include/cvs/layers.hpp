#pragma once

#include <string>
#include <vector>

#include "cvs/rng.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

// Named handle to a learnable tensor owned elsewhere.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};

using ParamList = std::vector<ParamRef>;

// Forward/backward helpers return gradients with respect to their
// activation inputs and accumulate parameter gradients into the parameters'
// grad slots.

// Row-wise affine map: y = x * weight + bias, weight (in, out).
// Applied to a flattened (H*W*D, C) volume this is a 1x1x1 convolution.
// A bias-free Linear leaves `bias` empty.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool with_bias = true);  // zero-initialized
  static Linear kaiming(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  bool has_bias() const { return !bias.empty(); }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_y);
  void collect(ParamList& params, const std::string& prefix);
};

// Shape-only convolution kernels on (H, W, D, C) volumes with weights laid
// out as (k, k, k, C_in, C_out).
struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  std::size_t out_extent(std::size_t in) const;
  std::size_t transposed_extent(std::size_t in) const;
};

Tensor conv3d_forward(const Tensor& x, const Tensor& weight, const ConvGeometry& g);
Tensor conv3d_backward_input(const Tensor& weight, const Tensor& grad_y, const Shape& x_shape, const ConvGeometry& g);
void conv3d_accumulate_weight_grad(const Tensor& x, const Tensor& grad_y, std::span<double> grad_weight,
                                   const ConvGeometry& g);

struct Conv3d {
  Tensor weight;  // (k, k, k, C_in, C_out)
  Tensor bias;    // (C_out)
  ConvGeometry geometry;

  Conv3d() = default;
  Conv3d(std::size_t in, std::size_t out, ConvGeometry g);  // zero-initialized
  static Conv3d kaiming(std::size_t in, std::size_t out, ConvGeometry g, Rng& rng);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_y);
  void collect(ParamList& params, const std::string& prefix);
};

// Adjoint of Conv3d used as an upsampler. weight is stored as the kernel of
// the convolution it transposes: (k, k, k, C_out, C_in).
struct ConvTranspose3d {
  Tensor weight;
  Tensor bias;  // (C_out)
  ConvGeometry geometry;

  ConvTranspose3d() = default;
  ConvTranspose3d(std::size_t in, std::size_t out, ConvGeometry g);
  static ConvTranspose3d kaiming(std::size_t in, std::size_t out, ConvGeometry g, Rng& rng);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_y);
  void collect(ParamList& params, const std::string& prefix);
};

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& grad_y);

Tensor add(const Tensor& a, const Tensor& b);
void add_into(Tensor& acc, const Tensor& b);

// Scaled dot-product attention, rows are tokens. Heads split the channel
// axis evenly; softmax runs over keys for each query.
struct AttentionCache {
  std::vector<Tensor> probs;  // per head, (N_q, N_k)
};

struct AttentionGrads {
  Tensor q, k, v;
};

Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, double scale,
                         AttentionCache* cache);
AttentionGrads attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionCache& cache,
                                  std::size_t heads, double scale, const Tensor& grad_out);

}  // namespace cvs
