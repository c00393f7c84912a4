#pragma once

#include <vector>

#include "cvs/config.hpp"
#include "cvs/cvtr.hpp"
#include "cvs/layers.hpp"
#include "cvs/mvfs.hpp"
#include "cvs/ops.hpp"
#include "cvs/scene.hpp"

namespace cvs {

// Toy scene-completion network:
//   x0 = proj(S) + proj(D)                      full resolution
//   e1 = block(x0), V = block(e1)               two stride-2 residual stages
//   {V'_r} = MVFS(V), {V''_r} = CVTr({V'_r})
//   u1 = up(aggregate V''_r) + e1, u2 = up(silu u1) + x0
//   logits = head(silu u2)
// Skip connections add the encoder activations of matching resolution.
struct Model {
  ModelConfig config;
  Linear semantic_in;
  Linear geometric_in;
  Conv3d down1, res1, down2, res2;
  MvfsLayer mvfs;
  CvtrParams cvtr;
  ConvTranspose3d up1, up2;
  Linear head;

  // Seeded Kaiming initialization. CVTr output projections and the head
  // start at zero.
  static Model init(const ModelConfig& config);
  // Every parameter zero.
  static Model zeros(const ModelConfig& config);

  ParamList parameters();
  std::size_t parameter_count();
  void zero_grad();
};

struct ModelCache {
  Tensor semantic_flat, geometric_flat;
  Tensor x0, a0, h1, s1, e1, a1, h2, s2, volume;
  std::vector<Tensor> views;
  CvtrCache cvtr;
  std::vector<Tensor> augmented;
  Tensor aggregated, u1, b1, u2, b2, b2_flat;
};

struct InputGrads {
  Tensor semantic;
  Tensor geometric;
};

// Logits of shape (H0, W0, D0, classes).
Tensor model_forward(const Model& model, const Tensor& semantic, const Tensor& geometric, ModelCache* cache = nullptr);
Tensor model_forward(const Model& model, const SceneSample& sample, ModelCache* cache = nullptr);

// Accumulates parameter gradients for dL/dlogits and returns input gradients.
InputGrads model_backward(Model& model, const ModelCache& cache, const Tensor& grad_logits);

// Mean cross-entropy over non-ignored voxels and its gradient.
CrossEntropy scene_loss(const Tensor& logits, const SceneSample& sample);

std::vector<int> predict_labels(const Tensor& logits);

}  // namespace cvs
