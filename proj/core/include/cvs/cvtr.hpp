#pragma once

#include <string>
#include <vector>

#include "cvs/layers.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

struct AttentionOptions {
  std::size_t heads = 1;
  // Multiply logits by 1/sqrt(C / heads); off gives raw dot products.
  bool scaled = true;

  double scale(std::size_t channels) const;
};

// How projected features meet the view embedding inside an encoder.
enum class TokenWiring {
  concatenate,  // [T_r ; conv(V'_r)] + G_r, self-attention over M + HWD rows
  pooled_add,   // T_r + mean(conv(V'_r)) + G_r[:M], self-attention over M rows
};

// Source of keys/values for cross-view fusion.
enum class FusionScheme {
  all_for_one_tokens,    // concatenated view tokens, per-view projections
  all_for_one_features,  // concatenated flattened views, per-view projections
  all,                   // concatenated flattened views, one shared projection set
};

std::string to_string(TokenWiring wiring);
std::string to_string(FusionScheme scheme);
TokenWiring parse_token_wiring(const std::string& text);
FusionScheme parse_fusion_scheme(const std::string& text);

// Self-attention block followed by a two-layer SiLU feed-forward, both
// residual, no normalization. Key projections carry no bias: a shared
// offset on every key cancels in the per-query softmax.
struct EncoderLayer {
  Linear query, key, value, output;
  Linear hidden, project;  // C -> 2C -> C

  static EncoderLayer kaiming(std::size_t channels, Rng& rng);
  void collect(ParamList& params, const std::string& prefix);
};

struct ViewEncoderParams {
  std::size_t tokens = 1;     // M
  std::size_t voxels = 1;     // H * W * D
  Tensor view_embedding;      // T_r, (M, C)
  Tensor position_embedding;  // G_r, (M + HWD, C)
  Linear input_projection;    // 1x1x1 conv, C -> C
  std::vector<EncoderLayer> layers;
  AttentionOptions attention;
  TokenWiring wiring = TokenWiring::concatenate;

  static ViewEncoderParams zeros(std::size_t tokens, std::size_t voxels, std::size_t channels, std::size_t depth = 1);
  static ViewEncoderParams init(std::size_t tokens, std::size_t voxels, std::size_t channels, std::size_t depth,
                                Rng& rng);

  std::size_t channels() const { return view_embedding.dim(1); }
  void collect(ParamList& params, const std::string& prefix);
};

// q/k/v/output projections of the cross attention, each C -> C.
struct FusionParams {
  Linear query, key, value, output;
  AttentionOptions attention;

  static FusionParams zeros(std::size_t channels);
  // Kaiming projections; the output projection stays zero so the fused map
  // starts as an exact copy of its input.
  static FusionParams init(std::size_t channels, Rng& rng);
  void collect(ParamList& params, const std::string& prefix);
};

struct ViewTokenSet {
  std::vector<Tensor> tokens;  // T'_r, each (M, C)
  Tensor concatenated;         // (M * R, C)
};

ViewTokenSet make_token_set(std::vector<Tensor> tokens);
// Row-stacks matrices with equal column counts.
Tensor concat_rows(const std::vector<Tensor>& parts);
// (H, W, D, C) volumes flattened to (HWD, C) and stacked.
Tensor concat_flattened(const std::vector<Tensor>& volumes);

struct EncoderLayerCache {
  Tensor input, q, k, v, attended, residual, hidden_pre, hidden;
  AttentionCache attention;
};

struct EncoderCache {
  Shape volume_shape;
  Tensor flat;       // flattened V'_r
  Tensor projected;  // after input projection
  std::vector<EncoderLayerCache> layers;
};

// T'_r from V'_r.
Tensor encode_view(const Tensor& view, const ViewEncoderParams& params, EncoderCache* cache = nullptr);
// Returns dL/dV'_r and accumulates parameter gradients.
Tensor encode_view_backward(ViewEncoderParams& params, const EncoderCache& cache, const Tensor& grad_token);

struct FusionCache {
  Shape volume_shape;
  Tensor flat, source, q, k, v, attended;
  AttentionCache attention;
};

struct FusionGrads {
  Tensor volume;  // dL/dV'_r
  Tensor source;  // dL/d(keys/values source)
};

// V''_r = V'_r + out(softmax_keys(q k^T * s) v) with q from V'_r and k, v
// from `source` (M * R, C).
Tensor cross_view_fusion(const Tensor& view, const Tensor& source, const FusionParams& params,
                         FusionCache* cache = nullptr);
FusionGrads cross_view_fusion_backward(FusionParams& params, const FusionCache& cache, const Tensor& grad_out);

struct CvtrParams {
  std::vector<ViewEncoderParams> encoders;  // empty for feature-sourced schemes
  std::vector<FusionParams> fusion;         // one per view, or one when shared
  FusionScheme scheme = FusionScheme::all_for_one_tokens;

  static CvtrParams init(std::size_t views, std::size_t tokens, std::size_t voxels, std::size_t channels,
                         std::size_t depth, FusionScheme scheme, Rng& rng);

  const FusionParams& fusion_for(std::size_t r) const { return fusion.size() == 1 ? fusion[0] : fusion.at(r); }
  FusionParams& fusion_for(std::size_t r) { return fusion.size() == 1 ? fusion[0] : fusion.at(r); }
  void set_attention(const AttentionOptions& options);
  void set_wiring(TokenWiring wiring);
  void collect(ParamList& params, const std::string& prefix);
};

struct CvtrCache {
  std::vector<EncoderCache> encoders;
  ViewTokenSet tokens;
  std::vector<FusionCache> fusion;
};

// Augmented maps V''_r for every view, all fused against the same source.
std::vector<Tensor> cvtr_forward(const std::vector<Tensor>& views, const CvtrParams& params,
                                 CvtrCache* cache = nullptr);
std::vector<Tensor> cvtr_backward(CvtrParams& params, const CvtrCache& cache, const std::vector<Tensor>& grad_out);

}  // namespace cvs
