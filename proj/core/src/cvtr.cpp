#include "cvs/cvtr.hpp"

#include <cmath>

#include "cvs/error.hpp"

namespace cvs {

double AttentionOptions::scale(std::size_t channels) const {
  if (!scaled) return 1.0;
  return 1.0 / std::sqrt(static_cast<double>(channels / heads));
}

std::string to_string(TokenWiring wiring) {
  return wiring == TokenWiring::concatenate ? "concatenate" : "pooled-add";
}

std::string to_string(FusionScheme scheme) {
  switch (scheme) {
    case FusionScheme::all_for_one_tokens: return "all-for-one-tokens";
    case FusionScheme::all_for_one_features: return "all-for-one-features";
    case FusionScheme::all: return "all";
  }
  return "unknown";
}

TokenWiring parse_token_wiring(const std::string& text) {
  if (text == "concatenate" || text == "concat") return TokenWiring::concatenate;
  if (text == "pooled-add") return TokenWiring::pooled_add;
  throw ConfigError("unknown token wiring '" + text + "' (expected concatenate|pooled-add)");
}

FusionScheme parse_fusion_scheme(const std::string& text) {
  if (text == "all-for-one-tokens") return FusionScheme::all_for_one_tokens;
  if (text == "all-for-one-features") return FusionScheme::all_for_one_features;
  if (text == "all") return FusionScheme::all;
  throw ConfigError("unknown fusion scheme '" + text + "' (expected all|all-for-one-features|all-for-one-tokens)");
}

// ---------------------------------------------------------------- params

EncoderLayer EncoderLayer::kaiming(std::size_t channels, Rng& rng) {
  EncoderLayer l;
  l.query = Linear::kaiming(channels, channels, rng);
  l.key = Linear::kaiming(channels, channels, rng, false);
  l.value = Linear::kaiming(channels, channels, rng);
  l.output = Linear::kaiming(channels, channels, rng);
  l.hidden = Linear::kaiming(channels, 2 * channels, rng);
  l.project = Linear::kaiming(2 * channels, channels, rng);
  return l;
}

void EncoderLayer::collect(ParamList& params, const std::string& prefix) {
  query.collect(params, prefix + ".query");
  key.collect(params, prefix + ".key");
  value.collect(params, prefix + ".value");
  output.collect(params, prefix + ".output");
  hidden.collect(params, prefix + ".ffn_hidden");
  project.collect(params, prefix + ".ffn_project");
}

namespace {

EncoderLayer zero_layer(std::size_t c) {
  EncoderLayer l;
  l.query = Linear(c, c);
  l.key = Linear(c, c, false);
  l.value = Linear(c, c);
  l.output = Linear(c, c);
  l.hidden = Linear(c, 2 * c);
  l.project = Linear(2 * c, c);
  return l;
}

void check_token_budget(std::size_t tokens, std::size_t voxels) {
  if (tokens == 0 || tokens >= voxels) {
    throw ConfigError("view token count M=" + std::to_string(tokens) + " must satisfy 0 < M < H*W*D=" +
                      std::to_string(voxels));
  }
}

}  // namespace

ViewEncoderParams ViewEncoderParams::zeros(std::size_t tokens, std::size_t voxels, std::size_t channels,
                                           std::size_t depth) {
  check_token_budget(tokens, voxels);
  ViewEncoderParams p;
  p.tokens = tokens;
  p.voxels = voxels;
  p.view_embedding = Tensor({tokens, channels});
  p.position_embedding = Tensor({tokens + voxels, channels});
  p.input_projection = Linear(channels, channels);
  for (std::size_t i = 0; i < depth; ++i) p.layers.push_back(zero_layer(channels));
  return p;
}

ViewEncoderParams ViewEncoderParams::init(std::size_t tokens, std::size_t voxels, std::size_t channels,
                                          std::size_t depth, Rng& rng) {
  check_token_budget(tokens, voxels);
  ViewEncoderParams p;
  p.tokens = tokens;
  p.voxels = voxels;
  p.view_embedding = Tensor::randn({tokens, channels}, rng, 0.02);
  p.position_embedding = Tensor::randn({tokens + voxels, channels}, rng, 0.02);
  p.input_projection = Linear::kaiming(channels, channels, rng);
  for (std::size_t i = 0; i < depth; ++i) p.layers.push_back(EncoderLayer::kaiming(channels, rng));
  return p;
}

void ViewEncoderParams::collect(ParamList& params, const std::string& prefix) {
  params.push_back({prefix + ".view_embedding", &view_embedding});
  params.push_back({prefix + ".position_embedding", &position_embedding});
  input_projection.collect(params, prefix + ".input_projection");
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(params, prefix + ".layer" + std::to_string(i));
}

FusionParams FusionParams::zeros(std::size_t channels) {
  FusionParams p;
  p.query = Linear(channels, channels);
  p.key = Linear(channels, channels, false);
  p.value = Linear(channels, channels);
  p.output = Linear(channels, channels);
  return p;
}

FusionParams FusionParams::init(std::size_t channels, Rng& rng) {
  FusionParams p;
  p.query = Linear::kaiming(channels, channels, rng);
  p.key = Linear::kaiming(channels, channels, rng, false);
  p.value = Linear::kaiming(channels, channels, rng);
  p.output = Linear(channels, channels);
  return p;
}

void FusionParams::collect(ParamList& params, const std::string& prefix) {
  query.collect(params, prefix + ".query");
  key.collect(params, prefix + ".key");
  value.collect(params, prefix + ".value");
  output.collect(params, prefix + ".output");
}

CvtrParams CvtrParams::init(std::size_t views, std::size_t tokens, std::size_t voxels, std::size_t channels,
                            std::size_t depth, FusionScheme scheme, Rng& rng) {
  if (views == 0) throw ConfigError("CVTr needs at least one view");
  CvtrParams p;
  p.scheme = scheme;
  if (scheme == FusionScheme::all_for_one_tokens) {
    for (std::size_t r = 0; r < views; ++r) p.encoders.push_back(ViewEncoderParams::init(tokens, voxels, channels, depth, rng));
  }
  const std::size_t fusion_sets = scheme == FusionScheme::all ? 1 : views;
  for (std::size_t r = 0; r < fusion_sets; ++r) p.fusion.push_back(FusionParams::init(channels, rng));
  return p;
}

void CvtrParams::set_attention(const AttentionOptions& options) {
  for (auto& e : encoders) e.attention = options;
  for (auto& f : fusion) f.attention = options;
}

void CvtrParams::set_wiring(TokenWiring wiring) {
  for (auto& e : encoders) e.wiring = wiring;
}

void CvtrParams::collect(ParamList& params, const std::string& prefix) {
  for (std::size_t r = 0; r < encoders.size(); ++r) encoders[r].collect(params, prefix + ".encoder" + std::to_string(r));
  for (std::size_t r = 0; r < fusion.size(); ++r) fusion[r].collect(params, prefix + ".fusion" + std::to_string(r));
}

// ---------------------------------------------------------------- tokens

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t cols = parts.front().dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows part");
    if (p.dim(1) != cols) throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor({rows, cols}, std::move(data));
}

Tensor concat_flattened(const std::vector<Tensor>& volumes) {
  std::vector<Tensor> flat;
  flat.reserve(volumes.size());
  for (const auto& v : volumes) {
    require_rank(v, 4, "concat_flattened");
    flat.push_back(v.reshaped({v.dim(0) * v.dim(1) * v.dim(2), v.dim(3)}));
  }
  return concat_rows(flat);
}

ViewTokenSet make_token_set(std::vector<Tensor> tokens) {
  ViewTokenSet set;
  set.concatenated = concat_rows(tokens);
  set.tokens = std::move(tokens);
  return set;
}

namespace {

Tensor rows_slice(const Tensor& t, std::size_t begin, std::size_t count) {
  const std::size_t c = t.dim(1);
  std::vector<double> data(t.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                           t.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return Tensor({count, c}, std::move(data));
}

Tensor flatten_volume(const Tensor& v, const char* what) {
  require_rank(v, 4, what);
  return v.reshaped({v.dim(0) * v.dim(1) * v.dim(2), v.dim(3)});
}

void accumulate(std::span<double> dst, const Tensor& src, std::size_t offset = 0) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[offset + i] += src[i];
}

// ---------------------------------------------------------------- encoder layer

Tensor layer_forward(const EncoderLayer& layer, const Tensor& x, const AttentionOptions& opts, EncoderLayerCache& c) {
  c.input = x;
  c.q = layer.query.forward(x);
  c.k = layer.key.forward(x);
  c.v = layer.value.forward(x);
  const double scale = opts.scale(x.dim(1));
  c.attended = attention_forward(c.q, c.k, c.v, opts.heads, scale, &c.attention);
  c.residual = add(x, layer.output.forward(c.attended));
  c.hidden_pre = layer.hidden.forward(c.residual);
  c.hidden = silu(c.hidden_pre);
  return add(c.residual, layer.project.forward(c.hidden));
}

Tensor layer_backward(EncoderLayer& layer, const EncoderLayerCache& c, const AttentionOptions& opts,
                      const Tensor& grad_y) {
  Tensor grad_residual = grad_y;
  const Tensor grad_hidden = layer.project.backward(c.hidden, grad_y);
  add_into(grad_residual, layer.hidden.backward(c.residual, silu_backward(c.hidden_pre, grad_hidden)));
  const Tensor grad_attended = layer.output.backward(c.attended, grad_residual);
  const double scale = opts.scale(c.input.dim(1));
  const AttentionGrads g = attention_backward(c.q, c.k, c.v, c.attention, opts.heads, scale, grad_attended);
  Tensor grad_x = grad_residual;
  add_into(grad_x, layer.query.backward(c.input, g.q));
  add_into(grad_x, layer.key.backward(c.input, g.k));
  add_into(grad_x, layer.value.backward(c.input, g.v));
  return grad_x;
}

}  // namespace

// ---------------------------------------------------------------- encoder

Tensor encode_view(const Tensor& view, const ViewEncoderParams& params, EncoderCache* cache) {
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.volume_shape = view.shape();
  c.flat = flatten_volume(view, "encode_view");
  const std::size_t n = c.flat.dim(0), ch = c.flat.dim(1), m = params.tokens;
  if (n != params.voxels || ch != params.channels() ||
      params.position_embedding.dim(0) != m + n || params.position_embedding.dim(1) != ch) {
    throw DimensionError("encode_view: view " + shape_str(view.shape()) + " incompatible with view embedding " +
                         shape_str(params.view_embedding.shape()) + " and position embedding " +
                         shape_str(params.position_embedding.shape()));
  }
  c.projected = params.input_projection.forward(c.flat);

  Tensor seq;
  if (params.wiring == TokenWiring::concatenate) {
    seq = concat_rows({params.view_embedding, c.projected});
    add_into(seq, params.position_embedding);
  } else {
    seq = params.view_embedding;
    std::vector<double> pooled(ch, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < ch; ++j) pooled[j] += c.projected[i * ch + j];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < ch; ++j)
        seq[i * ch + j] += pooled[j] / static_cast<double>(n) + params.position_embedding[i * ch + j];
  }

  c.layers.assign(params.layers.size(), {});
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    seq = layer_forward(params.layers[l], seq, params.attention, c.layers[l]);
  }
  return rows_slice(seq, 0, m);
}

Tensor encode_view_backward(ViewEncoderParams& params, const EncoderCache& cache, const Tensor& grad_token) {
  const std::size_t n = cache.flat.dim(0), ch = cache.flat.dim(1), m = params.tokens;
  require_shape(grad_token, {m, ch}, "encode_view_backward grad");
  const std::size_t seq_len = params.wiring == TokenWiring::concatenate ? m + n : m;
  Tensor grad_seq({seq_len, ch});
  std::copy(grad_token.data().begin(), grad_token.data().end(), grad_seq.data().begin());
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    grad_seq = layer_backward(params.layers[l], cache.layers[l], params.attention, grad_seq);
  }

  Tensor grad_projected({n, ch});
  accumulate(params.view_embedding.grad(), rows_slice(grad_seq, 0, m));
  if (params.wiring == TokenWiring::concatenate) {
    accumulate(params.position_embedding.grad(), grad_seq);
    grad_projected = rows_slice(grad_seq, m, n);
  } else {
    accumulate(params.position_embedding.grad(), grad_seq);
    std::vector<double> pooled(ch, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < ch; ++j) pooled[j] += grad_seq[i * ch + j];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < ch; ++j) grad_projected[i * ch + j] = pooled[j] / static_cast<double>(n);
  }
  return params.input_projection.backward(cache.flat, grad_projected).reshaped(cache.volume_shape);
}

// ---------------------------------------------------------------- fusion

Tensor cross_view_fusion(const Tensor& view, const Tensor& source, const FusionParams& params, FusionCache* cache) {
  FusionCache local;
  FusionCache& c = cache ? *cache : local;
  c.volume_shape = view.shape();
  c.flat = flatten_volume(view, "cross_view_fusion");
  require_rank(source, 2, "cross_view_fusion source");
  const std::size_t ch = c.flat.dim(1);
  if (source.dim(1) != ch || params.query.in_features() != ch) {
    throw DimensionError("cross_view_fusion: view " + shape_str(view.shape()) + ", source " +
                         shape_str(source.shape()) + ", projections " + shape_str(params.query.weight.shape()));
  }
  c.source = source;
  c.q = params.query.forward(c.flat);
  c.k = params.key.forward(source);
  c.v = params.value.forward(source);
  c.attended = attention_forward(c.q, c.k, c.v, params.attention.heads, params.attention.scale(ch), &c.attention);
  Tensor out = c.flat;
  add_into(out, params.output.forward(c.attended));
  return out.reshaped(c.volume_shape);
}

FusionGrads cross_view_fusion_backward(FusionParams& params, const FusionCache& c, const Tensor& grad_out) {
  const Tensor g = flatten_volume(grad_out, "cross_view_fusion_backward grad");
  require_shape(g, c.flat.shape(), "cross_view_fusion_backward grad");
  const std::size_t ch = c.flat.dim(1);
  const Tensor grad_attended = params.output.backward(c.attended, g);
  const AttentionGrads ag =
      attention_backward(c.q, c.k, c.v, c.attention, params.attention.heads, params.attention.scale(ch), grad_attended);
  Tensor grad_flat = g;
  add_into(grad_flat, params.query.backward(c.flat, ag.q));
  Tensor grad_source = params.key.backward(c.source, ag.k);
  add_into(grad_source, params.value.backward(c.source, ag.v));
  return {grad_flat.reshaped(c.volume_shape), std::move(grad_source)};
}

// ---------------------------------------------------------------- full CVTr

std::vector<Tensor> cvtr_forward(const std::vector<Tensor>& views, const CvtrParams& params, CvtrCache* cache) {
  if (views.empty()) throw DimensionError("cvtr_forward: no views");
  for (const auto& v : views) {
    if (v.shape() != views.front().shape()) throw DimensionError("cvtr_forward: views differ in shape");
  }
  const std::size_t r_count = views.size();
  const std::size_t sets = params.scheme == FusionScheme::all ? 1 : r_count;
  if (params.fusion.size() != sets) {
    throw ConfigError("cvtr_forward: " + std::to_string(params.fusion.size()) + " fusion parameter sets for " +
                      std::to_string(r_count) + " views under scheme " + to_string(params.scheme));
  }

  CvtrCache local;
  CvtrCache& c = cache ? *cache : local;
  Tensor source;
  if (params.scheme == FusionScheme::all_for_one_tokens) {
    if (params.encoders.size() != r_count) throw ConfigError("cvtr_forward: one encoder per view required");
    c.encoders.assign(r_count, {});
    std::vector<Tensor> tokens;
    tokens.reserve(r_count);
    for (std::size_t r = 0; r < r_count; ++r) tokens.push_back(encode_view(views[r], params.encoders[r], &c.encoders[r]));
    c.tokens = make_token_set(std::move(tokens));
    source = c.tokens.concatenated;
  } else {
    c.encoders.clear();
    c.tokens = {};
    source = concat_flattened(views);
  }

  c.fusion.assign(r_count, {});
  std::vector<Tensor> out;
  out.reserve(r_count);
  for (std::size_t r = 0; r < r_count; ++r) {
    out.push_back(cross_view_fusion(views[r], source, params.fusion_for(r), &c.fusion[r]));
  }
  return out;
}

std::vector<Tensor> cvtr_backward(CvtrParams& params, const CvtrCache& cache, const std::vector<Tensor>& grad_out) {
  const std::size_t r_count = cache.fusion.size();
  if (grad_out.size() != r_count) throw DimensionError("cvtr_backward: one gradient per view required");
  std::vector<Tensor> grad_views;
  grad_views.reserve(r_count);
  Tensor grad_source(cache.fusion.front().source.shape());
  for (std::size_t r = 0; r < r_count; ++r) {
    FusionGrads g = cross_view_fusion_backward(params.fusion_for(r), cache.fusion[r], grad_out[r]);
    add_into(grad_source, g.source);
    grad_views.push_back(std::move(g.volume));
  }

  if (params.scheme == FusionScheme::all_for_one_tokens) {
    const std::size_t m = cache.tokens.tokens.front().dim(0);
    for (std::size_t r = 0; r < r_count; ++r) {
      const Tensor grad_token = rows_slice(grad_source, r * m, m);
      add_into(grad_views[r], encode_view_backward(params.encoders[r], cache.encoders[r], grad_token));
    }
  } else {
    const std::size_t n = cache.fusion.front().flat.dim(0);
    for (std::size_t r = 0; r < r_count; ++r) add_into(grad_views[r], rows_slice(grad_source, r * n, n));
  }
  return grad_views;
}

}  // namespace cvs
