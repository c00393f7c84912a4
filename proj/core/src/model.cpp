#include "cvs/model.hpp"

#include "cvs/error.hpp"
#include "cvs/ops.hpp"

namespace cvs {

namespace {

constexpr ConvGeometry kDown{3, 2, 1};
constexpr ConvGeometry kSame{3, 1, 1};
constexpr ConvGeometry kUp{4, 2, 1};

std::vector<RotationSpec> rotation_specs(const ModelConfig& c) {
  std::vector<RotationSpec> specs;
  for (const auto& a : c.rotations) specs.push_back(build_rotation(a[0], a[1], a[2]));
  return specs;
}

std::size_t decoder_in_channels(const ModelConfig& c) {
  return c.aggregate == Aggregate::concat ? c.channels * c.view_count() : c.channels;
}

void apply_attention_config(Model& m) {
  m.cvtr.set_attention({m.config.heads, m.config.attention_scale});
  m.cvtr.set_wiring(m.config.wiring);
}

}  // namespace

Model Model::init(const ModelConfig& config) {
  validate(config);
  Rng rng(config.seed);
  const std::size_t c = config.channels;
  const auto classes = static_cast<std::size_t>(config.num_classes);
  Model m;
  m.config = config;
  m.semantic_in = Linear::kaiming(classes, c, rng);
  m.geometric_in = Linear::kaiming(1, c, rng);
  m.down1 = Conv3d::kaiming(c, c, kDown, rng);
  m.res1 = Conv3d::kaiming(c, c, kSame, rng);
  m.down2 = Conv3d::kaiming(c, c, kDown, rng);
  m.res2 = Conv3d::kaiming(c, c, kSame, rng);
  m.mvfs = MvfsLayer::kaiming(config.kernel_size, rotation_specs(config), c, c, rng);
  m.cvtr = CvtrParams::init(config.view_count(), config.tokens, config.feature_voxels(), c, config.encoder_depth,
                            config.fusion, rng);
  apply_attention_config(m);
  m.up1 = ConvTranspose3d::kaiming(decoder_in_channels(config), c, kUp, rng);
  m.up2 = ConvTranspose3d::kaiming(c, c, kUp, rng);
  m.head = Linear(c, classes);  // logits start at 0, loss at ln(classes)
  return m;
}

Model Model::zeros(const ModelConfig& config) {
  Model m = init(config);
  for (auto& p : m.parameters()) p.tensor->fill(0.0);
  return m;
}

ParamList Model::parameters() {
  ParamList params;
  semantic_in.collect(params, "semantic_in");
  geometric_in.collect(params, "geometric_in");
  down1.collect(params, "down1");
  res1.collect(params, "res1");
  down2.collect(params, "down2");
  res2.collect(params, "res2");
  if (config.use_mvfs) mvfs.collect(params, "mvfs");
  if (config.use_cvtr) cvtr.collect(params, "cvtr");
  up1.collect(params, "up1");
  up2.collect(params, "up2");
  head.collect(params, "head");
  return params;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

namespace {

Tensor flat(const Tensor& v) { return v.reshaped({v.dim(0) * v.dim(1) * v.dim(2), v.dim(3)}); }

Tensor as_volume(const Tensor& f, const Shape& like, std::size_t channels) {
  return f.reshaped({like[0], like[1], like[2], channels});
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  const Shape& s = parts.front().shape();
  const std::size_t c = s[3], n = s[0] * s[1] * s[2];
  Tensor out({s[0], s[1], s[2], c * parts.size()});
  for (std::size_t p = 0; p < parts.size(); ++p)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c * parts.size() + p * c + j] = parts[p][i * c + j];
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, std::size_t parts) {
  const Shape& s = t.shape();
  const std::size_t total = s[3], c = total / parts, n = s[0] * s[1] * s[2];
  std::vector<Tensor> out(parts, Tensor({s[0], s[1], s[2], c}));
  for (std::size_t p = 0; p < parts; ++p)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) out[p][i * c + j] = t[i * total + p * c + j];
  return out;
}

// e = h + res(silu h), h = down(x)
Tensor residual_stage(const Conv3d& down, const Conv3d& res, const Tensor& x, Tensor& h, Tensor& s) {
  h = down.forward(x);
  s = silu(h);
  return add(h, res.forward(s));
}

Tensor residual_stage_backward(Conv3d& down, Conv3d& res, const Tensor& x, const Tensor& h, const Tensor& s,
                               const Tensor& grad_e) {
  Tensor grad_h = grad_e;
  add_into(grad_h, silu_backward(h, res.backward(s, grad_e)));
  return down.backward(x, grad_h);
}

}  // namespace

Tensor model_forward(const Model& model, const Tensor& semantic, const Tensor& geometric, ModelCache* cache) {
  const ModelConfig& cfg = model.config;
  const auto classes = static_cast<std::size_t>(cfg.num_classes);
  const Shape vol{cfg.volume[0], cfg.volume[1], cfg.volume[2]};
  require_shape(semantic, {vol[0], vol[1], vol[2], classes}, "model_forward semantic volume");
  require_shape(geometric, {vol[0], vol[1], vol[2], 1}, "model_forward geometric volume");

  ModelCache local;
  ModelCache& c = cache ? *cache : local;
  c.semantic_flat = flat(semantic);
  c.geometric_flat = flat(geometric);
  Tensor x0f = model.semantic_in.forward(c.semantic_flat);
  add_into(x0f, model.geometric_in.forward(c.geometric_flat));
  c.x0 = as_volume(x0f, vol, cfg.channels);
  c.a0 = silu(c.x0);
  c.e1 = residual_stage(model.down1, model.res1, c.a0, c.h1, c.s1);
  c.a1 = silu(c.e1);
  c.volume = residual_stage(model.down2, model.res2, c.a1, c.h2, c.s2);

  c.views = cfg.use_mvfs ? mvfs_forward(c.volume, model.mvfs) : std::vector<Tensor>{c.volume};
  c.augmented = cfg.use_cvtr ? cvtr_forward(c.views, model.cvtr, &c.cvtr) : c.views;

  if (cfg.aggregate == Aggregate::sum) {
    c.aggregated = c.augmented.front();
    for (std::size_t r = 1; r < c.augmented.size(); ++r) add_into(c.aggregated, c.augmented[r]);
  } else {
    c.aggregated = concat_channels(c.augmented);
  }

  c.u1 = model.up1.forward(c.aggregated);
  add_into(c.u1, c.e1);
  c.b1 = silu(c.u1);
  c.u2 = model.up2.forward(c.b1);
  add_into(c.u2, c.x0);
  c.b2 = silu(c.u2);
  c.b2_flat = flat(c.b2);
  return as_volume(model.head.forward(c.b2_flat), vol, classes);
}

Tensor model_forward(const Model& model, const SceneSample& sample, ModelCache* cache) {
  return model_forward(model, sample.semantic, sample.geometric, cache);
}

InputGrads model_backward(Model& model, const ModelCache& c, const Tensor& grad_logits) {
  const ModelConfig& cfg = model.config;
  const Tensor g_b2 = model.head.backward(c.b2_flat, flat(grad_logits)).reshaped(c.b2.shape());
  const Tensor g_u2 = silu_backward(c.u2, g_b2);
  Tensor g_x0 = g_u2;
  const Tensor g_b1 = model.up2.backward(c.b1, g_u2);
  const Tensor g_u1 = silu_backward(c.u1, g_b1);
  Tensor g_e1 = g_u1;
  const Tensor g_agg = model.up1.backward(c.aggregated, g_u1);

  std::vector<Tensor> g_aug;
  if (cfg.aggregate == Aggregate::sum) {
    g_aug.assign(c.augmented.size(), g_agg);
  } else {
    g_aug = split_channels(g_agg, c.augmented.size());
  }
  const std::vector<Tensor> g_views = cfg.use_cvtr ? cvtr_backward(model.cvtr, c.cvtr, g_aug) : g_aug;
  const Tensor g_volume = cfg.use_mvfs ? mvfs_backward(c.volume, model.mvfs, g_views) : g_views.front();

  const Tensor g_a1 = residual_stage_backward(model.down2, model.res2, c.a1, c.h2, c.s2, g_volume);
  add_into(g_e1, silu_backward(c.e1, g_a1));
  const Tensor g_a0 = residual_stage_backward(model.down1, model.res1, c.a0, c.h1, c.s1, g_e1);
  add_into(g_x0, silu_backward(c.x0, g_a0));

  const Tensor g_x0f = flat(g_x0);
  InputGrads out;
  const Shape& vs = c.x0.shape();
  out.semantic = model.semantic_in.backward(c.semantic_flat, g_x0f).reshaped({vs[0], vs[1], vs[2], c.semantic_flat.dim(1)});
  out.geometric = model.geometric_in.backward(c.geometric_flat, g_x0f).reshaped({vs[0], vs[1], vs[2], 1});
  return out;
}

CrossEntropy scene_loss(const Tensor& logits, const SceneSample& sample) {
  const std::size_t classes = logits.dim(3);
  const Tensor flat_logits = logits.reshaped({logits.size() / classes, classes});
  CrossEntropy ce = cross_entropy(flat_logits, sample.labels, kIgnoreLabel);
  ce.grad = ce.grad.reshaped(logits.shape());
  return ce;
}

std::vector<int> predict_labels(const Tensor& logits) {
  require_rank(logits, 4, "predict_labels");
  const std::size_t classes = logits.dim(3), n = logits.size() / classes;
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (logits[i * classes + c] > logits[i * classes + best]) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cvs
