#include "cvs/gradcheck_suite.hpp"

#include "cvs/cvtr.hpp"
#include "cvs/error.hpp"
#include "cvs/model.hpp"
#include "cvs/mvfs.hpp"
#include "cvs/ops.hpp"

namespace cvs {

namespace {

void add_grad(Tensor& dst, const Tensor& g) {
  auto d = dst.grad();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
}

void tensor_checks(std::uint64_t seed, std::vector<GradCheckReport>& out) {
  Rng rng(seed);
  DifferentiableOp mm{"matmul",
                      [](std::span<const Tensor> in) { return matmul(in[0], in[1]); },
                      [](std::span<Tensor> in, const Tensor& g) { matmul_backward(in[0], in[1], g); }};
  out.push_back(grad_check(mm, {Tensor::randn({3, 4}, rng), Tensor::randn({4, 2}, rng)}, 1e-5, 1e-4));

  DifferentiableOp sm{"softmax",
                      [](std::span<const Tensor> in) { return softmax(in[0], 1); },
                      [](std::span<Tensor> in, const Tensor& g) {
                        add_grad(in[0], softmax_backward(softmax(in[0], 1), g, 1));
                      }};
  out.push_back(grad_check(sm, {Tensor::randn({3, 5}, rng)}, 1e-5, 1e-4));

  const std::vector<int> labels{0, 2, 1, 3, 2};
  DifferentiableOp ce{"cross_entropy",
                      [labels](std::span<const Tensor> in) {
                        return Tensor({1}, std::vector<double>{cross_entropy(in[0], labels, 3).loss});
                      },
                      [labels](std::span<Tensor> in, const Tensor& g) {
                        Tensor grad = cross_entropy(in[0], labels, 3).grad;
                        for (auto& v : grad.data()) v *= g[0];
                        add_grad(in[0], grad);
                      }};
  out.push_back(grad_check(ce, {Tensor::randn({5, 4}, rng)}, 1e-5, 1e-4));
}

void mvfs_checks(std::uint64_t seed, std::vector<GradCheckReport>& out) {
  Rng rng(seed + 1);
  const Vec3 position{1.3, 0.6, 1.8};
  DifferentiableOp interp{"interpolate",
                          [position](std::span<const Tensor> in) {
                            const auto f = interpolate(in[0], position);
                            return Tensor({f.size()}, f);
                          },
                          [position](std::span<Tensor> in, const Tensor& g) {
                            Tensor grad(in[0].shape());
                            interpolate_backward(position, g.data(), grad);
                            add_grad(in[0], grad);
                          }};
  out.push_back(grad_check(interp, {Tensor::randn({3, 3, 3, 2}, rng)}, 1e-5, 1e-4));

  const MvfsLayer layer = MvfsLayer::kaiming(3, {build_rotation(45, 0, 0)}, 2, 3, rng);
  DifferentiableOp conv{"synth_view_conv",
                        [layer](std::span<const Tensor> in) {
                          MvfsLayer l = layer;
                          l.weights(0) = in[1];
                          return synth_view_conv(in[0], l, 0);
                        },
                        [layer](std::span<Tensor> in, const Tensor& g) {
                          MvfsLayer l = layer;
                          l.weights(0) = in[1];
                          add_grad(in[0], synth_view_conv_backward(in[0], l, 0, g));
                          add_grad(in[1], l.weights(0).grad_tensor());
                        }};
  out.push_back(grad_check(conv, {Tensor::randn({4, 4, 4, 2}, rng), layer.weights(0)}, 1e-5, 1e-4));
}

FusionParams random_fusion(std::size_t c, Rng& rng) {
  FusionParams p = FusionParams::init(c, rng);
  p.output = Linear::kaiming(c, c, rng);
  p.output.bias = Tensor::randn({c}, rng, 0.1);
  return p;
}

void cvtr_checks(std::uint64_t seed, std::vector<GradCheckReport>& out) {
  Rng rng(seed + 2);
  const std::size_t c = 3;
  ViewEncoderParams enc = ViewEncoderParams::init(2, 4, c, 1, rng);
  enc.view_embedding = Tensor::randn(enc.view_embedding.shape(), rng, 0.5);
  enc.position_embedding = Tensor::randn(enc.position_embedding.shape(), rng, 0.5);
  DifferentiableOp encode{"encode_view",
                          [enc](std::span<const Tensor> in) {
                            ViewEncoderParams p = enc;
                            p.view_embedding = in[1];
                            p.position_embedding = in[2];
                            return encode_view(in[0], p);
                          },
                          [enc](std::span<Tensor> in, const Tensor& g) {
                            ViewEncoderParams p = enc;
                            p.view_embedding = in[1];
                            p.position_embedding = in[2];
                            EncoderCache cache;
                            encode_view(in[0], p, &cache);
                            add_grad(in[0], encode_view_backward(p, cache, g));
                            add_grad(in[1], p.view_embedding.grad_tensor());
                            add_grad(in[2], p.position_embedding.grad_tensor());
                          }};
  out.push_back(grad_check(encode, {Tensor::randn({1, 2, 2, c}, rng), enc.view_embedding, enc.position_embedding},
                           1e-5, 1e-4));

  const FusionParams fusion = random_fusion(c, rng);
  DifferentiableOp fuse{"cross_view_fusion",
                        [fusion](std::span<const Tensor> in) { return cross_view_fusion(in[0], in[1], fusion); },
                        [fusion](std::span<Tensor> in, const Tensor& g) {
                          FusionParams p = fusion;
                          FusionCache cache;
                          cross_view_fusion(in[0], in[1], p, &cache);
                          const FusionGrads fg = cross_view_fusion_backward(p, cache, g);
                          add_grad(in[0], fg.volume);
                          add_grad(in[1], fg.source);
                        }};
  out.push_back(grad_check(fuse, {Tensor::randn({2, 1, 2, c}, rng), Tensor::randn({4, c}, rng)}, 1e-5, 1e-4));

  // Fusion weights, checked through the query and output projections.
  DifferentiableOp fuse_w{"cross_view_fusion[weights]",
                          [fusion](std::span<const Tensor> in) {
                            FusionParams p = fusion;
                            p.query.weight = in[2];
                            p.output.weight = in[3];
                            return cross_view_fusion(in[0], in[1], p);
                          },
                          [fusion](std::span<Tensor> in, const Tensor& g) {
                            FusionParams p = fusion;
                            p.query.weight = in[2];
                            p.output.weight = in[3];
                            FusionCache cache;
                            cross_view_fusion(in[0], in[1], p, &cache);
                            const FusionGrads fg = cross_view_fusion_backward(p, cache, g);
                            add_grad(in[0], fg.volume);
                            add_grad(in[1], fg.source);
                            add_grad(in[2], p.query.weight.grad_tensor());
                            add_grad(in[3], p.output.weight.grad_tensor());
                          }};
  out.push_back(grad_check(fuse_w,
                           {Tensor::randn({2, 1, 2, c}, rng), Tensor::randn({4, c}, rng), fusion.query.weight,
                            fusion.output.weight},
                           1e-5, 1e-4));

  CvtrParams cvtr = CvtrParams::init(2, 2, 4, c, 1, FusionScheme::all_for_one_tokens, rng);
  for (auto& f : cvtr.fusion) f = random_fusion(c, rng);
  for (auto& e : cvtr.encoders) e.view_embedding = Tensor::randn(e.view_embedding.shape(), rng, 0.5);
  DifferentiableOp full{"cvtr_forward",
                        [cvtr](std::span<const Tensor> in) {
                          return concat_flattened(cvtr_forward({in[0], in[1]}, cvtr));
                        },
                        [cvtr](std::span<Tensor> in, const Tensor& g) {
                          CvtrParams p = cvtr;
                          CvtrCache cache;
                          cvtr_forward({in[0], in[1]}, p, &cache);
                          const std::size_t n = 4;
                          std::vector<Tensor> grads;
                          for (std::size_t r = 0; r < 2; ++r) {
                            std::vector<double> part(g.data().begin() + static_cast<std::ptrdiff_t>(r * n * c),
                                                     g.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * n * c));
                            grads.emplace_back(in[r].shape(), std::move(part));
                          }
                          const auto gv = cvtr_backward(p, cache, grads);
                          add_grad(in[0], gv[0]);
                          add_grad(in[1], gv[1]);
                        }};
  out.push_back(grad_check(full, {Tensor::randn({1, 2, 2, c}, rng), Tensor::randn({1, 2, 2, c}, rng)}, 1e-5, 1e-4));
}

// Toy network from the model defaults (16x8x16 -> 4x2x4, C = 8, 4 classes).
// Every parameter tensor and both inputs are perturbed at a sample of
// seeded entries; the scalar is the ignore-masked cross-entropy.
void pipeline_checks(std::uint64_t seed, std::vector<GradCheckReport>& out) {
  ModelConfig cfg;
  cfg.seed = seed;
  Model model = Model::init(cfg);
  Rng rng(seed + 3);
  for (auto& f : model.cvtr.fusion) {
    f.output = Linear::kaiming(cfg.channels, cfg.channels, rng);
  }
  model.head = Linear::kaiming(cfg.channels, static_cast<std::size_t>(cfg.num_classes), rng);
  const SceneSample scene = generate_scene(seed, cfg.volume, cfg.num_classes);

  std::vector<Tensor> inputs{scene.semantic, scene.geometric};
  for (const auto& p : model.parameters()) inputs.push_back(*p.tensor);

  auto rebuild = [model](std::span<const Tensor> in) {
    Model m = model;
    auto params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].tensor = in[i + 2];
    return m;
  };
  DifferentiableOp op{"model_forward",
                      [rebuild, scene](std::span<const Tensor> in) {
                        const Model m = rebuild(in);
                        const Tensor logits = model_forward(m, in[0], in[1]);
                        return Tensor({1}, std::vector<double>{scene_loss(logits, scene).loss});
                      },
                      [rebuild, scene](std::span<Tensor> in, const Tensor& g) {
                        Model m = rebuild(in);
                        ModelCache cache;
                        const Tensor logits = model_forward(m, in[0], in[1], &cache);
                        CrossEntropy ce = scene_loss(logits, scene);
                        for (auto& v : ce.grad.data()) v *= g[0];
                        const InputGrads ig = model_backward(m, cache, ce.grad);
                        add_grad(in[0], ig.semantic);
                        add_grad(in[1], ig.geometric);
                        auto params = m.parameters();
                        for (std::size_t i = 0; i < params.size(); ++i) add_grad(in[i + 2], params[i].tensor->grad_tensor());
                      }};
  GradCheckOptions options;
  options.max_entries_per_input = 4;
  options.seed = seed;
  out.push_back(grad_check(op, std::move(inputs), options));
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const std::string& module, std::uint64_t seed) {
  const bool all = module == "all";
  if (!all && module != "tensor" && module != "mvfs" && module != "cvtr" && module != "pipeline") {
    throw ConfigError("unknown gradcheck module '" + module + "' (expected all|tensor|mvfs|cvtr|pipeline)");
  }
  std::vector<GradCheckReport> out;
  if (all || module == "tensor") tensor_checks(seed, out);
  if (all || module == "mvfs") mvfs_checks(seed, out);
  if (all || module == "cvtr") cvtr_checks(seed, out);
  if (all || module == "pipeline") pipeline_checks(seed, out);
  return out;
}

}  // namespace cvs
