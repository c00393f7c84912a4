#include <benchmark/benchmark.h>

#include "cvs/config.hpp"
#include "cvs/cvtr.hpp"
#include "cvs/kernel_geometry.hpp"
#include "cvs/model.hpp"
#include "cvs/mvfs.hpp"
#include "cvs/scene.hpp"
#include "cvs/train.hpp"

using namespace cvs;

namespace {

MvfsLayer make_layer(double theta_x, std::size_t channels, Rng& rng) {
  return MvfsLayer::kaiming(3, {build_rotation(theta_x, 0, 0)}, channels, channels, rng);
}

void BM_RotateKernel(benchmark::State& state) {
  const KernelLattice lattice = build_lattice(int(state.range(0)));
  const RotationSpec spec = build_rotation(45, 10, 5);
  for (auto _ : state) benchmark::DoNotOptimize(rotate_kernel(lattice, spec));
}
BENCHMARK(BM_RotateKernel)->Arg(3)->Arg(5)->Arg(7);

// Arg 0: theta_x in degrees, arg 1: cubic extent. Channels fixed at 8.
void BM_SynthViewConv(benchmark::State& state) {
  Rng rng(1);
  const std::size_t n = std::size_t(state.range(1));
  const MvfsLayer layer = make_layer(double(state.range(0)), 8, rng);
  const Tensor vol = Tensor::randn({n, n, n, 8}, rng);
  synth_view_conv(vol, layer, 0);  // builds the sampling plan
  for (auto _ : state) benchmark::DoNotOptimize(synth_view_conv(vol, layer, 0));
  state.SetItemsProcessed(state.iterations() * std::int64_t(n * n * n));
}
BENCHMARK(BM_SynthViewConv)->Args({0, 8})->Args({45, 8})->Args({0, 16})->Args({45, 16})->Unit(benchmark::kMicrosecond);

void BM_SynthViewConvBackward(benchmark::State& state) {
  Rng rng(2);
  const std::size_t n = std::size_t(state.range(0));
  MvfsLayer layer = make_layer(45, 8, rng);
  const Tensor vol = Tensor::randn({n, n, n, 8}, rng);
  const Tensor grad = Tensor::randn({n, n, n, 8}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(synth_view_conv_backward(vol, layer, 0, grad));
}
BENCHMARK(BM_SynthViewConvBackward)->Arg(8)->Arg(16)->Unit(benchmark::kMicrosecond);

// Arg: fusion scheme index (all, all-for-one-features, all-for-one-tokens).
void BM_CvtrForward(benchmark::State& state) {
  const FusionScheme schemes[] = {FusionScheme::all, FusionScheme::all_for_one_features,
                                  FusionScheme::all_for_one_tokens};
  Rng rng(3);
  const std::size_t views = 4, tokens = 8, channels = 8;
  const CvtrParams params = CvtrParams::init(views, tokens, 32, channels, 1, schemes[state.range(0)], rng);
  std::vector<Tensor> in;
  for (std::size_t r = 0; r < views; ++r) in.push_back(Tensor::randn({4, 2, 4, channels}, rng));
  for (auto _ : state) benchmark::DoNotOptimize(cvtr_forward(in, params));
}
BENCHMARK(BM_CvtrForward)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_ModelForwardToy(benchmark::State& state) {
  const ModelConfig c;
  const Model m = Model::init(c);
  const SceneSample s = generate_scene(1, c.volume, c.num_classes);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(m, s));
}
BENCHMARK(BM_ModelForwardToy)->Unit(benchmark::kMillisecond);

void BM_TrainStepToy(benchmark::State& state) {
  const ModelConfig c;
  Model m = Model::init(c);
  const SceneSample s = generate_scene(1, c.volume, c.num_classes);
  for (auto _ : state) {
    m.zero_grad();
    ModelCache cache;
    const Tensor logits = model_forward(m, s, &cache);
    const CrossEntropy ce = scene_loss(logits, s);
    benchmark::DoNotOptimize(model_backward(m, cache, ce.grad));
  }
}
BENCHMARK(BM_TrainStepToy)->Unit(benchmark::kMillisecond);

void BM_ModelForwardFullScale(benchmark::State& state) {
  const ModelConfig c = ModelConfig::full_scale(std::size_t(state.range(0)));
  const Model m = Model::init(c);
  const SceneSample s = generate_scene(1, c.volume, c.num_classes);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(m, s));
}
BENCHMARK(BM_ModelForwardFullScale)->Arg(16)->Unit(benchmark::kMillisecond)->Iterations(2);

void BM_GenerateScene(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_scene(++seed, {16, 8, 16}, 4));
}
BENCHMARK(BM_GenerateScene)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
