#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <nlohmann/json.hpp>

#include "cvs/error.hpp"
#include "cvs/metrics.hpp"
#include "cvs/scene.hpp"
#include "oracles.hpp"

using namespace cvs;
namespace fs = std::filesystem;

namespace {

const std::array<std::size_t, 3> kToy{16, 8, 16};

std::size_t occluded_occupied(const SceneSample& s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.voxel_count(); ++i)
    if (s.occluded[i] && s.labels[i] != kEmptyClass && s.labels[i] != kIgnoreLabel) ++n;
  return n;
}

std::vector<std::uint8_t> ones(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cvs_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("scene_io") {

TEST_CASE("generation is deterministic per seed") {
  const SceneSample a = generate_scene(5, kToy, 4), b = generate_scene(5, kToy, 4);
  CHECK(a.labels == b.labels);
  CHECK(a.occluded == b.occluded);
  CHECK(bit_equal(a.semantic, b.semantic));
  CHECK(bit_equal(a.geometric, b.geometric));
  CHECK(generate_scene(6, kToy, 4).labels != a.labels);
}

TEST_CASE("a hundred seeds all satisfy the scene invariants") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SceneSample s = generate_scene(seed, kToy, 4);
    CAPTURE(seed);
    CHECK_NOTHROW(validate_scene(s));
    CHECK(occluded_occupied(s) > 0);
    CHECK(s.semantic.shape() == Shape{16, 8, 16, 4});
    CHECK(s.geometric.shape() == Shape{16, 8, 16, 1});
    CHECK(s.geometric.all_finite());
    for (std::size_t v = 0; v < s.voxel_count(); ++v) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        const double x = s.semantic[v * 4 + c];
        CHECK((x == 0.0 || x == 1.0));
        sum += x;
      }
      CHECK(sum <= 1.0);
      CHECK(((s.labels[v] >= 0 && s.labels[v] < 4) || s.labels[v] == kIgnoreLabel));
      if (s.occluded[v]) CHECK(s.labels[v] != kIgnoreLabel);
    }
  }
}

TEST_CASE("an empty room still has two classes") {
  SceneOptions o;
  o.box_count = 0;
  const SceneSample s = generate_scene(3, kToy, 4, o);
  std::set<int> present;
  for (int l : s.labels)
    if (l != kIgnoreLabel) present.insert(l);
  CHECK(present.size() >= 2);
  CHECK(occluded_occupied(s) > 0);
}

TEST_CASE("observed surfaces appear in S with a zero signed distance") {
  const SceneSample s = generate_scene(11, kToy, 4);
  std::size_t observed = 0;
  for (std::size_t v = 0; v < s.voxel_count(); ++v) {
    bool hot = false;
    for (std::size_t c = 0; c < 4; ++c) hot = hot || s.semantic[v * 4 + c] == 1.0;
    if (!hot) continue;
    ++observed;
    CHECK(s.labels[v] != kEmptyClass);
    CHECK(!s.occluded[v]);
    CHECK(s.semantic[v * 4 + std::size_t(s.labels[v])] == 1.0);
    CHECK(s.geometric[v] == 0.0);
  }
  CHECK(observed > 0);
  for (std::size_t v = 0; v < s.voxel_count(); ++v)
    if (s.occluded[v]) CHECK(s.geometric[v] < 0.0);
}

TEST_CASE("bad generator arguments") {
  CHECK_THROWS_AS(generate_scene(1, {0, 8, 8}, 4), ParameterError);
  CHECK_THROWS_AS(generate_scene(1, kToy, 1), ParameterError);
}

TEST_CASE("scene files round trip") {
  const SceneSample s = generate_scene(21, kToy, 5);
  const fs::path dir = scratch("scene_rt");
  save_scene(dir, s);
  for (const char* f : {"semantic.cvst", "geometric.cvst", "labels.cvst", "occluded.cvst", "manifest.json"})
    CHECK(fs::exists(dir / f));
  const SceneSample back = load_scene(dir);
  CHECK(back.seed == 21);
  CHECK(back.extents == s.extents);
  CHECK(back.num_classes == 5);
  CHECK(back.labels == s.labels);
  CHECK(back.occluded == s.occluded);
  CHECK(bit_equal(back.semantic, s.semantic));
  CHECK(bit_equal(back.geometric, s.geometric));
  CHECK_THROWS_AS(load_scene(dir / "missing"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("sc metrics on hand examples") {
  const std::vector<int> gt{1, 2, 0, 3};
  const auto mask = ones(4);
  const ScMetrics same = sc_metrics(gt, gt, mask);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.iou == 1.0);

  const ScMetrics none = sc_metrics(std::vector<int>{0, 0, 0, 0}, gt, mask);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.iou == 0.0);

  const ScMetrics m = sc_metrics(std::vector<int>{1, 1, 1, 0}, std::vector<int>{1, 1, 0, 1}, mask);
  CHECK(m.true_positive == 2);
  CHECK(m.false_positive == 1);
  CHECK(m.false_negative == 1);
  CHECK(m.precision == 2.0 / 3.0);
  CHECK(m.recall == 2.0 / 3.0);
  CHECK(m.iou == 0.5);
}

TEST_CASE("sc metrics only count masked voxels") {
  const std::vector<int> gt{1, 1, 0, 0}, pred{1, 0, 1, 0};
  const ScMetrics m = sc_metrics(pred, gt, std::vector<std::uint8_t>{1, 0, 0, 1});
  CHECK(m.iou == 1.0);
  CHECK_THROWS_AS(sc_metrics(pred, gt, std::vector<std::uint8_t>{0, 0, 0, 0}), DegenerateError);
  CHECK_THROWS_AS(sc_metrics(pred, std::vector<int>{1, 1}, ones(4)), DimensionError);
}

TEST_CASE("ssc metrics on hand examples") {
  const std::vector<int> gt{1, 1, 2, 2, 0, 1}, pred{1, 2, 2, 0, 0, 1};
  const SscMetrics m = ssc_metrics(pred, gt, ones(6), 3);
  CHECK(m.per_class_iou.at(1) == 2.0 / 3.0);
  CHECK(m.per_class_iou.at(2) == 1.0 / 3.0);
  CHECK(m.mean_iou == 0.5);

  CHECK(ssc_metrics(gt, gt, ones(6), 3).mean_iou == 1.0);
  const SscMetrics swapped = ssc_metrics(std::vector<int>{2, 2, 1, 1}, std::vector<int>{1, 1, 2, 2}, ones(4), 3);
  CHECK(swapped.mean_iou == 0.0);
}

TEST_CASE("absent classes do not count toward the mean") {
  const std::vector<int> gt{1, 1, 0}, pred{1, 0, 0};
  const SscMetrics m = ssc_metrics(pred, gt, ones(3), 6);
  CHECK(m.per_class_iou.size() == 1);
  CHECK(m.mean_iou == 0.5);
}

TEST_CASE("metrics agree with a confusion-matrix count on random grids") {
  Rng rng(99);
  for (int t = 0; t < 100; ++t) {
    const int classes = int(rng.uniform_int(2, 6));
    const std::size_t n = std::size_t(rng.uniform_int(1, 300));
    std::vector<int> pred(n), gt(n);
    std::vector<std::uint8_t> occ(n), eval(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = int(rng.uniform_int(0, classes - 1));
      gt[i] = rng.uniform() < 0.1 ? kIgnoreLabel : int(rng.uniform_int(0, classes - 1));
      occ[i] = rng.uniform() < 0.6;
      eval[i] = gt[i] != kIgnoreLabel;
    }
    occ[0] = 1;
    gt[0] = 1;
    eval[0] = 1;

    const auto sc_want = oracle::sc_from_confusion(oracle::confusion(pred, gt, occ));
    const ScMetrics sc = sc_metrics(pred, gt, occ);
    CHECK(sc.precision == sc_want.precision);
    CHECK(sc.recall == sc_want.recall);
    CHECK(sc.iou == sc_want.iou);

    const auto [iou_want, mean_want] = oracle::ssc_from_confusion(oracle::confusion(pred, gt, eval), classes);
    const SscMetrics ssc = ssc_metrics(pred, gt, eval, classes);
    CHECK(ssc.per_class_iou == iou_want);
    CHECK(ssc.mean_iou == mean_want);
  }
}

TEST_CASE("metrics ignore voxel order") {
  Rng rng(5);
  std::vector<int> pred(50), gt(50);
  std::vector<std::uint8_t> mask(50, 1);
  for (int i = 0; i < 50; ++i) {
    pred[i] = int(rng.uniform_int(0, 3));
    gt[i] = int(rng.uniform_int(0, 3));
  }
  const auto a = ssc_metrics(pred, gt, mask, 4);
  const auto sa = sc_metrics(pred, gt, mask);
  std::vector<std::size_t> idx(50);
  for (std::size_t i = 0; i < 50; ++i) idx[i] = (i * 17) % 50;
  std::vector<int> p2(50), g2(50);
  for (std::size_t i = 0; i < 50; ++i) {
    p2[i] = pred[idx[i]];
    g2[i] = gt[idx[i]];
  }
  CHECK(ssc_metrics(p2, g2, mask, 4).per_class_iou == a.per_class_iou);
  CHECK(sc_metrics(p2, g2, mask).iou == sa.iou);
}

TEST_CASE("metric report JSON") {
  MetricReport r;
  r.sc = sc_metrics(std::vector<int>{1, 0}, std::vector<int>{1, 1}, ones(2));
  r.ssc = ssc_metrics(std::vector<int>{1, 0}, std::vector<int>{1, 1}, ones(2), 3);
  const auto j = nlohmann::json::parse(metrics_json(r, 3));
  CHECK(j["sc"]["iou"].get<double>() == 0.5);
  CHECK(j["ssc"]["mean_iou"].get<double>() == 0.5);
}

}
