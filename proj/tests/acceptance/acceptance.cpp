// Acceptance checks A1-A9. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cvs/config.hpp"
#include "cvs/cvtr.hpp"
#include "cvs/gradcheck_suite.hpp"
#include "cvs/kernel_geometry.hpp"
#include "cvs/metrics.hpp"
#include "cvs/model.hpp"
#include "cvs/mvfs.hpp"
#include "cvs/train.hpp"
#include "oracles.hpp"

using namespace cvs;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

MvfsLayer layer_for(const std::vector<Angles>& angles, std::size_t cin, std::size_t cout, Rng& rng) {
  std::vector<RotationSpec> specs;
  for (const auto& a : angles) specs.push_back(build_rotation(a[0], a[1], a[2]));
  return MvfsLayer::kaiming(3, specs, cin, cout, rng);
}

Outcome a1_rotations() {
  const auto t0 = Clock::now();
  Rng rng(1);
  double worst_orth = 0.0, worst_det = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = build_rotation(rng.uniform(-360, 360), rng.uniform(-360, 360), rng.uniform(-360, 360)).matrix;
    const Mat3 p = mat_mul(mat_transpose(r), r);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) worst_orth = std::max(worst_orth, std::abs(p[a][b] - (a == b ? 1.0 : 0.0)));
    worst_det = std::max(worst_det, std::abs(mat_det(r) - 1.0));
  }
  const double t = seconds_since(t0);
  return {worst_orth < 1e-12 && worst_det < 1e-12 && t < 1.0,
          "max|RtR-I|=" + fmt("%.2e", worst_orth) + " max|det-1|=" + fmt("%.2e", worst_det) + " t=" + fmt("%.3fs", t)};
}

Outcome a2_anchors() {
  const KernelLattice l = build_lattice(3);
  const bool ok = l.points.size() == 27 && l.points[0] == Vec3{-1, -1, 1} && l.points[13] == Vec3{0, 0, 0} &&
                  l.points[26] == Vec3{1, 1, -1};
  return {ok, "P0=(-1,-1,1) P13=(0,0,0) P26=(1,1,-1)"};
}

Outcome a3_oracles() {
  const std::vector<Angles> lattice_angles{{0, 0, 0},  {90, 0, 0},  {180, 0, 0}, {270, 0, 0},
                                           {0, 90, 0}, {0, 0, 270}, {90, 90, 90}};
  const std::vector<Angles> oblique{{45, 0, 0}};
  Rng rng(3);
  double worst_lattice = 0.0, worst_oblique = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor vol = Tensor::randn({4, 4, 4, 2}, rng);
    const MvfsLayer quarter = layer_for(lattice_angles, 2, 2, rng);
    for (std::size_t r = 0; r < lattice_angles.size(); ++r) {
      const auto& a = lattice_angles[r];
      const Tensor want = oracle::dense_conv(vol, oracle::permuted_kernel(quarter.weights(r), 3, a[0], a[1], a[2]));
      worst_lattice = std::max(worst_lattice, max_abs_diff(synth_view_conv(vol, quarter, r), want));
    }
    const MvfsLayer tilted = layer_for(oblique, 2, 2, rng);
    const Tensor want = oracle::rotated_conv(vol, tilted.weights(0), 3, 45, 0, 0);
    worst_oblique = std::max(worst_oblique, max_abs_diff(synth_view_conv(vol, tilted, 0), want));
  }
  return {worst_lattice < 1e-12 && worst_oblique < 1e-12,
          "quarter-turn max diff=" + fmt("%.2e", worst_lattice) + " 45deg max diff=" + fmt("%.2e", worst_oblique)};
}

Outcome a4_gradients() {
  const auto t0 = Clock::now();
  const auto reports = run_gradcheck_suite("all", 4);
  const double t = seconds_since(t0);
  std::size_t passed = 0;
  double worst = 0.0;
  std::string failed;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_relative_error);
    if (r.pass) ++passed;
    else failed += " " + r.op_name;
  }
  const bool ok = passed == reports.size() && !reports.empty() && t < 120.0;
  return {ok, std::to_string(passed) + "/" + std::to_string(reports.size()) + " ops, max rel err " + fmt("%.2e", worst) +
                  " t=" + fmt("%.1fs", t) + (failed.empty() ? "" : " failed:" + failed)};
}

Outcome a5_memorization() {
  const auto t0 = Clock::now();
  const ModelConfig c;  // 16x8x16, 4 classes, views {0,45,90,135}, M = 8
  Model model = Model::init(c);
  const std::vector<SceneSample> data{generate_scene(c.seed + 1, c.volume, c.num_classes)};
  TrainConfig t;
  t.steps = 500;
  t.lr = 0.05;
  t.momentum = 0.9;
  const TrainLog log = train_toy(model, data, t);
  const double secs = seconds_since(t0);
  const bool ok = log.final_loss < 0.05 && log.final_metrics.ssc.mean_iou > 0.95 && secs < 300.0;
  return {ok, "loss=" + fmt("%.4f", log.final_loss) + " SSC-mIoU=" + fmt("%.4f", log.final_metrics.ssc.mean_iou) +
                  " t=" + fmt("%.1fs", secs)};
}

Outcome a6_identity() {
  bool ok = true;
  std::string detail;
  for (auto scheme : {FusionScheme::all, FusionScheme::all_for_one_features, FusionScheme::all_for_one_tokens}) {
    Rng rng(6);
    const std::size_t views = 4, tokens = 8, channels = 8;
    const CvtrParams params = CvtrParams::init(views, tokens, 32, channels, 1, scheme, rng);
    std::vector<Tensor> in;
    for (std::size_t r = 0; r < views; ++r) in.push_back(Tensor::randn({4, 2, 4, channels}, rng));
    const auto out = cvtr_forward(in, params);
    bool same = out.size() == in.size();
    for (std::size_t r = 0; same && r < in.size(); ++r) same = bit_equal(out[r], in[r]);
    ok = ok && same;
    detail += to_string(scheme) + (same ? "=exact " : "=differs ");
  }
  return {ok, detail};
}

std::vector<std::string> csv_cells(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') quoted = !quoted;
    else if (ch == ',' && !quoted) cells.emplace_back();
    else cells.back() += ch;
  }
  return cells;
}

bool well_formed_csv(const std::string& csv, std::size_t expected_rows, std::string& why) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line.rfind("grid,variant,SC-IoU,SSC-mIoU", 0) != 0) {
    why = "bad header";
    return false;
  }
  const std::size_t columns = csv_cells(line).size();
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    const auto cells = csv_cells(line);
    if (cells.size() != columns) {
      why = "ragged row " + std::to_string(rows);
      return false;
    }
    for (std::size_t col = 2; col < cells.size(); ++col) {
      if (cells[col].empty()) continue;
      char* end = nullptr;
      const double v = std::strtod(cells[col].c_str(), &end);
      if (*end != '\0' || !(v >= 0.0 && v <= 1.0)) {
        why = "bad value '" + cells[col] + "'";
        return false;
      }
    }
  }
  if (rows != expected_rows) {
    why = std::to_string(rows) + " rows";
    return false;
  }
  return true;
}

Outcome a7_ablation() {
  const auto t0 = Clock::now();
  ModelConfig c;
  const std::vector<SceneSample> train{generate_scene(1, c.volume, c.num_classes)};
  const std::vector<SceneSample> held{generate_scene(100001, c.volume, c.num_classes),
                                      generate_scene(100002, c.volume, c.num_classes)};
  TrainConfig t;
  t.steps = 30;
  auto variants = view_grid(c);
  const auto comps = component_grid(c);
  variants.insert(variants.end(), comps.begin(), comps.end());
  const auto rows = ablate(variants, train, held, t);
  std::string why;
  const bool ok = well_formed_csv(ablation_csv(rows, c.num_classes), 7, why);
  return {ok, "views 4 + components 3 rows" + (ok ? std::string() : ", " + why) + " t=" + fmt("%.1fs", seconds_since(t0))};
}

Outcome a8_metrics() {
  Rng rng(8);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = int(rng.uniform_int(2, 8));
    const std::size_t n = std::size_t(rng.uniform_int(1, 500));
    std::vector<int> pred(n), gt(n);
    std::vector<std::uint8_t> occ(n), eval(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = int(rng.uniform_int(0, classes - 1));
      gt[i] = rng.uniform() < 0.1 ? kIgnoreLabel : int(rng.uniform_int(0, classes - 1));
      occ[i] = rng.uniform() < 0.5;
      eval[i] = gt[i] != kIgnoreLabel;
    }
    occ[0] = eval[0] = 1;
    gt[0] = 1;
    const auto sc_want = oracle::sc_from_confusion(oracle::confusion(pred, gt, occ));
    const ScMetrics sc = sc_metrics(pred, gt, occ);
    const auto [iou_want, mean_want] = oracle::ssc_from_confusion(oracle::confusion(pred, gt, eval), classes);
    const SscMetrics ssc = ssc_metrics(pred, gt, eval, classes);
    if (sc.precision != sc_want.precision || sc.recall != sc_want.recall || sc.iou != sc_want.iou ||
        ssc.per_class_iou != iou_want || ssc.mean_iou != mean_want)
      ++mismatches;
  }
  return {mismatches == 0, std::to_string(100 - mismatches) + "/100 grids exact"};
}

Outcome a9_full_scale() {
  const ModelConfig c = ModelConfig::full_scale(16);
  validate(c);
  const Model model = Model::init(c);
  const SceneSample s = generate_scene(1, c.volume, c.num_classes);
  const auto t0 = Clock::now();
  const Tensor logits = model_forward(model, s);
  const double t = seconds_since(t0);
  const bool ok = logits.all_finite() && logits.shape() == Shape{60, 36, 60, std::size_t(c.num_classes)} && t < 60.0;
  return {ok, "C=16 M=75 R=4 forward t=" + fmt("%.2fs", t)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", a1_rotations}, {"A2", a2_anchors},      {"A3", a3_oracles},  {"A4", a4_gradients},    {"A5", a5_memorization},
      {"A6", a6_identity},  {"A7", a7_ablation},     {"A8", a8_metrics},  {"A9", a9_full_scale}};
  int failures = 0;
  for (const auto& [id, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %s  %s\n", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
