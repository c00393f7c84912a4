#include "cvs/metrics.hpp"

#include <nlohmann/json.hpp>

#include "cvs/error.hpp"
#include "cvs/scene.hpp"

namespace cvs {

namespace {

void check_sizes(std::size_t pred, std::size_t gt, std::size_t mask) {
  if (pred != gt || gt != mask) {
    throw DimensionError("metrics: size mismatch (pred " + std::to_string(pred) + ", gt " + std::to_string(gt) +
                         ", mask " + std::to_string(mask) + ")");
  }
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ScMetrics sc_metrics(std::span<const int> pred, std::span<const int> gt, std::span<const std::uint8_t> mask) {
  check_sizes(pred.size(), gt.size(), mask.size());
  ScMetrics m;
  std::size_t selected = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i] || gt[i] == kIgnoreLabel) continue;
    ++selected;
    const bool p = pred[i] != kEmptyClass;
    const bool g = gt[i] != kEmptyClass;
    if (p && g) ++m.true_positive;
    else if (p) ++m.false_positive;
    else if (g) ++m.false_negative;
  }
  if (selected == 0) throw DegenerateError("sc_metrics: evaluation mask selects no voxels");
  m.precision = ratio(m.true_positive, m.true_positive + m.false_positive);
  m.recall = ratio(m.true_positive, m.true_positive + m.false_negative);
  m.iou = ratio(m.true_positive, m.true_positive + m.false_positive + m.false_negative);
  return m;
}

SscMetrics ssc_metrics(std::span<const int> pred, std::span<const int> gt, std::span<const std::uint8_t> mask,
                       int num_classes) {
  check_sizes(pred.size(), gt.size(), mask.size());
  const auto n = static_cast<std::size_t>(num_classes);
  std::vector<std::size_t> tp(n, 0), fp(n, 0), fn(n, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i] || gt[i] == kIgnoreLabel) continue;
    const int p = pred[i], g = gt[i];
    if (p == g) {
      if (p >= 0 && p < num_classes) ++tp[static_cast<std::size_t>(p)];
      continue;
    }
    if (p >= 0 && p < num_classes) ++fp[static_cast<std::size_t>(p)];
    if (g >= 0 && g < num_classes) ++fn[static_cast<std::size_t>(g)];
  }
  SscMetrics out;
  double sum = 0.0;
  for (int c = 1; c < num_classes; ++c) {
    const auto k = static_cast<std::size_t>(c);
    const std::size_t den = tp[k] + fp[k] + fn[k];
    if (den == 0) continue;
    const double iou = ratio(tp[k], den);
    out.per_class_iou[c] = iou;
    sum += iou;
  }
  if (!out.per_class_iou.empty()) out.mean_iou = sum / static_cast<double>(out.per_class_iou.size());
  return out;
}

std::string metrics_json(const MetricReport& report, int num_classes) {
  const auto names = class_names(num_classes);
  nlohmann::ordered_json j;
  j["sc"] = {{"precision", report.sc.precision},
             {"recall", report.sc.recall},
             {"iou", report.sc.iou},
             {"true_positive", report.sc.true_positive},
             {"false_positive", report.sc.false_positive},
             {"false_negative", report.sc.false_negative}};
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (const auto& [c, iou] : report.ssc.per_class_iou) per_class[names.at(static_cast<std::size_t>(c))] = iou;
  j["ssc"] = {{"per_class_iou", per_class}, {"mean_iou", report.ssc.mean_iou}};
  return j.dump(2);
}

}  // namespace cvs
