#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cvs {

struct ScMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double iou = 0.0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
};

// Binary occupancy (label != empty) scored over voxels with mask set and a
// non-ignored ground truth. Zero denominators give zero. Throws
// DegenerateError when no voxel is selected.
ScMetrics sc_metrics(std::span<const int> pred, std::span<const int> gt, std::span<const std::uint8_t> mask);

struct SscMetrics {
  std::map<int, double> per_class_iou;  // only classes present in pred or gt
  double mean_iou = 0.0;
};

// Per-class IoU over classes 1..num_classes-1; the empty class is not
// averaged and classes absent from both pred and gt are left out.
SscMetrics ssc_metrics(std::span<const int> pred, std::span<const int> gt, std::span<const std::uint8_t> mask,
                       int num_classes);

struct MetricReport {
  ScMetrics sc;
  SscMetrics ssc;
};

std::string metrics_json(const MetricReport& report, int num_classes);

}  // namespace cvs
