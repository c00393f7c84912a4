#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cvs/config.hpp"
#include "cvs/metrics.hpp"
#include "cvs/model.hpp"
#include "cvs/scene.hpp"

namespace cvs {

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  double final_loss = 0.0;     // loss of the trained model, re-evaluated
  MetricReport final_metrics;  // on the first training scene
  std::vector<int> final_prediction;
};

// SGD with momentum (v = mu v + s g + wd p; p -= lr v) on voxel-wise
// cross-entropy, with s = min(1, clip_norm / |g|) over all parameters.
// Cycles through the dataset one scene per step. Throws TrainingError naming
// the step if the loss stops being finite.
TrainLog train_toy(Model& model, const std::vector<SceneSample>& dataset, const TrainConfig& config,
                   const std::function<void(const StepRecord&)>& on_step = {});

MetricReport evaluate(const std::vector<int>& prediction, const SceneSample& sample);
// Pools confusion counts over all scenes.
MetricReport evaluate(const std::vector<std::vector<int>>& predictions, const std::vector<SceneSample>& scenes);

std::string train_log_jsonl(const TrainLog& log);

struct AblationVariant {
  std::string grid;  // views | components | fusion
  std::string name;
  ModelConfig config;
};

// Rotation-set grid: {0}, {0,45}, {0,45,90}, {0,45,90,135} about x.
std::vector<AblationVariant> view_grid(const ModelConfig& base);
// baseline (no MVFS, no CVTr), +MVFS (views concatenated), +MVFS+CVTr.
std::vector<AblationVariant> component_grid(const ModelConfig& base);
// all, all-for-one-features, all-for-one-tokens.
std::vector<AblationVariant> fusion_grid(const ModelConfig& base);

struct AblationRow {
  std::string grid;
  std::string variant;
  MetricReport metrics;
  std::vector<std::vector<int>> predictions;  // per held-out scene
};

std::vector<AblationRow> ablate(const std::vector<AblationVariant>& variants, const std::vector<SceneSample>& train_set,
                                const std::vector<SceneSample>& eval_set, const TrainConfig& train);

// Columns: grid, variant, SC-IoU, SSC-mIoU, then one IoU column per
// non-empty class (blank when the class is absent).
std::string ablation_csv(const std::vector<AblationRow>& rows, int num_classes);

}  // namespace cvs
