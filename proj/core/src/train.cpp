#include "cvs/train.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "cvs/error.hpp"

namespace cvs {

TrainLog train_toy(Model& model, const std::vector<SceneSample>& dataset, const TrainConfig& config,
                   const std::function<void(const StepRecord&)>& on_step) {
  if (dataset.empty()) throw ConfigError("train_toy: empty dataset");
  ParamList params = model.parameters();
  std::vector<std::vector<double>> velocity;
  velocity.reserve(params.size());
  for (const auto& p : params) velocity.emplace_back(p.tensor->size(), 0.0);

  TrainLog log;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const SceneSample& sample = dataset[step % dataset.size()];
    double lr = config.lr;
    if (config.poly_power > 0.0) {
      lr *= std::pow(1.0 - static_cast<double>(step) / static_cast<double>(config.steps), config.poly_power);
    }

    model.zero_grad();
    ModelCache cache;
    const Tensor logits = model_forward(model, sample, &cache);
    const CrossEntropy ce = scene_loss(logits, sample);
    if (!std::isfinite(ce.loss)) {
      throw TrainingError("train_toy: loss became non-finite at step " + std::to_string(step));
    }
    model_backward(model, cache, ce.grad);

    double scale = 1.0;
    if (config.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : params)
        for (double g : std::as_const(*p.tensor).grad()) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > config.clip_norm) scale = config.clip_norm / norm;
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i].tensor;
      auto g = p.grad();
      auto& v = velocity[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = config.momentum * v[k] + scale * g[k] + config.weight_decay * p[k];
        p[k] -= lr * v[k];
      }
    }

    const StepRecord rec{step, ce.loss, lr};
    log.steps.push_back(rec);
    if (on_step) on_step(rec);
  }

  const SceneSample& first = dataset.front();
  const Tensor logits = model_forward(model, first);
  log.final_loss = scene_loss(logits, first).loss;
  if (!std::isfinite(log.final_loss)) throw TrainingError("train_toy: final loss is non-finite");
  log.final_prediction = predict_labels(logits);
  log.final_metrics = evaluate(log.final_prediction, first);
  return log;
}

MetricReport evaluate(const std::vector<int>& prediction, const SceneSample& sample) {
  MetricReport r;
  r.sc = sc_metrics(prediction, sample.labels, sample.occluded);
  r.ssc = ssc_metrics(prediction, sample.labels, sample.eval_mask(), sample.num_classes);
  return r;
}

MetricReport evaluate(const std::vector<std::vector<int>>& predictions, const std::vector<SceneSample>& scenes) {
  if (predictions.size() != scenes.size() || scenes.empty()) {
    throw DimensionError("evaluate: need one prediction per scene");
  }
  std::vector<int> pred, gt;
  std::vector<std::uint8_t> occluded, mask;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    pred.insert(pred.end(), predictions[s].begin(), predictions[s].end());
    gt.insert(gt.end(), scenes[s].labels.begin(), scenes[s].labels.end());
    occluded.insert(occluded.end(), scenes[s].occluded.begin(), scenes[s].occluded.end());
    const auto m = scenes[s].eval_mask();
    mask.insert(mask.end(), m.begin(), m.end());
  }
  MetricReport r;
  r.sc = sc_metrics(pred, gt, occluded);
  r.ssc = ssc_metrics(pred, gt, mask, scenes.front().num_classes);
  return r;
}

std::string train_log_jsonl(const TrainLog& log) {
  std::ostringstream os;
  for (const auto& s : log.steps) {
    nlohmann::ordered_json j{{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}};
    os << j.dump() << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- ablation

std::vector<AblationVariant> view_grid(const ModelConfig& base) {
  const std::vector<std::vector<double>> sets{{0}, {0, 45}, {0, 45, 90}, {0, 45, 90, 135}};
  std::vector<AblationVariant> out;
  for (const auto& set : sets) {
    ModelConfig c = base;
    c.use_mvfs = true;
    c.use_cvtr = true;
    c.rotations.clear();
    std::string name = "views{";
    for (std::size_t i = 0; i < set.size(); ++i) {
      c.rotations.push_back({set[i], 0.0, 0.0});
      std::ostringstream deg;
      deg << set[i];
      name += (i ? "," : "") + deg.str();
    }
    out.push_back({"views", name + "}", c});
  }
  return out;
}

std::vector<AblationVariant> component_grid(const ModelConfig& base) {
  ModelConfig baseline = base;
  baseline.use_mvfs = false;
  baseline.use_cvtr = false;
  baseline.aggregate = Aggregate::sum;
  ModelConfig with_mvfs = base;
  with_mvfs.use_mvfs = true;
  with_mvfs.use_cvtr = false;
  with_mvfs.aggregate = Aggregate::concat;
  ModelConfig full = base;
  full.use_mvfs = true;
  full.use_cvtr = true;
  return {{"components", "baseline", baseline}, {"components", "+MVFS", with_mvfs}, {"components", "+MVFS+CVTr", full}};
}

std::vector<AblationVariant> fusion_grid(const ModelConfig& base) {
  std::vector<AblationVariant> out;
  for (auto scheme : {FusionScheme::all, FusionScheme::all_for_one_features, FusionScheme::all_for_one_tokens}) {
    ModelConfig c = base;
    c.use_mvfs = true;
    c.use_cvtr = true;
    c.fusion = scheme;
    out.push_back({"fusion", to_string(scheme), c});
  }
  return out;
}

std::vector<AblationRow> ablate(const std::vector<AblationVariant>& variants, const std::vector<SceneSample>& train_set,
                                const std::vector<SceneSample>& eval_set, const TrainConfig& train) {
  if (eval_set.empty()) throw ConfigError("ablate: empty evaluation set");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    Model model = Model::init(v.config);
    train_toy(model, train_set, train);
    AblationRow row;
    row.grid = v.grid;
    row.variant = v.name;
    for (const auto& s : eval_set) row.predictions.push_back(predict_labels(model_forward(model, s)));
    row.metrics = evaluate(row.predictions, eval_set);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, int num_classes) {
  const auto names = class_names(num_classes);
  std::ostringstream os;
  os << "grid,variant,SC-IoU,SSC-mIoU";
  for (int c = 1; c < num_classes; ++c) os << ",IoU-" << names[static_cast<std::size_t>(c)];
  os << '\n';
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.grid << ",\"" << r.variant << "\"," << r.metrics.sc.iou << ',' << r.metrics.ssc.mean_iou;
    for (int c = 1; c < num_classes; ++c) {
      os << ',';
      auto it = r.metrics.ssc.per_class_iou.find(c);
      if (it != r.metrics.ssc.per_class_iou.end()) os << it->second;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace cvs
