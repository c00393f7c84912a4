#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvs/cvtr.hpp"

namespace cvs {

enum class Aggregate { sum, concat };

std::string to_string(Aggregate a);
Aggregate parse_aggregate(const std::string& text);

using Angles = std::array<double, 3>;  // (theta_x, theta_y, theta_z) in degrees

struct ModelConfig {
  std::array<std::size_t, 3> volume{16, 8, 16};
  std::array<std::size_t, 3> features{4, 2, 4};
  std::size_t channels = 8;
  int num_classes = 4;
  int kernel_size = 3;
  std::vector<Angles> rotations{{0, 0, 0}, {45, 0, 0}, {90, 0, 0}, {135, 0, 0}};
  std::size_t tokens = 8;  // M
  FusionScheme fusion = FusionScheme::all_for_one_tokens;
  TokenWiring wiring = TokenWiring::concatenate;
  std::size_t encoder_depth = 1;
  std::size_t heads = 1;
  bool attention_scale = true;
  Aggregate aggregate = Aggregate::sum;
  bool use_mvfs = true;
  bool use_cvtr = true;
  std::uint64_t seed = 0;

  std::size_t feature_voxels() const { return features[0] * features[1] * features[2]; }
  std::size_t view_count() const { return use_mvfs ? rotations.size() : 1; }

  // 60x36x60 volumes, 15x9x15 features, M = 75, four views about x.
  static ModelConfig full_scale(std::size_t channels = 16);
};

struct TrainConfig {
  std::size_t steps = 500;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double poly_power = 0.0;  // lr * (1 - step/steps)^power; 0 keeps lr constant
  double clip_norm = 5.0;   // rescale the global gradient norm above this; 0 disables
};

struct SceneConfig {
  std::size_t box_count = 3;
  std::size_t train_scenes = 1;
  std::size_t eval_scenes = 2;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SceneConfig scene;
};

// Throws ConfigError naming the first violated invariant.
void validate(const ModelConfig& config);
void validate(const RunConfig& config);

nlohmann::ordered_json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

// Applies "section.key=value" where value is parsed as JSON when possible
// and taken as a string otherwise.
void apply_override(nlohmann::ordered_json& j, const std::string& assignment);

}  // namespace cvs
