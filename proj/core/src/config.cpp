#include "cvs/config.hpp"

#include <algorithm>
#include <initializer_list>
#include <string_view>

#include "cvs/error.hpp"

namespace cvs {

std::string to_string(Aggregate a) { return a == Aggregate::sum ? "sum" : "concat"; }

Aggregate parse_aggregate(const std::string& text) {
  if (text == "sum") return Aggregate::sum;
  if (text == "concat") return Aggregate::concat;
  throw ConfigError("unknown aggregate '" + text + "' (expected sum|concat)");
}

ModelConfig ModelConfig::full_scale(std::size_t channels) {
  ModelConfig c;
  c.volume = {60, 36, 60};
  c.features = {15, 9, 15};
  c.channels = channels;
  c.num_classes = 12;
  c.tokens = 75;
  return c;
}

void validate(const ModelConfig& c) {
  for (int a = 0; a < 3; ++a) {
    if (c.features[a] == 0 || c.volume[a] != 4 * c.features[a]) {
      throw ConfigError("volume extents must be exactly 4x the feature extents (two stride-2 stages); got volume " +
                        std::to_string(c.volume[a]) + " vs features " + std::to_string(c.features[a]) + " on axis " +
                        std::to_string(a));
    }
  }
  if (c.channels == 0) throw ConfigError("channels must be positive");
  if (c.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (c.kernel_size < 1 || c.kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd and positive");
  if (c.rotations.empty()) throw ConfigError("rotation set must not be empty");
  if (c.tokens == 0 || c.tokens >= c.feature_voxels()) {
    throw ConfigError("tokens M=" + std::to_string(c.tokens) + " must satisfy 0 < M < H*W*D=" +
                      std::to_string(c.feature_voxels()));
  }
  if (c.heads == 0 || c.channels % c.heads != 0) throw ConfigError("channels must be divisible by heads");
  if (c.encoder_depth == 0) throw ConfigError("encoder_depth must be positive");
}

void validate(const RunConfig& c) {
  validate(c.model);
  if (c.train.lr < 0.0 || c.train.momentum < 0.0 || c.train.momentum >= 1.0 || c.train.weight_decay < 0.0 ||
      c.train.clip_norm < 0.0) {
    throw ConfigError("training requires lr >= 0, 0 <= momentum < 1, weight_decay >= 0, clip_norm >= 0");
  }
  if (c.scene.train_scenes == 0) throw ConfigError("need at least one training scene");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  const ModelConfig& m = c.model;
  nlohmann::ordered_json rotations = nlohmann::ordered_json::array();
  for (const auto& r : m.rotations) rotations.push_back(r);
  j["model"] = {{"volume", m.volume},
                {"features", m.features},
                {"channels", m.channels},
                {"num_classes", m.num_classes},
                {"kernel_size", m.kernel_size},
                {"rotations", rotations},
                {"tokens", m.tokens},
                {"fusion", to_string(m.fusion)},
                {"wiring", to_string(m.wiring)},
                {"encoder_depth", m.encoder_depth},
                {"heads", m.heads},
                {"attention_scale", m.attention_scale},
                {"aggregate", to_string(m.aggregate)},
                {"use_mvfs", m.use_mvfs},
                {"use_cvtr", m.use_cvtr},
                {"seed", m.seed}};
  j["train"] = {{"steps", c.train.steps},
                {"lr", c.train.lr},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay},
                {"poly_power", c.train.poly_power},
                {"clip_norm", c.train.clip_norm}};
  j["scene"] = {{"box_count", c.scene.box_count},
                {"train_scenes", c.scene.train_scenes},
                {"eval_scenes", c.scene.eval_scenes}};
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& section, const std::string& name,
                    std::initializer_list<std::string_view> known) {
  if (!section.is_object()) throw ConfigError("config section '" + name + "' must be an object");
  for (const auto& [key, _] : section.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key " + (name.empty() ? key : name + "." + key));
    }
  }
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j, "", {"model", "train", "scene"});
    if (j.contains("model")) {
      const auto& m = j.at("model");
      ModelConfig& o = c.model;
      o.volume = m.value("volume", o.volume);
      o.features = m.value("features", o.features);
      o.channels = m.value("channels", o.channels);
      o.num_classes = m.value("num_classes", o.num_classes);
      o.kernel_size = m.value("kernel_size", o.kernel_size);
      if (m.contains("rotations")) o.rotations = m.at("rotations").get<std::vector<Angles>>();
      o.tokens = m.value("tokens", o.tokens);
      if (m.contains("fusion")) o.fusion = parse_fusion_scheme(m.at("fusion").get<std::string>());
      if (m.contains("wiring")) o.wiring = parse_token_wiring(m.at("wiring").get<std::string>());
      o.encoder_depth = m.value("encoder_depth", o.encoder_depth);
      o.heads = m.value("heads", o.heads);
      o.attention_scale = m.value("attention_scale", o.attention_scale);
      if (m.contains("aggregate")) o.aggregate = parse_aggregate(m.at("aggregate").get<std::string>());
      o.use_mvfs = m.value("use_mvfs", o.use_mvfs);
      o.use_cvtr = m.value("use_cvtr", o.use_cvtr);
      o.seed = m.value("seed", o.seed);
      reject_unknown(m, "model", {"volume", "features", "channels", "num_classes", "kernel_size", "rotations",
                                  "tokens", "fusion", "wiring", "encoder_depth", "heads", "attention_scale",
                                  "aggregate", "use_mvfs", "use_cvtr", "seed"});
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.steps = t.value("steps", c.train.steps);
      c.train.lr = t.value("lr", c.train.lr);
      c.train.momentum = t.value("momentum", c.train.momentum);
      c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
      c.train.poly_power = t.value("poly_power", c.train.poly_power);
      c.train.clip_norm = t.value("clip_norm", c.train.clip_norm);
      reject_unknown(t, "train", {"steps", "lr", "momentum", "weight_decay", "poly_power", "clip_norm"});
    }
    if (j.contains("scene")) {
      const auto& s = j.at("scene");
      c.scene.box_count = s.value("box_count", c.scene.box_count);
      c.scene.train_scenes = s.value("train_scenes", c.scene.train_scenes);
      c.scene.eval_scenes = s.value("eval_scenes", c.scene.eval_scenes);
      reject_unknown(s, "scene", {"box_count", "train_scenes", "eval_scenes"});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

void apply_override(nlohmann::ordered_json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::ordered_json value;
  try {
    value = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::ordered_json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (!node->is_object() && !node->is_null()) throw ConfigError("override key '" + key + "' descends into a value");
    start = dot + 1;
  }
}

}  // namespace cvs
