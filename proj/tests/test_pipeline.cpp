#include <doctest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cvs/config.hpp"
#include "cvs/error.hpp"
#include "cvs/gradcheck_suite.hpp"
#include "cvs/model.hpp"
#include "cvs/train.hpp"

using namespace cvs;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.channels = 4;
  c.tokens = 4;
  return c;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') quoted = !quoted;
    else if (ch == ',' && !quoted) {
      cells.push_back(cell);
      cell.clear();
    } else cell += ch;
  }
  cells.push_back(cell);
  return cells;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("all-zero parameters give loss ln(classes)") {
  for (int classes : {2, 4, 7}) {
    ModelConfig c = small_config();
    c.num_classes = classes;
    const Model m = Model::zeros(c);
    for (std::uint64_t seed : {1, 2, 3}) {
      const SceneSample s = generate_scene(seed, c.volume, classes);
      const Tensor logits = model_forward(m, s);
      for (double v : logits.data()) CHECK(v == 0.0);
      CHECK(std::abs(scene_loss(logits, s).loss - std::log(double(classes))) < 1e-10);
    }
  }
}

TEST_CASE("a fresh model also starts at ln(classes)") {
  const ModelConfig c = small_config();
  const Model m = Model::init(c);
  const SceneSample s = generate_scene(4, c.volume, c.num_classes);
  CHECK(std::abs(scene_loss(model_forward(m, s), s).loss - std::log(4.0)) < 1e-12);
}

TEST_CASE("logit shape and input checks") {
  const ModelConfig c = small_config();
  const Model m = Model::init(c);
  const SceneSample s = generate_scene(1, c.volume, c.num_classes);
  CHECK(model_forward(m, s).shape() == Shape{16, 8, 16, 4});
  CHECK_THROWS_AS(model_forward(m, Tensor({8, 8, 8, 4}), Tensor({8, 8, 8, 1})), DimensionError);
  CHECK_THROWS_AS(model_forward(m, s.semantic, Tensor({16, 8, 16, 2})), DimensionError);
}

TEST_CASE("every aggregation and component combination runs") {
  for (auto agg : {Aggregate::sum, Aggregate::concat})
    for (bool mvfs : {false, true})
      for (bool cvtr : {false, true}) {
        ModelConfig c = small_config();
        c.aggregate = agg;
        c.use_mvfs = mvfs;
        c.use_cvtr = cvtr;
        Model m = Model::init(c);
        const SceneSample s = generate_scene(2, c.volume, c.num_classes);
        ModelCache cache;
        const Tensor logits = model_forward(m, s, &cache);
        CHECK(logits.all_finite());
        CHECK(cache.views.size() == (mvfs ? 4u : 1u));
        const CrossEntropy ce = scene_loss(logits, s);
        const InputGrads g = model_backward(m, cache, ce.grad);
        CHECK(g.semantic.shape() == s.semantic.shape());
        CHECK(g.geometric.shape() == s.geometric.shape());
      }
}

TEST_CASE("parameters follow the enabled components") {
  ModelConfig c = small_config();
  Model full = Model::init(c);
  c.use_cvtr = false;
  Model no_cvtr = Model::init(c);
  CHECK(no_cvtr.parameter_count() < full.parameter_count());
  for (const auto& p : no_cvtr.parameters()) CHECK(p.name.rfind("cvtr", 0) == std::string::npos);
}

TEST_CASE("zero learning rate freezes the loss") {
  const ModelConfig c = small_config();
  Model m = Model::init(c);
  const std::vector<SceneSample> data{generate_scene(1, c.volume, c.num_classes)};
  TrainConfig t;
  t.steps = 6;
  t.lr = 0.0;
  const TrainLog log = train_toy(m, data, t);
  for (const auto& s : log.steps) CHECK(s.loss == log.steps.front().loss);
}

TEST_CASE("training is bit-reproducible") {
  const ModelConfig c = small_config();
  const std::vector<SceneSample> data{generate_scene(1, c.volume, c.num_classes),
                                      generate_scene(2, c.volume, c.num_classes)};
  TrainConfig t;
  t.steps = 8;
  Model a = Model::init(c), b = Model::init(c);
  const TrainLog la = train_toy(a, data, t), lb = train_toy(b, data, t);
  for (std::size_t i = 0; i < t.steps; ++i) CHECK(la.steps[i].loss == lb.steps[i].loss);
  CHECK(la.final_prediction == lb.final_prediction);
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(*pa[i].tensor, *pb[i].tensor));
}

TEST_CASE("training lowers the loss") {
  const ModelConfig c = small_config();
  Model m = Model::init(c);
  const std::vector<SceneSample> data{generate_scene(1, c.volume, c.num_classes)};
  TrainConfig t;
  t.steps = 40;
  const TrainLog log = train_toy(m, data, t);
  CHECK(log.final_loss < 0.5 * log.steps.front().loss);
  CHECK(std::isfinite(log.final_metrics.sc.iou));
}

TEST_CASE("poly schedule decays the learning rate") {
  const ModelConfig c = small_config();
  Model m = Model::init(c);
  const std::vector<SceneSample> data{generate_scene(1, c.volume, c.num_classes)};
  TrainConfig t;
  t.steps = 4;
  t.poly_power = 1.0;
  const TrainLog log = train_toy(m, data, t);
  CHECK(log.steps[0].lr == t.lr);
  CHECK(log.steps[2].lr == doctest::Approx(t.lr * 0.5));
}

TEST_CASE("divergence names the step") {
  const ModelConfig c = small_config();
  Model m = Model::init(c);
  const std::vector<SceneSample> data{generate_scene(1, c.volume, c.num_classes)};
  TrainConfig t;
  t.steps = 60;
  t.lr = 1e6;
  t.clip_norm = 0.0;
  try {
    train_toy(m, data, t);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
  CHECK_THROWS_AS(train_toy(m, {}, t), ConfigError);
}

TEST_CASE("ablation grids have the expected variants") {
  const ModelConfig c = small_config();
  const auto views = view_grid(c);
  REQUIRE(views.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(views[i].config.rotations.size() == i + 1);
  CHECK(views[3].config.rotations[3] == Angles{135, 0, 0});

  const auto comps = component_grid(c);
  REQUIRE(comps.size() == 3);
  CHECK(comps[0].name == "baseline");
  CHECK_FALSE(comps[0].config.use_mvfs);
  CHECK_FALSE(comps[0].config.use_cvtr);
  CHECK(comps[1].config.aggregate == Aggregate::concat);
  CHECK(comps[2].config.use_cvtr);

  const auto fusion = fusion_grid(c);
  REQUIRE(fusion.size() == 3);
  CHECK(fusion[0].config.fusion == FusionScheme::all);
}

TEST_CASE("ablation report matches metrics recomputed from its predictions") {
  const ModelConfig c = small_config();
  const std::vector<SceneSample> train{generate_scene(1, c.volume, c.num_classes)};
  const std::vector<SceneSample> held{generate_scene(50, c.volume, c.num_classes),
                                      generate_scene(51, c.volume, c.num_classes)};
  TrainConfig t;
  t.steps = 3;
  const auto rows = ablate(component_grid(c), train, held, t);
  REQUIRE(rows.size() == 3);
  for (const auto& row : rows) {
    REQUIRE(row.predictions.size() == 2);
    const MetricReport again = evaluate(row.predictions, held);
    CHECK(again.sc.iou == row.metrics.sc.iou);
    CHECK(again.ssc.mean_iou == row.metrics.ssc.mean_iou);
  }
  std::istringstream csv(ablation_csv(rows, c.num_classes));
  std::string line;
  std::getline(csv, line);
  const auto header = split_csv_line(line);
  CHECK(header[0] == "grid");
  CHECK(header[1] == "variant");
  CHECK(header[2] == "SC-IoU");
  CHECK(header[3] == "SSC-mIoU");
  CHECK(header.size() == 4 + 3);
  std::size_t n = 0;
  while (std::getline(csv, line)) {
    CHECK(split_csv_line(line).size() == header.size());
    ++n;
  }
  CHECK(n == 3);
}

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(validate(c));
  CHECK_NOTHROW(validate(ModelConfig::full_scale(16)));
  auto bad = [](auto mutate) {
    ModelConfig m;
    mutate(m);
    CHECK_THROWS_AS(validate(m), ConfigError);
  };
  bad([](ModelConfig& m) { m.features = {4, 3, 4}; });
  bad([](ModelConfig& m) { m.rotations.clear(); });
  bad([](ModelConfig& m) { m.tokens = 32; });
  bad([](ModelConfig& m) { m.kernel_size = 2; });
  bad([](ModelConfig& m) { m.heads = 3; });
  bad([](ModelConfig& m) { m.num_classes = 1; });
  bad([](ModelConfig& m) { m.channels = 0; });
}

TEST_CASE("full-scale shapes") {
  const ModelConfig c = ModelConfig::full_scale(16);
  CHECK(c.volume == std::array<std::size_t, 3>{60, 36, 60});
  CHECK(c.features == std::array<std::size_t, 3>{15, 9, 15});
  CHECK(c.tokens == 75);
  CHECK(c.rotations.size() == 4);
  CHECK(c.channels == 16);
  Model m = Model::init(c);
  CHECK(m.cvtr.encoders.front().position_embedding.shape() == Shape{75 + 15 * 9 * 15, 16});
}

TEST_CASE("config JSON round trip and overrides") {
  RunConfig r;
  r.model.channels = 12;
  r.model.rotations = {{0, 0, 0}, {10, 20, 30}};
  r.model.fusion = FusionScheme::all;
  r.train.lr = 0.01;
  const auto j = to_json(r);
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);

  auto o = to_json(RunConfig{});
  apply_override(o, "model.channels=16");
  apply_override(o, "model.fusion=all");
  apply_override(o, "train.lr=0.2");
  apply_override(o, "model.rotations=[[0,0,0]]");
  const RunConfig e = run_config_from_json(o);
  CHECK(e.model.channels == 16);
  CHECK(e.model.fusion == FusionScheme::all);
  CHECK(e.train.lr == 0.2);
  CHECK(e.model.rotations.size() == 1);

  CHECK_THROWS_AS(apply_override(o, "no-equals-sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(o, "model..channels=1"), ConfigError);
  auto typo = to_json(RunConfig{});
  apply_override(typo, "train.learning_rate=1");
  CHECK_THROWS_AS(run_config_from_json(typo), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"model":{"channels":"many"}})")), ConfigError);
}

TEST_CASE("finite-difference suite for the full model") {
  for (const auto& r : run_gradcheck_suite("pipeline", 2)) {
    INFO(format_report(r));
    CHECK(r.pass);
  }
}

}
