#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cvs/config.hpp"
#include "cvs/error.hpp"
#include "cvs/gradcheck_suite.hpp"
#include "cvs/kernel_geometry.hpp"
#include "cvs/metrics.hpp"
#include "cvs/model.hpp"
#include "cvs/mvfs.hpp"
#include "cvs/scene.hpp"
#include "cvs/serialize.hpp"
#include "cvs/train.hpp"

namespace cvs::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed_text;
  std::string out = "cvs-out";
  std::string fusion;
  std::string aggregate;
  bool no_attn_scale = false;
};

struct Context {
  RunConfig run;
  ojson effective;
  fs::path out;
  std::ostream& console;
};

// Held-out scenes never share a seed with training scenes.
constexpr std::uint64_t kEvalSeedOffset = 100000;

std::uint64_t parse_seed(const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || text.front() == '-') throw ConfigError("seed '" + text + "' is not a non-negative integer");
  return v;
}

ojson read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
}

// File, then --set overrides, then --seed (or CVS_SEED when --seed is absent).
Context resolve(const Common& c, std::ostream& out) {
  ojson j = c.config_path.empty() ? to_json(RunConfig{}) : read_config_file(c.config_path);
  for (const auto& o : c.overrides) apply_override(j, o);
  std::string seed_text = c.seed_text;
  if (seed_text.empty()) {
    if (const char* env = std::getenv("CVS_SEED"); env && *env) seed_text = env;
  }
  if (!seed_text.empty()) j["model"]["seed"] = parse_seed(seed_text);
  RunConfig run = run_config_from_json(j);
  validate(run);
  return Context{run, to_json(run), fs::path(c.out), out};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

void prepare_out(const Context& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) throw IoError("cannot create output directory " + ctx.out.string() + ": " + ec.message());
  write_text(ctx.out / "config.json", ctx.effective.dump(2) + "\n");
}

std::vector<Angles> parse_angles(const std::vector<std::string>& items) {
  std::vector<Angles> result;
  for (const auto& item : items) {
    std::vector<double> values;
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(part, &used));
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw ConfigError("--deg '" + item + "' is not a comma-separated list of numbers");
      }
    }
    if (values.empty() || values.size() > 3) throw ConfigError("--deg '" + item + "' needs one to three angles");
    values.resize(3, 0.0);
    result.push_back({values[0], values[1], values[2]});
  }
  return result;
}

ojson matrix_json(const Mat3& m) {
  ojson rows = ojson::array();
  for (const auto& row : m) rows.push_back(row);
  return rows;
}

std::vector<SceneSample> scenes_for(const RunConfig& run, std::size_t count, std::uint64_t offset) {
  const ModelConfig& m = run.model;
  SceneOptions options;
  options.box_count = run.scene.box_count;
  std::vector<SceneSample> scenes;
  for (std::size_t i = 0; i < count; ++i) {
    scenes.push_back(generate_scene(m.seed + offset + 1 + i, m.volume, m.num_classes, options));
  }
  return scenes;
}

void save_checkpoint(const fs::path& dir, Model& model) {
  fs::create_directories(dir);
  ojson index = ojson::array();
  for (const auto& p : model.parameters()) {
    save_tensor(dir / (p.name + ".cvst"), *p.tensor);
    index.push_back({{"name", p.name}, {"shape", p.tensor->shape()}});
  }
  write_text(dir / "index.json", index.dump(2) + "\n");
}

void load_checkpoint(const fs::path& dir, Model& model) {
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory " + dir.string() + " does not exist");
  for (const auto& p : model.parameters()) {
    Tensor t = load_tensor(dir / (p.name + ".cvst"));
    if (t.shape() != p.tensor->shape()) {
      throw DimensionError("checkpoint tensor " + p.name + " has shape " + shape_str(t.shape()) + ", model expects " +
                           shape_str(p.tensor->shape()));
    }
    *p.tensor = std::move(t);
  }
}

void save_labels(const fs::path& path, const std::vector<int>& labels, const std::array<std::size_t, 3>& extents) {
  save_tensor(path, labels_to_tensor(labels, extents));
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// ---------------------------------------------------------------- commands

int cmd_dump_kernel(const Context& ctx, int K, const std::vector<std::string>& degs) {
  const std::vector<Angles> angles = degs.empty() ? ctx.run.model.rotations : parse_angles(degs);
  const KernelLattice lattice = build_lattice(K);
  prepare_out(ctx);
  ojson doc;
  doc["K"] = K;
  doc["lattice"] = lattice.points;
  doc["views"] = ojson::array();
  std::ostream& out = ctx.console;
  for (const auto& a : angles) {
    const RotatedKernel rk = rotate_kernel(lattice, build_rotation(a[0], a[1], a[2]));
    out << "rotation deg=(" << a[0] << "," << a[1] << "," << a[2] << ")\n";
    out << " k      x      y      z        x'        y'        z'\n";
    for (std::size_t k = 0; k < lattice.points.size(); ++k) {
      const Vec3& p = lattice.points[k];
      Vec3 q = rk.points[k];
      for (double& v : q) v = std::abs(v) < 5e-7 ? 0.0 : v;
      char line[128];
      std::snprintf(line, sizeof line, "%2zu %6.0f %6.0f %6.0f %9.6f %9.6f %9.6f\n", k, p[0], p[1], p[2], q[0], q[1], q[2]);
      out << line;
    }
    out << "latticeExact=" << (rk.lattice_exact ? "true" : "false") << "\n";
    doc["views"].push_back({{"degrees", a},
                            {"matrix", matrix_json(rk.spec.matrix)},
                            {"points", rk.points},
                            {"lattice_exact", rk.lattice_exact}});
  }
  write_text(ctx.out / "kernel.json", doc.dump(2) + "\n");
  return kExitOk;
}

int cmd_gen_scene(const Context& ctx) {
  prepare_out(ctx);
  const SceneSample s = scenes_for(ctx.run, 1, 0).front();
  save_scene(ctx.out / "scene", s);
  std::size_t occluded = 0;
  for (auto o : s.occluded) occluded += o;
  ctx.console << "scene seed=" << s.seed << " extents=" << s.extents[0] << "x" << s.extents[1] << "x" << s.extents[2]
              << " occluded=" << occluded << " -> " << (ctx.out / "scene").string() << "\n";
  return kExitOk;
}

int cmd_dump_views(const Context& ctx) {
  if (!ctx.run.model.use_mvfs) throw ConfigError("dump-views needs model.use_mvfs=true");
  prepare_out(ctx);
  const Model model = Model::init(ctx.run.model);
  const SceneSample s = scenes_for(ctx.run, 1, 0).front();
  ModelCache cache;
  model_forward(model, s, &cache);
  save_tensor(ctx.out / "original.cvst", cache.volume);
  for (std::size_t r = 0; r < cache.views.size(); ++r) {
    const RotatedKernel& rk = model.mvfs.view(r);
    const std::string stem = "view" + std::to_string(r);
    save_tensor(ctx.out / (stem + ".cvst"), cache.views[r]);
    save_tensor(ctx.out / (stem + "_augmented.cvst"), cache.augmented[r]);
    ojson side{{"view", r},
               {"role", to_string(VolumeRole::synthetic)},
               {"file", stem + ".cvst"},
               {"augmented_file", stem + "_augmented.cvst"},
               {"shape", cache.views[r].shape()},
               {"degrees", {rk.spec.theta_x, rk.spec.theta_y, rk.spec.theta_z}},
               {"matrix", matrix_json(rk.spec.matrix)},
               {"lattice_exact", rk.lattice_exact},
               {"scene_seed", s.seed}};
    write_text(ctx.out / (stem + ".json"), side.dump(2) + "\n");
    ctx.console << stem << " deg=(" << rk.spec.theta_x << "," << rk.spec.theta_y << "," << rk.spec.theta_z
                << ") shape=" << shape_str(cache.views[r].shape()) << " latticeExact=" << (rk.lattice_exact ? "true" : "false")
                << "\n";
  }
  return kExitOk;
}

int cmd_dump_tokens(const Context& ctx) {
  const ModelConfig& m = ctx.run.model;
  if (!m.use_cvtr) throw ConfigError("dump-tokens needs model.use_cvtr=true");
  prepare_out(ctx);
  const Model model = Model::init(m);
  const SceneSample s = scenes_for(ctx.run, 1, 0).front();
  ModelCache cache;
  model_forward(model, s, &cache);
  ojson doc{{"fusion", to_string(m.fusion)}, {"scene_seed", s.seed}, {"views", cache.views.size()}};
  if (m.fusion == FusionScheme::all_for_one_tokens) {
    const ViewTokenSet& set = cache.cvtr.tokens;
    for (std::size_t r = 0; r < set.tokens.size(); ++r) {
      save_tensor(ctx.out / ("token" + std::to_string(r) + ".cvst"), set.tokens[r]);
    }
    save_tensor(ctx.out / "tokens.cvst", set.concatenated);
    doc["token_shape"] = set.tokens.front().shape();
    doc["concatenated_shape"] = set.concatenated.shape();
    ctx.console << set.tokens.size() << " view tokens of shape " << shape_str(set.tokens.front().shape())
                << ", concatenated " << shape_str(set.concatenated.shape()) << "\n";
  } else {
    const Tensor source = concat_flattened(cache.views);
    save_tensor(ctx.out / "keys.cvst", source);
    doc["keys_shape"] = source.shape();
    ctx.console << "fusion " << to_string(m.fusion) << " attends to flattened features " << shape_str(source.shape())
                << "\n";
  }
  write_text(ctx.out / "tokens.json", doc.dump(2) + "\n");
  return kExitOk;
}

int cmd_gradcheck(const Context& ctx, const std::string& module) {
  prepare_out(ctx);
  const auto reports = run_gradcheck_suite(module, ctx.run.model.seed);
  ojson doc = ojson::array();
  std::size_t passed = 0;
  for (const auto& r : reports) {
    ctx.console << format_report(r) << "\n";
    passed += r.pass ? 1 : 0;
    doc.push_back({{"op", r.op_name},
                   {"max_relative_error", r.max_relative_error},
                   {"per_input_errors", r.per_input_errors},
                   {"checked_entries", r.checked_entries},
                   {"tolerance", r.tolerance},
                   {"pass", r.pass}});
  }
  write_text(ctx.out / "gradcheck.json", doc.dump(2) + "\n");
  ctx.console << passed << "/" << reports.size() << " gradient checks passed\n";
  return passed == reports.size() ? kExitOk : kExitRuntime;
}

int cmd_train(const Context& ctx) {
  prepare_out(ctx);
  const RunConfig& run = ctx.run;
  const auto dataset = scenes_for(run, run.scene.train_scenes, 0);
  Model model = Model::init(run.model);
  const std::size_t every = std::max<std::size_t>(1, run.train.steps / 10);
  const TrainLog log = train_toy(model, dataset, run.train, [&](const StepRecord& s) {
    if (s.step % every == 0) ctx.console << "step " << s.step << " loss " << fmt("%.6f", s.loss) << "\n";
  });

  ojson curve{{"step", ojson::array()}, {"loss", ojson::array()}, {"lr", ojson::array()}};
  for (const auto& s : log.steps) {
    curve["step"].push_back(s.step);
    curve["loss"].push_back(s.loss);
    curve["lr"].push_back(s.lr);
  }
  curve["final_loss"] = log.final_loss;
  write_text(ctx.out / "loss_curve.json", curve.dump(2) + "\n");
  write_text(ctx.out / "train_log.jsonl", train_log_jsonl(log));
  write_text(ctx.out / "metrics.json", metrics_json(log.final_metrics, run.model.num_classes) + "\n");
  save_checkpoint(ctx.out / "checkpoint", model);
  save_scene(ctx.out / "scene", dataset.front());
  save_labels(ctx.out / "prediction.cvst", log.final_prediction, dataset.front().extents);
  ctx.console << "final loss " << fmt("%.6f", log.final_loss) << " SC-IoU " << fmt("%.4f", log.final_metrics.sc.iou)
              << " SSC-mIoU " << fmt("%.4f", log.final_metrics.ssc.mean_iou) << "\n";
  return kExitOk;
}

int cmd_eval(const Context& ctx, const std::string& checkpoint, const std::vector<std::string>& scene_dirs) {
  std::vector<SceneSample> scenes;
  for (const auto& d : scene_dirs) scenes.push_back(load_scene(d));
  if (scenes.empty()) scenes = scenes_for(ctx.run, ctx.run.scene.eval_scenes, kEvalSeedOffset);
  if (scenes.empty()) throw ConfigError("eval needs at least one scene (scene.eval_scenes or --scene)");
  Model model = Model::init(ctx.run.model);
  load_checkpoint(checkpoint, model);
  prepare_out(ctx);
  std::vector<std::vector<int>> predictions;
  ojson per_scene = ojson::array();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SceneSample& s = scenes[i];
    if (s.extents != ctx.run.model.volume || s.num_classes != ctx.run.model.num_classes) {
      throw DimensionError("scene " + std::to_string(i) + " does not match the model's volume or class count");
    }
    predictions.push_back(predict_labels(model_forward(model, s)));
    const std::string stem = "scene" + std::to_string(i);
    save_scene(ctx.out / stem, s);
    save_labels(ctx.out / (stem + "_prediction.cvst"), predictions.back(), s.extents);
    per_scene.push_back(ojson::parse(metrics_json(evaluate(predictions.back(), s), s.num_classes)));
  }
  const MetricReport pooled = evaluate(predictions, scenes);
  ojson doc{{"pooled", ojson::parse(metrics_json(pooled, ctx.run.model.num_classes))}, {"per_scene", per_scene}};
  write_text(ctx.out / "metrics.json", doc.dump(2) + "\n");
  ctx.console << scenes.size() << " scenes SC-IoU " << fmt("%.4f", pooled.sc.iou) << " SSC-mIoU "
              << fmt("%.4f", pooled.ssc.mean_iou) << "\n";
  return kExitOk;
}

int cmd_ablate(const Context& ctx, const std::string& grid) {
  const RunConfig& run = ctx.run;
  std::vector<AblationVariant> variants;
  if (grid == "views" || grid == "all") {
    auto v = view_grid(run.model);
    variants.insert(variants.end(), v.begin(), v.end());
  }
  if (grid == "components" || grid == "all") {
    auto v = component_grid(run.model);
    variants.insert(variants.end(), v.begin(), v.end());
  }
  if (grid == "fusion" || grid == "all") {
    auto v = fusion_grid(run.model);
    variants.insert(variants.end(), v.begin(), v.end());
  }
  prepare_out(ctx);
  const auto train_set = scenes_for(run, run.scene.train_scenes, 0);
  const auto eval_set = scenes_for(run, run.scene.eval_scenes, kEvalSeedOffset);
  const auto rows = ablate(variants, train_set, eval_set, run.train);
  write_text(ctx.out / "ablation.csv", ablation_csv(rows, run.model.num_classes));
  for (std::size_t i = 0; i < eval_set.size(); ++i) save_scene(ctx.out / "scenes" / ("scene" + std::to_string(i)), eval_set[i]);
  for (const auto& row : rows) {
    const fs::path dir = ctx.out / "predictions" / row.grid / row.variant;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < row.predictions.size(); ++i) {
      save_labels(dir / ("scene" + std::to_string(i) + ".cvst"), row.predictions[i], eval_set[i].extents);
    }
    ctx.console << row.grid << "/" << row.variant << " SC-IoU " << fmt("%.4f", row.metrics.sc.iou) << " SSC-mIoU "
                << fmt("%.4f", row.metrics.ssc.mean_iou) << "\n";
  }
  return kExitOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "Override a config value, e.g. model.channels=16 (repeatable)");
  sub->add_option("--seed", c.seed_text, "Seed (falls back to CVS_SEED, then the config)");
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
  sub->add_option("--fusion", c.fusion, "Cross-view fusion scheme")
      ->check(CLI::IsMember({"all", "all-for-one-features", "all-for-one-tokens"}));
  sub->add_option("--aggregate", c.aggregate, "How augmented views meet the decoder")
      ->check(CLI::IsMember({"sum", "concat"}));
  sub->add_flag("--no-attn-scale", c.no_attn_scale, "Use raw dot products as attention logits");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rotated-kernel multi-view feature synthesis and cross-view transformer toolkit", "cvs"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  int K = 3;
  std::vector<std::string> degs;
  std::string module = "all";
  std::string grid = "components";
  std::string checkpoint;
  std::vector<std::string> scene_dirs;
  std::size_t steps = 0;
  double lr = 0.0, momentum = 0.0;

  auto* dump_kernel = app.add_subcommand("dump-kernel", "Print lattice and rotated kernel points");
  add_common(dump_kernel, common);
  auto* k_opt = dump_kernel->add_option("--K", K, "Kernel size, odd (default: model.kernel_size)");
  dump_kernel->add_option("--deg", degs, "Rotation 'tx,ty,tz' in degrees (repeatable; default: config rotations)");

  auto* dump_views = app.add_subcommand("dump-views", "Write V, every V'_r and V''_r for a generated scene");
  add_common(dump_views, common);

  auto* dump_tokens = app.add_subcommand("dump-tokens", "Write the view tokens (or fusion keys) for a generated scene");
  add_common(dump_tokens, common);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  add_common(gradcheck, common);
  gradcheck->add_option("--module", module, "Module to check")
      ->check(CLI::IsMember({"all", "tensor", "mvfs", "cvtr", "pipeline"}))
      ->capture_default_str();

  auto* train = app.add_subcommand("train-toy", "Train the toy model on synthetic scenes");
  add_common(train, common);
  auto* steps_opt = train->add_option("--steps", steps, "SGD steps");
  auto* lr_opt = train->add_option("--lr", lr, "Learning rate");
  auto* momentum_opt = train->add_option("--momentum", momentum, "Momentum");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out or saved scenes");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory written by train-toy")->required();
  eval->add_option("--scene", scene_dirs, "Scene directory (repeatable; default: generated held-out scenes)");

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate an ablation grid");
  add_common(ablate_cmd, common);
  ablate_cmd->add_option("--grid", grid, "Grid to run")
      ->check(CLI::IsMember({"views", "components", "fusion", "all"}))
      ->capture_default_str();

  auto* gen_scene = app.add_subcommand("gen-scene", "Write one synthetic scene");
  add_common(gen_scene, common);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitValidation;
  }

  std::optional<Context> ctx;
  try {
    Common effective = common;
    if (*steps_opt) effective.overrides.push_back("train.steps=" + std::to_string(steps));
    if (*lr_opt) effective.overrides.push_back("train.lr=" + nlohmann::json(lr).dump());
    if (*momentum_opt) effective.overrides.push_back("train.momentum=" + nlohmann::json(momentum).dump());
    if (!common.fusion.empty()) effective.overrides.push_back("model.fusion=\"" + common.fusion + "\"");
    if (!common.aggregate.empty()) effective.overrides.push_back("model.aggregate=\"" + common.aggregate + "\"");
    if (common.no_attn_scale) effective.overrides.push_back("model.attention_scale=false");
    ctx.emplace(resolve(effective, out));
    if (*dump_kernel) {
      if (!*k_opt) K = ctx->run.model.kernel_size;
      build_lattice(K);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    const Context& c = *ctx;
    if (*dump_kernel) return cmd_dump_kernel(c, K, degs);
    if (*dump_views) return cmd_dump_views(c);
    if (*dump_tokens) return cmd_dump_tokens(c);
    if (*gradcheck) return cmd_gradcheck(c, module);
    if (*train) return cmd_train(c);
    if (*eval) return cmd_eval(c, checkpoint, scene_dirs);
    if (*ablate_cmd) return cmd_ablate(c, grid);
    if (*gen_scene) return cmd_gen_scene(c);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace cvs::cli
