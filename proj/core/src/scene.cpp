#include "cvs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cvs/error.hpp"
#include "cvs/rng.hpp"
#include "cvs/serialize.hpp"

namespace cvs {

std::vector<std::uint8_t> SceneSample::eval_mask() const {
  std::vector<std::uint8_t> mask(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) mask[i] = labels[i] != kIgnoreLabel;
  return mask;
}

std::vector<std::string> class_names(int num_classes) {
  std::vector<std::string> names{"empty"};
  if (num_classes >= 2) names.push_back("floor");
  if (num_classes >= 3) names.push_back("wall");
  for (int c = 3; c < num_classes; ++c) names.push_back("furniture" + std::to_string(c - 3));
  return names;
}

void validate_scene(const SceneSample& s) {
  const auto [h, w, d] = s.extents;
  if (h == 0 || w == 0 || d == 0) throw ConfigError("scene: extents must be positive");
  if (s.num_classes < 2) throw ConfigError("scene: need at least two classes");
  const std::size_t n = s.voxel_count();
  const auto classes = static_cast<std::size_t>(s.num_classes);
  if (s.semantic.shape() != Shape{h, w, d, classes}) throw ConfigError("scene: semantic volume has the wrong shape");
  if (s.geometric.shape() != Shape{h, w, d, 1}) throw ConfigError("scene: geometric volume has the wrong shape");
  if (s.labels.size() != n || s.occluded.size() != n) throw ConfigError("scene: label/occlusion grids have the wrong size");
  if (!s.geometric.all_finite()) throw ConfigError("scene: geometric volume is not finite");
  for (std::size_t i = 0; i < n; ++i) {
    double ones = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double v = s.semantic[i * classes + c];
      if (v != 0.0 && v != 1.0) throw ConfigError("scene: semantic volume is not one-hot");
      ones += v;
    }
    if (ones > 1.0) throw ConfigError("scene: semantic voxel with several classes");
    const int l = s.labels[i];
    if (l != kIgnoreLabel && (l < 0 || l >= s.num_classes)) throw ConfigError("scene: invalid label");
    if (s.occluded[i] > 1) throw ConfigError("scene: occlusion mask is not boolean");
    if (s.occluded[i] && l == kIgnoreLabel) throw ConfigError("scene: occluded voxel outside the frustum");
  }
}

namespace {

struct Box {
  std::array<std::size_t, 3> lo, hi;  // inclusive lo, exclusive hi
};

std::size_t clamp_extent(std::int64_t v, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(std::clamp<std::int64_t>(v, static_cast<std::int64_t>(lo),
                                                            static_cast<std::int64_t>(hi)));
}

// Camera sits in front of the d = 0 face, centered on h; the frustum widens
// with depth. Vertical extent is fully visible.
bool in_frustum(std::size_t h, std::size_t d, std::size_t H, std::size_t D) {
  const double center = static_cast<double>(H) / 2.0;
  const double half = center * (0.6 + 0.4 * static_cast<double>(d + 1) / static_cast<double>(D));
  return std::abs(static_cast<double>(h) + 0.5 - center) <= half;
}

SceneSample generate_once(std::uint64_t seed, std::array<std::size_t, 3> ext, int num_classes,
                          const SceneOptions& opt) {
  const auto [H, W, D] = ext;
  Rng rng(seed);
  auto idx = [&](std::size_t h, std::size_t w, std::size_t d) { return (h * W + w) * D + d; };
  const int floor_class = 1;
  const int wall_class = std::min(2, num_classes - 1);

  std::vector<int> gt(H * W * D, kEmptyClass);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t d = 0; d < D; ++d) gt[idx(h, 0, d)] = floor_class;
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) gt[idx(h, w, D - 1)] = wall_class;
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t d = 0; d < D; ++d) gt[idx(0, w, d)] = wall_class;

  for (std::size_t b = 0; b < opt.box_count; ++b) {
    const int cls = num_classes > 3 ? 3 + static_cast<int>(b % static_cast<std::size_t>(num_classes - 3))
                                    : num_classes - 1;
    const std::size_t sh = clamp_extent(rng.uniform_int(2, std::max<std::int64_t>(2, H / 3)), 1, H);
    const std::size_t sw = clamp_extent(rng.uniform_int(2, std::max<std::int64_t>(2, W / 2)), 1, W);
    const std::size_t sd = clamp_extent(rng.uniform_int(2, std::max<std::int64_t>(2, D / 3)), 1, D);
    const std::size_t h0 = clamp_extent(rng.uniform_int(1, std::max<std::int64_t>(1, static_cast<std::int64_t>(H) - 1 - static_cast<std::int64_t>(sh))), 0, H - 1);
    const std::size_t d0 = clamp_extent(
        rng.uniform_int(static_cast<std::int64_t>(D / 4),
                        std::max<std::int64_t>(static_cast<std::int64_t>(D / 4),
                                               static_cast<std::int64_t>(D) - 1 - static_cast<std::int64_t>(sd))),
        0, D - 1);
    const std::size_t w0 = std::min<std::size_t>(1, W - 1);
    const Box box{{h0, w0, d0}, {std::min(H, h0 + sh), std::min(W, w0 + sw), std::min(D, d0 + sd)}};
    for (std::size_t h = box.lo[0]; h < box.hi[0]; ++h)
      for (std::size_t w = box.lo[1]; w < box.hi[1]; ++w)
        for (std::size_t d = box.lo[2]; d < box.hi[2]; ++d) gt[idx(h, w, d)] = cls;
  }

  SceneSample s;
  s.extents = ext;
  s.num_classes = num_classes;
  s.seed = seed;
  const auto classes = static_cast<std::size_t>(num_classes);
  s.semantic = Tensor({H, W, D, classes});
  s.geometric = Tensor({H, W, D, 1});
  s.labels = gt;
  s.occluded.assign(H * W * D, 0);

  // Cast rays along +d; the first occupied voxel inside the frustum is the
  // observed surface.
  std::vector<std::uint8_t> surface(H * W * D, 0);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) {
      bool hit = false;
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t i = idx(h, w, d);
        if (!in_frustum(h, d, H, D)) {
          s.labels[i] = kIgnoreLabel;
          continue;
        }
        if (hit) {
          s.occluded[i] = 1;
        } else if (gt[i] != kEmptyClass) {
          hit = true;
          surface[i] = 1;
          if (rng.uniform() >= opt.observation_dropout) s.semantic[i * classes + static_cast<std::size_t>(gt[i])] = 1.0;
        }
      }
    }

  const auto reach = static_cast<long>(std::ceil(opt.truncation));
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t d = 0; d < D; ++d) {
        double best = opt.truncation;
        for (long dh = -reach; dh <= reach; ++dh)
          for (long dw = -reach; dw <= reach; ++dw)
            for (long dd = -reach; dd <= reach; ++dd) {
              const long hh = static_cast<long>(h) + dh, ww = static_cast<long>(w) + dw, zz = static_cast<long>(d) + dd;
              if (hh < 0 || ww < 0 || zz < 0 || hh >= static_cast<long>(H) || ww >= static_cast<long>(W) ||
                  zz >= static_cast<long>(D))
                continue;
              if (!surface[idx(static_cast<std::size_t>(hh), static_cast<std::size_t>(ww), static_cast<std::size_t>(zz))])
                continue;
              best = std::min(best, std::sqrt(static_cast<double>(dh * dh + dw * dw + dd * dd)));
            }
        const std::size_t i = idx(h, w, d);
        const double sign = s.occluded[i] ? -1.0 : 1.0;
        s.geometric[i] = sign * best / opt.truncation;
      }
  return s;
}

bool has_occluded_occupied(const SceneSample& s) {
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (s.occluded[i] && s.labels[i] != kEmptyClass && s.labels[i] != kIgnoreLabel) return true;
  }
  return false;
}

}  // namespace

SceneSample generate_scene(std::uint64_t seed, std::array<std::size_t, 3> extents, int num_classes,
                           const SceneOptions& options) {
  if (extents[0] == 0 || extents[1] == 0 || extents[2] == 0) throw ParameterError("generate_scene: extents must be positive");
  if (num_classes < 2) throw ParameterError("generate_scene: need at least two classes");
  for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(attempt) * 0x9e3779b97f4a7c15ULL;
    SceneSample sample = generate_once(s, extents, num_classes, options);
    if (has_occluded_occupied(sample)) {
      sample.seed = seed;
      return sample;
    }
  }
  throw GenerationError("generate_scene: no occluded occupied voxel after " + std::to_string(options.max_retries) +
                        " retries");
}

Tensor labels_to_tensor(const std::vector<int>& labels, const std::array<std::size_t, 3>& e) {
  std::vector<double> data(labels.begin(), labels.end());
  return Tensor({e[0], e[1], e[2]}, std::move(data));
}

std::vector<int> tensor_to_labels(const Tensor& t) {
  std::vector<int> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (v != std::round(v)) throw IoError("label tensor holds a non-integer value");
    out[i] = static_cast<int>(v);
  }
  return out;
}

void save_scene(const std::filesystem::path& dir, const SceneSample& s) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / "semantic.cvst", s.semantic);
  save_tensor(dir / "geometric.cvst", s.geometric);
  save_tensor(dir / "labels.cvst", labels_to_tensor(s.labels, s.extents));
  std::vector<int> occ(s.occluded.begin(), s.occluded.end());
  save_tensor(dir / "occluded.cvst", labels_to_tensor(occ, s.extents));
  nlohmann::ordered_json m;
  m["extents"] = s.extents;
  m["num_classes"] = s.num_classes;
  m["class_names"] = class_names(s.num_classes);
  m["seed"] = s.seed;
  m["ignore_label"] = kIgnoreLabel;
  m["files"] = {{"semantic", "semantic.cvst"},
                {"geometric", "geometric.cvst"},
                {"labels", "labels.cvst"},
                {"occluded", "occluded.cvst"}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << m.dump(2) << '\n';
}

SceneSample load_scene(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    is >> m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("scene manifest: ") + e.what());
  }
  SceneSample s;
  try {
    s.extents = m.at("extents").get<std::array<std::size_t, 3>>();
    s.num_classes = m.at("num_classes").get<int>();
    s.seed = m.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("scene manifest: ") + e.what());
  }
  s.semantic = load_tensor(dir / "semantic.cvst");
  s.geometric = load_tensor(dir / "geometric.cvst");
  s.labels = tensor_to_labels(load_tensor(dir / "labels.cvst"));
  const auto occ = tensor_to_labels(load_tensor(dir / "occluded.cvst"));
  s.occluded.assign(occ.begin(), occ.end());
  validate_scene(s);
  return s;
}

}  // namespace cvs
