#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cvs/tensor.hpp"

namespace cvs {

inline constexpr int kEmptyClass = 0;
inline constexpr int kIgnoreLabel = 255;

// Paired semantic / geometric input volumes with ground truth.
//   semantic  (H, W, D, classes): one-hot at observed surface voxels, else 0
//   geometric (H, W, D, 1): truncated signed distance to the observed
//             surface, negative behind it
//   labels    class per voxel, kIgnoreLabel outside the view frustum
//   occluded  1 for in-frustum voxels hidden behind the observed surface
struct SceneSample {
  std::array<std::size_t, 3> extents{};
  int num_classes = 0;
  std::uint64_t seed = 0;
  Tensor semantic;
  Tensor geometric;
  std::vector<int> labels;
  std::vector<std::uint8_t> occluded;

  std::size_t voxel_count() const { return extents[0] * extents[1] * extents[2]; }
  // Voxels whose label is not ignored.
  std::vector<std::uint8_t> eval_mask() const;
};

std::vector<std::string> class_names(int num_classes);

// Throws ConfigError describing the first violated invariant.
void validate_scene(const SceneSample& sample);

struct SceneOptions {
  std::size_t box_count = 3;
  double observation_dropout = 0.1;  // fraction of surface voxels missing from S
  double truncation = 3.0;           // TSDF truncation distance in voxels
  int max_retries = 16;
};

// Deterministic per seed: floor slab, back and side walls, box "furniture",
// observed from a camera in front of the d = 0 face looking along +d.
SceneSample generate_scene(std::uint64_t seed, std::array<std::size_t, 3> extents, int num_classes,
                           const SceneOptions& options = {});

// Directory layout: semantic.cvst, geometric.cvst, labels.cvst,
// occluded.cvst and manifest.json.
void save_scene(const std::filesystem::path& dir, const SceneSample& sample);
SceneSample load_scene(const std::filesystem::path& dir);

Tensor labels_to_tensor(const std::vector<int>& labels, const std::array<std::size_t, 3>& extents);
std::vector<int> tensor_to_labels(const Tensor& t);

}  // namespace cvs
