// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural Lambertian scenes with exact per-pixel intrinsics.
//
// Spheres and axis-aligned boxes rest on an infinite ground plane (y = 0).
// One ray per pixel, no shadows. Normals are reported in the camera frame
// (x right, y up, z towards the viewer).

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ilora/intrinsics.hpp"

namespace ilora {

enum class ShapeKind : std::uint8_t { sphere, box };

struct SceneObject {
  ShapeKind shape = ShapeKind::sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double size = 0.5;  // sphere radius or box half-extent
  Eigen::Vector3d albedo = Eigen::Vector3d::Constant(0.5);
};

struct Camera {
  Eigen::Vector3d position{0, 2, 0};
  Eigen::Vector3d look_at{0, 0, -3};
  double fov_deg = 50;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  Eigen::Vector3d ground_albedo = Eigen::Vector3d::Constant(0.5);
  Eigen::Vector3d light_dir{0, 1, 0};
  double ambient = 0.1;
  double light_intensity = 0.8;
  Camera camera;

  bool operator==(const SceneSpec&) const;
};

enum class Difficulty : std::uint8_t { easy, standard };

// Sampling ranges. kShadingMax bounds every shading value the sampler can
// produce and is the codec's shading_max.
inline constexpr double kAmbientRange[2] = {0.05, 0.3};
inline constexpr double kIntensityRange[2] = {0.5, 1.0};
inline constexpr double kShadingMax = kAmbientRange[1] + kIntensityRange[1];
inline constexpr int kPaletteSize = 10;

const std::array<Eigen::Vector3d, kPaletteSize>& albedo_palette();

/// Throws ConfigError naming the violated invariant.
void validate(const SceneSpec& spec);

SceneSpec sample_scene_spec(std::uint64_t seed, Difficulty difficulty = Difficulty::standard);

struct SceneSample {
  Image rgb;
  IntrinsicMap normal, depth, albedo, shading;
  SceneSpec spec;
  std::uint64_t seed = 0;

  const IntrinsicMap& intrinsic(IntrinsicKind kind) const;
};

inline constexpr int kResolutions[] = {32, 48, 64, 128};

/// Ray-casts the scene. Throws ConfigError for an unsupported resolution or a
/// degenerate camera.
SceneSample render_scene(const SceneSpec& spec, int resolution, std::uint64_t seed = 0);

/// Unit ray direction (world frame) through the centre of pixel (x, y).
Eigen::Vector3d pixel_ray(const Camera& camera, int resolution, int x, int y);

struct SplitSizes {
  int train = 0, val = 0, test = 0;
};

struct DatasetManifest {
  int version = 1;
  int n_samples = 0;
  int resolution = 0;
  std::uint64_t seed = 0;
  SplitSizes splits;
  CodecParams codec;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

SplitSizes split_sizes(int n);

struct Dataset {
  DatasetManifest manifest;
  std::vector<SceneSample> samples;

  int train_begin() const { return 0; }
  int val_begin() const { return manifest.splits.train; }
  int test_begin() const { return manifest.splits.train + manifest.splits.val; }
  std::vector<int> split_indices(std::string_view split) const;
  Digest manifest_hash() const;
};

/// Renders n samples in memory; sample i uses seed mix_seed(seed, i).
Dataset forge_dataset(int n, std::uint64_t seed, int resolution, Difficulty difficulty = Difficulty::standard);

/// Writes samples/%06d.{rgb,normal,depth,albedo,shading,mask}.ntf and manifest.json.
DatasetManifest write_dataset(const Dataset& dataset, const std::filesystem::path& out_dir);

DatasetManifest generate_dataset(int n, std::uint64_t seed, int resolution, const std::filesystem::path& out_dir);

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ilora
