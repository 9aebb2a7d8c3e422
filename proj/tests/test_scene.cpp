// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ilora/scene.hpp"

using namespace ilora;
namespace fs = std::filesystem;

namespace {

// Independent pinhole ray for pixel (x, y).
Eigen::Vector3d oracle_ray(const Camera& cam, int res, int x, int y) {
  const Eigen::Vector3d f = (cam.look_at - cam.position).normalized();
  const Eigen::Vector3d r = f.cross(Eigen::Vector3d::UnitY()).normalized();
  const Eigen::Vector3d u = r.cross(f);
  const double focal = 0.5 / std::tan(cam.fov_deg * std::numbers::pi / 360.0);
  const double sx = (x + 0.5) / res - 0.5, sy = (y + 0.5) / res - 0.5;
  return (focal * f + sx * r - sy * u).normalized();
}

double oracle_depth(const SceneSpec& spec, const Eigen::Vector3d& d) {
  const Eigen::Vector3d& o = spec.camera.position;
  double best = d.y() < 0 ? -o.y() / d.y() : std::numeric_limits<double>::infinity();
  for (const auto& obj : spec.objects) {
    // |o + t d - c|^2 = r^2, smallest positive root.
    const Eigen::Vector3d oc = o - obj.center;
    const double b = 2 * oc.dot(d), c = oc.squaredNorm() - obj.size * obj.size;
    const double disc = b * b - 4 * c;
    if (disc < 0) continue;
    const double t = (-b - std::sqrt(disc)) / 2;
    if (t > 0) best = std::min(best, t);
  }
  return best;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ilora_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("scene sampling is deterministic and valid") {
  CHECK(sample_scene_spec(5) == sample_scene_spec(5));
  CHECK_FALSE(sample_scene_spec(5) == sample_scene_spec(6));
  std::array<int, 7> hist_std{}, hist_easy{};
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto spec = sample_scene_spec(s);
    CHECK_NOTHROW(validate(spec));
    ++hist_std[spec.objects.size()];
    ++hist_easy[sample_scene_spec(s, Difficulty::easy).objects.size()];
  }
  CHECK(hist_std[0] + hist_std[1] == 0);
  CHECK(hist_easy[1] + hist_easy[2] == 1000);
  for (int k = 2; k <= 6; ++k) CHECK(hist_std[k] > 100);
  CHECK(albedo_palette().size() >= 8);
}

TEST_CASE("renderer satisfies the rendering equation on random scenes") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto smp = render_scene(sample_scene_spec(s), 32, s);
    CHECK(smp.normal.mask.all());
    for (int p = 0; p < smp.rgb.pixels(); ++p) {
      for (int c = 0; c < 3; ++c) {
        const double rgb01 = (double(smp.rgb.data(c, p)) + 1.0) / 2.0;
        const double expect =
            std::clamp(double(smp.albedo.data(c, p)) * std::min(double(smp.shading.data(0, p)), kShadingMax), 0.0, 1.0);
        REQUIRE(std::abs(rgb01 - expect) <= 1e-5);
      }
      REQUIRE(std::abs(double(smp.normal.data.col(p).norm()) - 1.0) <= 1e-4);
      REQUIRE(smp.depth.data(0, p) > 0.0f);
      REQUIRE(double(smp.shading.data(0, p)) >= smp.spec.ambient - 1e-6);
    }
  }
}

TEST_CASE("ground-only depth matches a ray-plane solver") {
  SceneSpec spec = sample_scene_spec(42);
  spec.objects.clear();
  const auto smp = render_scene(spec, 48);
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 48; ++x) {
      const auto d = oracle_ray(spec.camera, 48, x, y);
      REQUIRE(d.y() < 0);
      const double t = spec.camera.position.y() / -d.y();
      REQUIRE(std::abs(double(smp.depth.data(0, y * 48 + x)) - t) <= 1e-5 * std::max(1.0, t));
    }
  }
}

TEST_CASE("sphere scenes match a closed-form ray-sphere solver") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    SceneSpec spec = sample_scene_spec(100 + s);
    for (auto& o : spec.objects) o.shape = ShapeKind::sphere;
    const auto smp = render_scene(spec, 32);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const double t = oracle_depth(spec, oracle_ray(spec.camera, 32, x, y));
        REQUIRE(std::abs(double(smp.depth.data(0, y * 32 + x)) - t) <= 1e-5 * std::max(1.0, t));
      }
    }
  }
}

TEST_CASE("sphere on the optical axis lit from the camera") {
  SceneSpec spec;
  spec.camera.position = Eigen::Vector3d(0, 2, 0);
  spec.camera.look_at = Eigen::Vector3d(0, 1, -4);
  spec.camera.fov_deg = 40;
  SceneObject ball;
  ball.center = spec.camera.position + 4.0 * (spec.camera.look_at - spec.camera.position).normalized();
  ball.size = 0.8;
  spec.objects = {ball};
  spec.light_dir = (spec.camera.position - spec.camera.look_at).normalized();
  spec.ambient = 0.2;
  spec.light_intensity = 0.9;
  const auto smp = render_scene(spec, 64);
  Eigen::Index best = 0;
  smp.shading.data.row(0).maxCoeff(&best);
  const int bx = static_cast<int>(best % 64), by = static_cast<int>(best / 64);
  CHECK((bx == 31 || bx == 32));
  CHECK((by == 31 || by == 32));
  CHECK(smp.shading.data(0, best) == doctest::Approx(1.1).epsilon(1e-3));
  CHECK(smp.shading.data(0, best) <= 1.1f + 1e-6f);
}

TEST_CASE("renderer rejections") {
  SceneSpec spec = sample_scene_spec(1);
  CHECK_THROWS_AS(render_scene(spec, 40), ConfigError);
  spec.camera.look_at = spec.camera.position;
  CHECK_THROWS_AS(render_scene(spec, 32), ConfigError);
}

TEST_CASE("split arithmetic") {
  const auto s = split_sizes(250);
  CHECK(s.train == 200);
  CHECK(s.val == 25);
  CHECK(s.test == 25);
  CHECK_THROWS_AS(forge_dataset(9, 1, 32), ConfigError);
}

TEST_CASE("dataset files are deterministic and the manifest bounds are exact") {
  const fs::path a = temp_dir("a"), b = temp_dir("b");
  const auto manifest = generate_dataset(10, 77, 32, a);
  generate_dataset(10, 77, 32, b);
  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    names.push_back(rel.string());
    CHECK(slurp(e.path()) == slurp(b / rel));
  }
  CHECK(names.size() == 61);

  const auto loaded = load_dataset(a);
  double dmin = 1e30, dmax = -1e30;
  for (const auto& s : loaded.samples) {
    dmin = std::min(dmin, double(s.depth.data.minCoeff()));
    dmax = std::max(dmax, double(s.depth.data.maxCoeff()));
  }
  CHECK(std::abs(dmin - manifest.codec.depth_min) <= 1e-6);
  CHECK(std::abs(dmax - manifest.codec.depth_max) <= 1e-6);
  CHECK(loaded.manifest.to_json() == manifest.to_json());
  const auto j = slurp(a / "manifest.json");
  for (const char* key : {"version", "n_samples", "resolution", "seed", "splits", "depth_min", "depth_max", "shading_max"}) {
    CHECK(j.find(std::string("\"") + key + "\"") != std::string::npos);
  }
  CHECK(loaded.samples[3].rgb.data == forge_dataset(10, 77, 32).samples[3].rgb.data);
  fs::remove_all(a);
  fs::remove_all(b);
}
