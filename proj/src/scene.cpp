// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ilora {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kHitEps = 1e-9;

struct CameraFrame {
  Eigen::Vector3d forward, right, up;
  double focal;  // image plane distance for a unit-wide image
};

CameraFrame camera_frame(const Camera& cam) {
  const Eigen::Vector3d delta = cam.look_at - cam.position;
  if (delta.norm() < 1e-12) throw ConfigError("degenerate camera: position == look_at");
  CameraFrame f;
  f.forward = delta.normalized();
  const Eigen::Vector3d world_up(0, 1, 0);
  const Eigen::Vector3d r = f.forward.cross(world_up);
  if (r.norm() < 1e-9) throw ConfigError("degenerate camera: view direction parallel to world up");
  f.right = r.normalized();
  f.up = f.right.cross(f.forward);
  f.focal = 0.5 / std::tan(0.5 * cam.fov_deg * kDegToRad);
  return f;
}

Eigen::Vector3d ray_through(const CameraFrame& f, double ndc_x, double ndc_y) {
  return (f.forward * f.focal + f.right * ndc_x - f.up * ndc_y).normalized();
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitY();
  Eigen::Vector3d albedo = Eigen::Vector3d::Zero();
};

void hit_sphere(const SceneObject& obj, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit& best) {
  const Eigen::Vector3d oc = o - obj.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - obj.size * obj.size;
  const double disc = b * b - c;
  if (disc < 0) return;
  const double t = -b - std::sqrt(disc);
  if (t > kHitEps && t < best.t) {
    best.t = t;
    best.normal = (o + t * d - obj.center).normalized();
    best.albedo = obj.albedo;
  }
}

void hit_box(const SceneObject& obj, const Eigen::Vector3d& o, const Eigen::Vector3d& d, Hit& best) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 0;
  for (int a = 0; a < 3; ++a) {
    const double lo = obj.center[a] - obj.size;
    const double hi = obj.center[a] + obj.size;
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo || o[a] > hi) return;
      continue;
    }
    double t0 = (lo - o[a]) / d[a];
    double t1 = (hi - o[a]) / d[a];
    double s = -1;  // entering through the low face
    if (t0 > t1) {
      std::swap(t0, t1);
      s = 1;
    }
    if (t0 > t_near) {
      t_near = t0;
      axis = a;
      sign = s;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return;
  }
  if (axis < 0 || t_near <= kHitEps || t_near >= best.t) return;
  best.t = t_near;
  best.normal = Eigen::Vector3d::Zero();
  best.normal[axis] = sign;
  best.albedo = obj.albedo;
}

}  // namespace

bool SceneSpec::operator==(const SceneSpec& o) const {
  if (objects.size() != o.objects.size()) return false;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& a = objects[i];
    const auto& b = o.objects[i];
    if (a.shape != b.shape || a.center != b.center || a.size != b.size || a.albedo != b.albedo) return false;
  }
  return ground_albedo == o.ground_albedo && light_dir == o.light_dir && ambient == o.ambient &&
         light_intensity == o.light_intensity && camera.position == o.camera.position &&
         camera.look_at == o.camera.look_at && camera.fov_deg == o.camera.fov_deg;
}

const std::array<Eigen::Vector3d, kPaletteSize>& albedo_palette() {
  static const std::array<Eigen::Vector3d, kPaletteSize> palette = {
      Eigen::Vector3d(0.85, 0.20, 0.20), Eigen::Vector3d(0.20, 0.70, 0.25), Eigen::Vector3d(0.20, 0.35, 0.85),
      Eigen::Vector3d(0.90, 0.80, 0.25), Eigen::Vector3d(0.75, 0.30, 0.80), Eigen::Vector3d(0.25, 0.80, 0.80),
      Eigen::Vector3d(0.90, 0.55, 0.15), Eigen::Vector3d(0.60, 0.60, 0.60), Eigen::Vector3d(0.45, 0.30, 0.15),
      Eigen::Vector3d(0.95, 0.95, 0.90)};
  return palette;
}

void validate(const SceneSpec& spec) {
  if (spec.objects.empty() || spec.objects.size() > 6) throw ConfigError("scene: object count must be in [1, 6]");
  if (std::abs(spec.light_dir.norm() - 1.0) > 1e-6) throw ConfigError("scene: light_dir must be unit length");
  if (spec.ambient < 0 || spec.ambient > 0.5) throw ConfigError("scene: ambient must be in [0, 0.5]");
  if (!(spec.light_intensity > 0)) throw ConfigError("scene: light_intensity must be > 0");
  if (!(spec.camera.fov_deg > 20 && spec.camera.fov_deg < 90)) throw ConfigError("scene: fov must be in (20, 90)");
  const auto in_unit = [](const Eigen::Vector3d& c) { return (c.array() >= 0).all() && (c.array() <= 1).all(); };
  if (!in_unit(spec.ground_albedo)) throw ConfigError("scene: ground albedo outside [0,1]");
  const CameraFrame f = camera_frame(spec.camera);
  for (const auto& obj : spec.objects) {
    if (!(obj.size > 0)) throw ConfigError("scene: object size must be > 0");
    if (!in_unit(obj.albedo)) throw ConfigError("scene: object albedo outside [0,1]");
    if ((obj.center - spec.camera.position).dot(f.forward) <= 0) {
      throw ConfigError("scene: object behind the camera");
    }
  }
}

SceneSpec sample_scene_spec(std::uint64_t seed, Difficulty difficulty) {
  Rng rng(seed);
  const auto& palette = albedo_palette();
  SceneSpec spec;

  const double height = rng.uniform(1.8, 2.2);
  const double fov = rng.uniform(45.0, 60.0);
  // Highest ray stays 8-16 degrees below the horizon, so every pixel sees ground.
  const double pitch = (rng.uniform(8.0, 16.0) + 0.5 * fov) * kDegToRad;
  const Eigen::Vector3d forward(0, -std::sin(pitch), -std::cos(pitch));
  spec.camera.position = Eigen::Vector3d(0, height, 0);
  spec.camera.look_at = spec.camera.position + forward * (height / std::sin(pitch));
  spec.camera.fov_deg = fov;
  const CameraFrame frame = camera_frame(spec.camera);

  const int count = difficulty == Difficulty::easy ? rng.uniform_int(1, 2) : rng.uniform_int(2, 6);
  while (static_cast<int>(spec.objects.size()) < count) {
    SceneObject obj;
    obj.shape = rng.bernoulli(0.5) ? ShapeKind::sphere : ShapeKind::box;
    obj.size = rng.uniform(0.25, 0.55);
    obj.albedo = palette[static_cast<std::size_t>(rng.uniform_int(0, kPaletteSize - 1))];
    const Eigen::Vector3d dir = ray_through(frame, rng.uniform(-0.35, 0.35), rng.uniform(0.0, 0.4));
    const Eigen::Vector3d ground = spec.camera.position + dir * (height / -dir.y());
    obj.center = ground + Eigen::Vector3d(0, obj.size, 0);
    const Eigen::Vector3d rel = obj.center - spec.camera.position;
    if (rel.dot(frame.forward) <= obj.size + 0.05 || rel.norm() <= 1.8 * obj.size + 0.2) continue;
    spec.objects.push_back(obj);
  }
  spec.ground_albedo = palette[static_cast<std::size_t>(rng.uniform_int(0, kPaletteSize - 1))];

  Eigen::Vector3d l(rng.normal(), rng.normal(), rng.normal());
  l.normalize();
  l.y() = std::abs(l.y());
  spec.light_dir = l;
  spec.ambient = rng.uniform(kAmbientRange[0], kAmbientRange[1]);
  spec.light_intensity = rng.uniform(kIntensityRange[0], kIntensityRange[1]);
  return spec;
}

Eigen::Vector3d pixel_ray(const Camera& camera, int resolution, int x, int y) {
  const CameraFrame f = camera_frame(camera);
  return ray_through(f, (x + 0.5) / resolution - 0.5, (y + 0.5) / resolution - 0.5);
}

const IntrinsicMap& SceneSample::intrinsic(IntrinsicKind kind) const {
  switch (kind) {
    case IntrinsicKind::normal: return normal;
    case IntrinsicKind::depth: return depth;
    case IntrinsicKind::albedo: return albedo;
    case IntrinsicKind::shading: return shading;
  }
  throw ConfigError("unknown intrinsic kind");
}

SceneSample render_scene(const SceneSpec& spec, int resolution, std::uint64_t seed) {
  if (std::find(std::begin(kResolutions), std::end(kResolutions), resolution) == std::end(kResolutions)) {
    throw ConfigError("render_scene: unsupported resolution " + std::to_string(resolution));
  }
  const CameraFrame frame = camera_frame(spec.camera);
  const int n = resolution * resolution;

  SceneSample s;
  s.spec = spec;
  s.seed = seed;
  const auto init = [&](IntrinsicMap& m, IntrinsicKind kind) {
    m.kind = kind;
    m.height = m.width = resolution;
    m.data.resize(channel_count(kind), n);
    m.mask = Mask::Constant(n, true);
  };
  init(s.normal, IntrinsicKind::normal);
  init(s.depth, IntrinsicKind::depth);
  init(s.albedo, IntrinsicKind::albedo);
  init(s.shading, IntrinsicKind::shading);
  s.rgb.height = s.rgb.width = resolution;
  s.rgb.data.resize(3, n);

  const Eigen::Vector3d& o = spec.camera.position;
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const int p = y * resolution + x;
      const Eigen::Vector3d d = ray_through(frame, (x + 0.5) / resolution - 0.5, (y + 0.5) / resolution - 0.5);
      Hit hit;
      if (d.y() < 0) {
        const double t = -o.y() / d.y();
        if (t > kHitEps) {
          hit.t = t;
          hit.normal = Eigen::Vector3d::UnitY();
          hit.albedo = spec.ground_albedo;
        }
      }
      for (const auto& obj : spec.objects) {
        if (obj.shape == ShapeKind::sphere) {
          hit_sphere(obj, o, d, hit);
        } else {
          hit_box(obj, o, d, hit);
        }
      }
      if (!std::isfinite(hit.t)) {
        s.normal.data.col(p) << 0, 0, 1;
        s.depth.data(0, p) = 1;
        s.albedo.data.col(p).setZero();
        s.shading.data(0, p) = static_cast<float>(spec.ambient);
        s.rgb.data.col(p).setConstant(-1);
        for (auto* m : {&s.normal, &s.depth, &s.albedo, &s.shading}) m->mask(p) = false;
        continue;
      }
      const Eigen::Vector3d& nw = hit.normal;
      const double shade = spec.ambient + spec.light_intensity * std::max(0.0, nw.dot(spec.light_dir));
      const Eigen::Vector3d ncam(nw.dot(frame.right), nw.dot(frame.up), -nw.dot(frame.forward));
      s.normal.data.col(p) = ncam.normalized().cast<float>();
      s.depth.data(0, p) = static_cast<float>(hit.t);
      s.albedo.data.col(p) = hit.albedo.cast<float>();
      s.shading.data(0, p) = static_cast<float>(shade);
      // rgb is formed from the stored float intrinsics so the rendering equation
      // holds exactly on what is written out.
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(double(s.albedo.data(c, p)) * double(s.shading.data(0, p)), 0.0, 1.0);
        s.rgb.data(c, p) = static_cast<float>(2.0 * v - 1.0);
      }
    }
  }
  return s;
}

SplitSizes split_sizes(int n) {
  SplitSizes s;
  s.train = n * 8 / 10;
  s.val = n / 10;
  s.test = n - s.train - s.val;
  return s;
}

std::string DatasetManifest::to_json() const {
  nlohmann::json j;
  j["version"] = version;
  j["n_samples"] = n_samples;
  j["resolution"] = resolution;
  j["seed"] = seed;
  j["splits"] = {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}};
  j["depth_min"] = codec.depth_min;
  j["depth_max"] = codec.depth_max;
  j["shading_max"] = codec.shading_max;
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    m.n_samples = j.at("n_samples").get<int>();
    m.resolution = j.at("resolution").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.splits.train = j.at("splits").at("train").get<int>();
    m.splits.val = j.at("splits").at("val").get<int>();
    m.splits.test = j.at("splits").at("test").get<int>();
    m.codec.depth_min = j.at("depth_min").get<double>();
    m.codec.depth_max = j.at("depth_max").get<double>();
    m.codec.shading_max = j.at("shading_max").get<double>();
    if (m.splits.train + m.splits.val + m.splits.test != m.n_samples) {
      throw FormatError("manifest: split sizes do not sum to n_samples");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

std::vector<int> Dataset::split_indices(std::string_view split) const {
  int begin = 0, count = 0;
  if (split == "train") {
    begin = train_begin();
    count = manifest.splits.train;
  } else if (split == "val") {
    begin = val_begin();
    count = manifest.splits.val;
  } else if (split == "test") {
    begin = test_begin();
    count = manifest.splits.test;
  } else {
    throw ConfigError("unknown split: " + std::string(split));
  }
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = begin + i;
  return idx;
}

Digest Dataset::manifest_hash() const { return sha256(manifest.to_json()); }

Dataset forge_dataset(int n, std::uint64_t seed, int resolution, Difficulty difficulty) {
  if (n < 10) throw ConfigError("dataset needs at least 10 samples");
  Dataset ds;
  ds.samples.reserve(static_cast<std::size_t>(n));
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = -dmin;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
    ds.samples.push_back(render_scene(sample_scene_spec(s, difficulty), resolution, s));
    const auto& depth = ds.samples.back().depth;
    for (int p = 0; p < depth.pixels(); ++p) {
      if (!depth.mask(p)) continue;
      dmin = std::min(dmin, double(depth.data(0, p)));
      dmax = std::max(dmax, double(depth.data(0, p)));
    }
  }
  ds.manifest.n_samples = n;
  ds.manifest.resolution = resolution;
  ds.manifest.seed = seed;
  ds.manifest.splits = split_sizes(n);
  ds.manifest.codec = CodecParams{dmin, dmax, kShadingMax};
  return ds;
}

namespace {
std::filesystem::path sample_path(const std::filesystem::path& dir, int i, std::string_view what) {
  char name[64];
  std::snprintf(name, sizeof(name), "%06d.%.*s.ntf", i, static_cast<int>(what.size()), what.data());
  return dir / "samples" / name;
}
}  // namespace

DatasetManifest write_dataset(const Dataset& ds, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "samples", ec);
  if (ec) throw FormatError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
  for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    save_ntf(sample_path(out_dir, i, "rgb"), to_ntf(s.rgb));
    save_ntf(sample_path(out_dir, i, "normal"), to_ntf(s.normal));
    save_ntf(sample_path(out_dir, i, "depth"), to_ntf(s.depth));
    save_ntf(sample_path(out_dir, i, "albedo"), to_ntf(s.albedo));
    save_ntf(sample_path(out_dir, i, "shading"), to_ntf(s.shading));
    save_ntf(sample_path(out_dir, i, "mask"), mask_to_ntf(s.normal.mask, s.rgb.height, s.rgb.width));
  }
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  out << ds.manifest.to_json();
  if (!out) throw FormatError("cannot write manifest in " + out_dir.string());
  return ds.manifest;
}

DatasetManifest generate_dataset(int n, std::uint64_t seed, int resolution, const std::filesystem::path& out_dir) {
  return write_dataset(forge_dataset(n, seed, resolution), out_dir);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw FormatError("no manifest.json in " + dir.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Dataset ds;
  ds.manifest = DatasetManifest::from_json(buf.str());
  ds.samples.reserve(static_cast<std::size_t>(ds.manifest.n_samples));
  for (int i = 0; i < ds.manifest.n_samples; ++i) {
    SceneSample s;
    s.seed = mix_seed(ds.manifest.seed, static_cast<std::uint64_t>(i));
    s.spec = sample_scene_spec(s.seed);
    const Mask mask = mask_from_ntf(load_ntf(sample_path(dir, i, "mask")));
    s.rgb = image_from_ntf(load_ntf(sample_path(dir, i, "rgb")));
    s.normal = map_from_ntf(IntrinsicKind::normal, load_ntf(sample_path(dir, i, "normal")), mask);
    s.depth = map_from_ntf(IntrinsicKind::depth, load_ntf(sample_path(dir, i, "depth")), mask);
    s.albedo = map_from_ntf(IntrinsicKind::albedo, load_ntf(sample_path(dir, i, "albedo")), mask);
    s.shading = map_from_ntf(IntrinsicKind::shading, load_ntf(sample_path(dir, i, "shading")), mask);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace ilora
