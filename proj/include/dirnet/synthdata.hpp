// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dirnet/json_util.hpp"
#include "dirnet/posehead.hpp"
#include "dirnet/rng.hpp"

namespace dirnet {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

enum class Background { flat, gradient, noise };

inline const char* to_string(Background b) {
  switch (b) {
    case Background::flat: return "flat";
    case Background::gradient: return "gradient";
    case Background::noise: return "noise";
  }
  return "?";
}

inline Background background_from_string(const std::string& s) {
  if (s == "flat") return Background::flat;
  if (s == "gradient") return Background::gradient;
  if (s == "noise") return Background::noise;
  throw ConfigError("background: unknown mode '" + s + "' (flat, gradient, noise)");
}

inline constexpr double kDeg = std::numbers::pi / 180.0;

/// Generator settings. Angles in radians; camera translation and scale as
/// fractions of the image size.
struct GenConfig {
  int count = 2500;
  int image_size = 64;
  std::array<double, kNumTheta> theta_min{};
  std::array<double, kNumTheta> theta_max{};
  double beta_min = 0.9;
  double beta_max = 1.1;
  std::array<double, 3> euler_min{-30 * kDeg, -30 * kDeg, -std::numbers::pi};  // about x, y, z
  std::array<double, 3> euler_max{30 * kDeg, 30 * kDeg, std::numbers::pi};
  double t_min = 0.3;
  double t_max = 0.7;
  double s_min = 0.28;
  double s_max = 0.36;
  Background background = Background::gradient;
  double background_level = 0.2;
  double background_amplitude = 0.15;
  double noise_sigma = 0.02;
  double bone_thickness = 3.0;  // px
  double margin = 2.0;          // px kept clear at the image border
  std::uint64_t seed = 1;

  GenConfig() {
    for (int f = 0; f < 5; ++f) {
      theta_min[4 * f] = -15 * kDeg;
      theta_max[4 * f] = 15 * kDeg;
      for (int k = 1; k < 4; ++k) {
        theta_min[4 * f + k] = -60 * kDeg;
        theta_max[4 * f + k] = 60 * kDeg;
      }
    }
  }

  void validate() const {
    auto range = [](const char* name, double lo, double hi) {
      if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw ConfigError(std::string("gen.") + name + ": min must not exceed max");
    };
    if (count <= 0) throw ConfigError("gen.count must be positive");
    if (image_size <= 0 || image_size % 32 != 0) throw ConfigError("gen.image_size must be a positive multiple of 32");
    for (int i = 0; i < kNumTheta; ++i) range("theta", theta_min[i], theta_max[i]);
    range("beta", beta_min, beta_max);
    if (beta_min < kBetaMin || beta_max > kBetaMax) throw ConfigError("gen.beta range must lie in [0.5, 2]");
    for (int i = 0; i < 3; ++i) range("euler", euler_min[i], euler_max[i]);
    range("t", t_min, t_max);
    range("s", s_min, s_max);
    if (s_min <= 0) throw ConfigError("gen.s_min must be positive");
    if (noise_sigma < 0) throw ConfigError("gen.noise_sigma must be non-negative");
    if (!(bone_thickness > 0)) throw ConfigError("gen.bone_thickness must be positive");
    if (margin < 0 || 2 * margin >= image_size) throw ConfigError("gen.margin out of range");
    if (background_level - background_amplitude < 0 || background_level + background_amplitude > 1)
      throw ConfigError("gen.background level/amplitude must stay inside [0, 1]");
  }
};

inline void to_json(json& j, const GenConfig& c) {
  j = json{{"count", c.count},
           {"image_size", c.image_size},
           {"theta_min", c.theta_min},
           {"theta_max", c.theta_max},
           {"beta_min", c.beta_min},
           {"beta_max", c.beta_max},
           {"euler_min", c.euler_min},
           {"euler_max", c.euler_max},
           {"t_min", c.t_min},
           {"t_max", c.t_max},
           {"s_min", c.s_min},
           {"s_max", c.s_max},
           {"background", to_string(c.background)},
           {"background_level", c.background_level},
           {"background_amplitude", c.background_amplitude},
           {"noise_sigma", c.noise_sigma},
           {"bone_thickness", c.bone_thickness},
           {"margin", c.margin},
           {"seed", c.seed}};
}

inline void from_json(const json& j, GenConfig& c) {
  StrictReader r(j, "gen");
  r.read("count", c.count);
  r.read("image_size", c.image_size);
  r.read("theta_min", c.theta_min);
  r.read("theta_max", c.theta_max);
  r.read("beta_min", c.beta_min);
  r.read("beta_max", c.beta_max);
  r.read("euler_min", c.euler_min);
  r.read("euler_max", c.euler_max);
  r.read("t_min", c.t_min);
  r.read("t_max", c.t_max);
  r.read("s_min", c.s_min);
  r.read("s_max", c.s_max);
  std::string bg = to_string(c.background);
  r.read("background", bg);
  c.background = background_from_string(bg);
  r.read("background_level", c.background_level);
  r.read("background_amplitude", c.background_amplitude);
  r.read("noise_sigma", c.noise_sigma);
  r.read("bone_thickness", c.bone_thickness);
  r.read("margin", c.margin);
  r.read("seed", c.seed);
  r.finish();
}

/// One rendered example. Everything is stored at float precision; labels are
/// computed from the float-rounded parameters so they reproject exactly.
struct Sample {
  std::vector<float> image;  // 3 x H x H, CHW
  std::array<float, 2 * kNumJoints> j2d{};
  std::array<float, 3 * kNumJoints> j3d{};
  std::array<float, kPoseDim> pose{};  // PoseParams::to_vector layout
  std::uint64_t seed = 0;

  PoseParams params() const {
    std::array<double, kPoseDim> v;
    std::copy(pose.begin(), pose.end(), v.begin());
    return PoseParams::from_vector(v);
  }
};

namespace detail {

inline double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

inline PoseParams round_to_float(PoseParams p) {
  for (auto& v : p.theta) v = to_float(v);
  for (auto& v : p.beta) v = to_float(v);
  for (auto& v : p.rot) v = to_float(v);
  for (auto& v : p.t) v = to_float(v);
  p.s = to_float(p.s);
  return p;
}

}  // namespace detail

/// Ground-truth labels for a pose, at float precision.
struct PoseLabels {
  Joints3D j3d{};
  Joints2D j2d{};
};

inline PoseLabels pose_labels(const PoseParams& p) {
  PoseLabels out;
  out.j3d = forward_kinematics(p);
  for (auto& v : out.j3d) v = detail::to_float(v);
  out.j2d = project_weak_perspective(out.j3d, p.rotation(), p.t, p.s);
  for (auto& v : out.j2d) v = detail::to_float(v);
  return out;
}

inline bool inside_image(const Joints2D& j2d, int size, double margin) {
  for (double v : j2d)
    if (!(v >= margin && v <= size - 1 - margin)) return false;
  return true;
}

/// Draws a pose whose projected joints all land inside the image. Values are
/// rounded to float so the stored parameters reproduce the labels.
inline PoseParams sample_pose(Rng& rng, const GenConfig& cfg) {
  const double h = cfg.image_size;
  for (int attempt = 0; attempt < 100; ++attempt) {
    PoseParams p;
    for (int i = 0; i < kNumTheta; ++i) p.theta[i] = uniform(rng, cfg.theta_min[i], cfg.theta_max[i]);
    for (int i = 0; i < kNumBones; ++i) p.beta[i] = uniform(rng, cfg.beta_min, cfg.beta_max);
    std::array<double, 3> e;
    for (int i = 0; i < 3; ++i) e[i] = uniform(rng, cfg.euler_min[i], cfg.euler_max[i]);
    auto r = axis_rotation<double>({0, 0, 1}, e[2]) * axis_rotation<double>({0, 1, 0}, e[1]) *
             axis_rotation<double>({1, 0, 0}, e[0]);
    auto aa = axis_angle_from_rotation(r);
    p.rot = {aa.x, aa.y, aa.z};
    p.t = {uniform(rng, cfg.t_min * h, cfg.t_max * h), uniform(rng, cfg.t_min * h, cfg.t_max * h)};
    p.s = uniform(rng, cfg.s_min * h, cfg.s_max * h);
    p = detail::round_to_float(p);
    if (inside_image(pose_labels(p).j2d, cfg.image_size, cfg.margin)) return p;
  }
  throw std::runtime_error(
      "sample_pose: 100 consecutive poses left the image; widen the image margin or narrow the camera "
      "translation/scale ranges");
}

/// Colour of each finger (thumb..pinky) and of the palm bones.
inline constexpr std::array<std::array<double, 3>, 5> kFingerColors{{
    {1.00, 0.40, 0.40},
    {0.40, 1.00, 0.40},
    {0.45, 0.60, 1.00},
    {1.00, 0.90, 0.35},
    {0.90, 0.45, 1.00},
}};
inline constexpr std::array<double, 3> kWristColor{1.0, 1.0, 1.0};

/// Something drawn on the canvas: a capsule from a to b (a disk when a == b).
struct Primitive {
  double ax, ay, bx, by;
  double radius;
  double depth;  // camera-frame z; larger is farther
  std::array<double, 3> color;
  int order;     // tie-break so equal depths draw deterministically
};

/// Bone b is primitive b; joint j is primitive kNumBones + j.
inline std::vector<Primitive> scene_primitives(const PoseParams& p, const GenConfig& cfg) {
  const auto labels = pose_labels(p);
  const auto rot = p.rotation();
  std::array<double, kNumJoints> z{};
  for (int j = 0; j < kNumJoints; ++j) {
    Vec3<double> c = rot * Vec3<double>{labels.j3d[3 * j], labels.j3d[3 * j + 1], labels.j3d[3 * j + 2]};
    z[j] = c.z;
  }
  const auto& sk = hand_skeleton();
  const double r = 0.5 * cfg.bone_thickness;
  std::vector<Primitive> prims;
  for (int b = 0; b < kNumBones; ++b) {
    int j = b + 1, q = sk.parent[j];
    auto col = kFingerColors[static_cast<std::size_t>(b / 4)];
    double shade = 1.0 - 0.08 * (b % 4);
    for (auto& c : col) c *= shade;
    prims.push_back({labels.j2d[2 * q], labels.j2d[2 * q + 1], labels.j2d[2 * j], labels.j2d[2 * j + 1], r,
                     0.5 * (z[j] + z[q]), col, b});
  }
  for (int j = 0; j < kNumJoints; ++j) {
    std::array<double, 3> col = kWristColor;
    if (j > 0) {
      col = kFingerColors[static_cast<std::size_t>((j - 1) / 4)];
      for (auto& c : col) c = 0.5 * (c + 1.0);
    }
    prims.push_back({labels.j2d[2 * j], labels.j2d[2 * j + 1], labels.j2d[2 * j], labels.j2d[2 * j + 1],
                     r + 0.5, z[j], col, kNumBones + j});
  }
  // Farthest first so nearer primitives overwrite.
  std::sort(prims.begin(), prims.end(), [](const Primitive& a, const Primitive& b) {
    if (a.depth != b.depth) return a.depth > b.depth;
    return a.order < b.order;
  });
  return prims;
}

/// Distance from (px, py) to segment ab.
inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  double dx = bx - ax, dy = by - ay;
  double len2 = dx * dx + dy * dy;
  double u = len2 > 0 ? std::clamp(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0) : 0.0;
  double ex = px - (ax + u * dx), ey = py - (ay + u * dy);
  return std::sqrt(ex * ex + ey * ey);
}

/// Fills the background. Pixel centres sit at integer coordinates.
inline void paint_background(std::vector<double>& img, int h, const GenConfig& cfg, Rng& rng) {
  const std::size_t plane = static_cast<std::size_t>(h) * h;
  const double lvl = cfg.background_level, amp = cfg.background_amplitude;
  switch (cfg.background) {
    case Background::flat:
      std::fill(img.begin(), img.end(), lvl);
      break;
    case Background::gradient: {
      double ang = uniform(rng, 0, 2 * std::numbers::pi);
      double gx = std::cos(ang), gy = std::sin(ang);
      double half = 0.5 * (h - 1);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < h; ++x) {
          double u = ((x - half) * gx + (y - half) * gy) / (half * std::numbers::sqrt2);
          for (int c = 0; c < 3; ++c) img[c * plane + static_cast<std::size_t>(y) * h + x] = lvl + amp * u;
        }
      break;
    }
    case Background::noise:
      for (auto& v : img) v = uniform(rng, lvl - amp, lvl + amp);
      break;
  }
}

/**
 * Renders a pose: anti-aliased capsules along the projected bones and disks
 * at the joints over the background, painted far to near, then additive
 * Gaussian pixel noise clipped to [0, 1]. `seed` drives background and noise.
 */
inline std::vector<float> render(const PoseParams& p, const GenConfig& cfg, std::uint64_t seed) {
  const int h = cfg.image_size;
  const std::size_t plane = static_cast<std::size_t>(h) * h;
  std::vector<double> img(3 * plane);
  Rng rng(seed);
  paint_background(img, h, cfg, rng);
  for (const auto& pr : scene_primitives(p, cfg)) {
    int x0 = std::max(0, static_cast<int>(std::floor(std::min(pr.ax, pr.bx) - pr.radius - 1)));
    int x1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(pr.ax, pr.bx) + pr.radius + 1)));
    int y0 = std::max(0, static_cast<int>(std::floor(std::min(pr.ay, pr.by) - pr.radius - 1)));
    int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(pr.ay, pr.by) + pr.radius + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double d = segment_distance(x, y, pr.ax, pr.ay, pr.bx, pr.by);
        double a = std::clamp(pr.radius + 0.5 - d, 0.0, 1.0);
        if (a <= 0) continue;
        for (int c = 0; c < 3; ++c) {
          double& v = img[c * plane + static_cast<std::size_t>(y) * h + x];
          v = (1 - a) * v + a * pr.color[c];
        }
      }
  }
  std::vector<float> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = img[i];
    if (cfg.noise_sigma > 0) v += cfg.noise_sigma * normal(rng);
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

/// Sample `index` of the dataset defined by `cfg`, independent of any other.
inline Sample make_sample(const GenConfig& cfg, std::size_t index) {
  Sample s;
  s.seed = mix_seed(cfg.seed, index);
  Rng rng(s.seed);
  auto p = sample_pose(rng, cfg);
  auto labels = pose_labels(p);
  s.image = render(p, cfg, mix_seed(s.seed, 1));
  for (int i = 0; i < 2 * kNumJoints; ++i) s.j2d[i] = static_cast<float>(labels.j2d[i]);
  for (int i = 0; i < 3 * kNumJoints; ++i) s.j3d[i] = static_cast<float>(labels.j3d[i]);
  auto v = p.to_vector();
  for (int i = 0; i < kPoseDim; ++i) s.pose[i] = static_cast<float>(v[i]);
  return s;
}

/// Half-open index range.
struct IndexRange {
  std::size_t begin = 0, end = 0;
  std::size_t size() const { return end - begin; }
};

struct Split {
  IndexRange train, val, test;
};

/// 80/10/10 by index; val and test get floor(N/10) each.
inline Split default_split(std::size_t n) {
  std::size_t tenth = n / 10;
  std::size_t train = n - 2 * tenth;
  return {{0, train}, {train, train + tenth}, {train + tenth, n}};
}

struct Dataset {
  GenConfig config;
  Split split;
  json header;
  std::vector<Sample> samples;

  int image_size() const { return config.image_size; }
  std::size_t size() const { return samples.size(); }
};

inline constexpr char kDatasetMagic[4] = {'I', 'P', 'D', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::size_t sample_floats(int h) {
  return 3 * static_cast<std::size_t>(h) * h + 2 * kNumJoints + 3 * kNumJoints + kPoseDim;
}

/// All samples, optionally across `jobs` threads; the result does not depend on `jobs`.
inline std::vector<Sample> generate_samples(const GenConfig& cfg, int jobs = 1) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(cfg.count);
  std::vector<Sample> out(n);
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = make_sample(cfg, i);
    return out;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  std::vector<std::thread> pool;
  for (int k = 0; k < jobs; ++k)
    pool.emplace_back([&, k] {
      try {
        for (std::size_t i = static_cast<std::size_t>(k); i < n; i += static_cast<std::size_t>(jobs))
          out[i] = make_sample(cfg, i);
      } catch (...) {
        errors[static_cast<std::size_t>(k)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline json dataset_header(const GenConfig& cfg, const Split& sp) {
  auto range = [](const IndexRange& r) { return json::array({r.begin, r.end}); };
  return json{{"format", "IPD1"},
              {"config", cfg},
              {"count", cfg.count},
              {"image_size", cfg.image_size},
              {"split", {{"train", range(sp.train)}, {"val", range(sp.val)}, {"test", range(sp.test)}}},
              {"layout", {"image", "j2d", "j3d", "pose"}},
              {"floats_per_sample", sample_floats(cfg.image_size)}};
}

inline void write_dataset(const std::string& path, const GenConfig& cfg, const std::vector<Sample>& samples,
                          const json& extra = json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open dataset file for writing: " + path);
  json header = dataset_header(cfg, default_split(samples.size()));
  for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();
  os.write(kDatasetMagic, 4);
  std::uint32_t ver = kDatasetVersion;
  os.write(reinterpret_cast<const char*>(&ver), 4);
  os << header.dump() << '\n';
  auto put = [&](const float* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
  };
  for (const auto& s : samples) {
    put(s.image.data(), s.image.size());
    put(s.j2d.data(), s.j2d.size());
    put(s.j3d.data(), s.j3d.size());
    put(s.pose.data(), s.pose.size());
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline void generate_dataset(const GenConfig& cfg, const std::string& path, int jobs = 1,
                             const json& extra = json::object()) {
  write_dataset(path, cfg, generate_samples(cfg, jobs), extra);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset file: " + path);
  char magic[4];
  std::uint32_t ver = 0;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&ver), 4);
  if (!is || std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw std::runtime_error(path + ": not a dataset file (bad magic)");
  if (ver != kDatasetVersion) throw std::runtime_error(path + ": unsupported dataset version " + std::to_string(ver));
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": missing header");
  Dataset ds;
  try {
    ds.header = json::parse(line);
    ds.config = ds.header.at("config").get<GenConfig>();
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": malformed header: " + e.what());
  }
  const auto n = ds.header.at("count").get<std::size_t>();
  const int h = ds.config.image_size;
  auto rng = [&](const char* k) {
    auto a = ds.header.at("split").at(k);
    return IndexRange{a.at(0).get<std::size_t>(), a.at(1).get<std::size_t>()};
  };
  ds.split = {rng("train"), rng("val"), rng("test")};
  ds.samples.resize(n);
  auto get = [&](float* p, std::size_t k) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(k * sizeof(float)));
  };
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = ds.samples[i];
    s.image.resize(3 * static_cast<std::size_t>(h) * h);
    get(s.image.data(), s.image.size());
    get(s.j2d.data(), s.j2d.size());
    get(s.j3d.data(), s.j3d.size());
    get(s.pose.data(), s.pose.size());
    s.seed = mix_seed(ds.config.seed, i);
    if (!is) throw std::runtime_error(path + ": truncated at sample " + std::to_string(i));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing bytes after samples");
  return ds;
}

}  // namespace dirnet
