#include "posfeat/synth.hpp"

#include "posfeat/eval.hpp"
#include "posfeat/image_io.hpp"
#include "posfeat/rng.hpp"

#include <Eigen/Geometry>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace posfeat {

namespace {

constexpr double kPi = 3.14159265358979323846;

double smooth(double t) { return t * t * (3 - 2 * t); }

std::uint64_t lattice_key(std::int64_t v) { return static_cast<std::uint64_t>(v); }

}  // namespace

ProceduralTexture::ProceduralTexture(std::uint64_t seed, int width, int height, TextureConfig cfg)
    : seed_(seed), width_(width), height_(height), cfg_(cfg) {
  if (width <= 0 || height <= 0) throw InputError("texture: empty size");
  if (cfg_.octaves < 4) throw InputError("texture: at least 4 octaves required");
  if (cfg_.repetitive_band > 0) {
    // Whole columns, rounded up, so the pixel share never falls below the setting.
    const int span = static_cast<int>(std::ceil(std::min(cfg_.repetitive_band, 1.0) * width - 1e-9));
    const int lo = static_cast<int>(open_unit(hash_key(seed, 0xba4d)) * (width - span + 1));
    band_lo_ = std::min(lo, width - span);
    band_hi_ = band_lo_ + span;
  }
}

double ProceduralTexture::value_noise(double x, double y, std::uint64_t octave) const {
  const double period = cfg_.base_period / std::pow(2.0, static_cast<double>(octave));
  const double gx = x / period;
  const double gy = y / period;
  const double fx0 = std::floor(gx);
  const double fy0 = std::floor(gy);
  const auto ix = static_cast<std::int64_t>(fx0);
  const auto iy = static_cast<std::int64_t>(fy0);
  const double tx = smooth(gx - fx0);
  const double ty = smooth(gy - fy0);
  auto at = [&](std::int64_t i, std::int64_t j) {
    return open_unit(hash_key(seed_, octave + 1, lattice_key(i), lattice_key(j)));
  };
  const double top = at(ix, iy) * (1 - tx) + at(ix + 1, iy) * tx;
  const double bottom = at(ix, iy + 1) * (1 - tx) + at(ix + 1, iy + 1) * tx;
  return top * (1 - ty) + bottom * ty;
}

double ProceduralTexture::blobs(double x, double y) const {
  const double s = cfg_.blob_spacing;
  const auto ci = static_cast<std::int64_t>(std::floor(x / s));
  const auto cj = static_cast<std::int64_t>(std::floor(y / s));
  double acc = 0;
  for (std::int64_t j = cj - 1; j <= cj + 1; ++j) {
    for (std::int64_t i = ci - 1; i <= ci + 1; ++i) {
      CounterRng rng(hash_key(seed_, 0xb10b, lattice_key(i), lattice_key(j)), 0);
      if (rng.uniform() > cfg_.blob_probability) continue;
      const double bx = (static_cast<double>(i) + rng.uniform()) * s;
      const double by = (static_cast<double>(j) + rng.uniform()) * s;
      const double r = rng.uniform(1.2, 2.8);
      const double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.3, 0.6);
      const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
      acc += amp * std::exp(-d2 / (2 * r * r));
    }
  }
  return acc;
}

double ProceduralTexture::tile(double x, double y) const {
  const double t = cfg_.repetitive_period;
  const double lx = x - std::floor(x / t) * t;
  const double ly = y - std::floor(y / t) * t;
  // Value noise whose lattice wraps every tile.
  const double cell = t / 4;
  const double gx = lx / cell;
  const double gy = ly / cell;
  const auto ix = static_cast<std::int64_t>(std::floor(gx));
  const auto iy = static_cast<std::int64_t>(std::floor(gy));
  const double tx = smooth(gx - static_cast<double>(ix));
  const double ty = smooth(gy - static_cast<double>(iy));
  auto at = [&](std::int64_t i, std::int64_t j) {
    return open_unit(hash_key(seed_, 0x711e, lattice_key(i % 4), lattice_key(j % 4)));
  };
  const double n = (at(ix, iy) * (1 - tx) + at(ix + 1, iy) * tx) * (1 - ty) +
                   (at(ix, iy + 1) * (1 - tx) + at(ix + 1, iy + 1) * tx) * ty;
  const double dx = lx - t / 2;
  const double dy = ly - t / 2;
  const double dot = std::exp(-(dx * dx + dy * dy) / 8.0);
  return 0.6 * n + 0.4 * dot;
}

double ProceduralTexture::contrast(double x, double y) const {
  if (cfg_.low_contrast_fraction <= 0) return 1.0;
  const double period = 0.6 * std::max(width_, height_);
  const double gx = x / period;
  const double gy = y / period;
  const double fx0 = std::floor(gx);
  const double fy0 = std::floor(gy);
  const auto ix = static_cast<std::int64_t>(fx0);
  const auto iy = static_cast<std::int64_t>(fy0);
  const double tx = smooth(gx - fx0);
  const double ty = smooth(gy - fy0);
  auto at = [&](std::int64_t i, std::int64_t j) { return open_unit(hash_key(seed_, 0xc0c0, lattice_key(i), lattice_key(j))); };
  const double n = (at(ix, iy) * (1 - tx) + at(ix + 1, iy) * tx) * (1 - ty) +
                   (at(ix, iy + 1) * (1 - tx) + at(ix + 1, iy + 1) * tx) * ty;
  const double lo = cfg_.low_contrast_fraction;
  const double ramp = std::clamp((n - lo + 0.05) / 0.1, 0.0, 1.0);
  return 0.15 + 0.85 * smooth(ramp);
}

bool ProceduralTexture::in_repetitive_region(double x, double) const {
  return cfg_.repetitive_band > 0 && x >= band_lo_ && x < band_hi_;
}

float ProceduralTexture::operator()(double x, double y) const {
  double v;
  if (in_repetitive_region(x, y)) {
    v = 0.15 + 0.7 * tile(x, y);
  } else {
    double detail = 0;
    double norm = 0;
    for (int o = 0; o < cfg_.octaves; ++o) {
      const double amp = std::pow(cfg_.persistence, o);
      detail += amp * value_noise(x, y, static_cast<std::uint64_t>(o));
      norm += amp;
    }
    detail /= norm;
    v = 0.5 + contrast(x, y) * (1.8 * (detail - 0.5) + blobs(x, y));
  }
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

namespace {

template <typename Fn>
Image render(int width, int height, Fn&& field) {
  Image img(height, width);
  constexpr double offs[2] = {0.25, 0.75};
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double acc = 0;
      for (double oy : offs)
        for (double ox : offs) acc += field(c + ox, r + oy);
      img(r, c) = static_cast<float>(acc / 4);
    }
  }
  return img;
}

Image photometric(const Image& img, CounterRng& rng, const TextureConfig& cfg) {
  if (!cfg.photometric_jitter) return quantize8(img);
  const auto gain = static_cast<float>(1 + cfg.jitter * rng.uniform(-1, 1));
  const auto bias = static_cast<float>(cfg.jitter * rng.uniform(-1, 1));
  return quantize8(img * gain + bias);
}

Intrinsics<double> camera_for(int width, int height, const PoseRange& range) {
  const double f = range.focal_scale * width;
  return {f, f, width / 2.0, height / 2.0};
}

RelativePose<double> random_pose(CounterRng& rng, const PoseRange& range) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  const double angle = rng.uniform(-1, 1) * range.max_rotation_deg * kPi / 180;
  RelativePose<double> pose;
  pose.R = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  const double mag = rng.uniform(range.min_translation, range.max_translation);
  if (range.forward_motion) {
    pose.t = Vec3(0, 0, mag);
  } else {
    const double psi = rng.uniform(0, 2 * kPi);
    pose.t = Vec3(std::cos(psi), std::sin(psi), 0.3 * rng.uniform(-1, 1)).normalized() * mag;
  }
  return pose;
}

Vec2 project(const Intrinsics<double>& k, const Vec3& x) { return {k.fx * x(0) / x(2) + k.cx, k.fy * x(1) / x(2) + k.cy}; }

bool inside(const Vec2& p, int width, int height) {
  return p(0) >= 0 && p(0) <= width && p(1) >= 0 && p(1) <= height;
}

double pixel_fraction_in_band(const ProceduralTexture& tex, int width, int height) {
  long count = 0;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) count += tex.in_repetitive_region(c + 0.5, r + 0.5) ? 1 : 0;
  return static_cast<double>(count) / (static_cast<double>(width) * height);
}

}  // namespace

TextureImage texture(std::uint64_t seed, int width, int height, const TextureConfig& cfg) {
  const ProceduralTexture tex(seed, width, height, cfg);
  TextureImage out;
  out.image = render(width, height, [&](double x, double y) { return static_cast<double>(tex(x, y)); });
  out.repetitive_fraction = pixel_fraction_in_band(tex, width, height);
  return out;
}

double DepthSurface::operator()(double x, double y) const {
  double z = base;
  for (const auto& b : bumps) {
    const double dx = x - b(0);
    const double dy = y - b(1);
    z += b(3) * std::exp(-(dx * dx + dy * dy) / (2 * b(2) * b(2)));
  }
  return z;
}

namespace {

Vec2 general_forward(const SynthScene& s, const Vec2& x1, double* depth2 = nullptr) {
  const double z = (*s.depth)(x1(0), x1(1));
  const Vec3 ray = s.supervision.k1.inverse() * x1.homogeneous();
  const Vec3 x2 = s.supervision.pose.R * (z * ray) + s.supervision.pose.t;
  if (depth2) *depth2 = x2(2);
  return project(s.supervision.k2, x2);
}

// Newton solve of forward(x1) = x2 from a start induced by the base-depth plane.
std::optional<Vec2> general_inverse(const SynthScene& s, const Vec2& x2) {
  const auto& sup = s.supervision;
  const Mat3 h_base = sup.k2.matrix() *
                      (sup.pose.R + sup.pose.t * Vec3(0, 0, 1).transpose() / s.depth->base) * sup.k1.inverse();
  Vec2 x1 = (h_base.inverse() * x2.homogeneous()).hnormalized();
  for (int it = 0; it < 30; ++it) {
    const Vec2 r = general_forward(s, x1) - x2;
    if (r.norm() < 1e-11) return x1;
    constexpr double h = 1e-4;
    Eigen::Matrix2d j;
    j.col(0) = (general_forward(s, x1 + Vec2(h, 0)) - general_forward(s, x1 - Vec2(h, 0))) / (2 * h);
    j.col(1) = (general_forward(s, x1 + Vec2(0, h)) - general_forward(s, x1 - Vec2(0, h))) / (2 * h);
    if (std::abs(j.determinant()) < 1e-12) return std::nullopt;
    x1 -= j.inverse() * r;
    if (!x1.allFinite()) return std::nullopt;
  }
  if ((general_forward(s, x1) - x2).norm() < 1e-6) return x1;
  return std::nullopt;
}

}  // namespace

std::optional<Vec2> SynthScene::correspondence(const Vec2& x1) const {
  if (!inside(x1, width, height)) return std::nullopt;
  if (mode == SceneMode::Planar) {
    const Vec3 h = *homography * x1.homogeneous();
    if (!(h(2) > 0)) return std::nullopt;
    const Vec2 x2 = h.hnormalized();
    if (!inside(x2, width, height)) return std::nullopt;
    return x2;
  }
  double z2 = 0;
  const Vec2 x2 = general_forward(*this, x1, &z2);
  if (!(z2 > 0) || !inside(x2, width, height)) return std::nullopt;
  const auto back = general_inverse(*this, x2);
  if (!back || (*back - x1).norm() > 0.5) return std::nullopt;
  return x2;
}

std::vector<std::pair<Vec2, Vec2>> SynthScene::sample_correspondences(int n, std::uint64_t s) const {
  CounterRng rng(s, 0xc044);
  std::vector<std::pair<Vec2, Vec2>> out;
  for (int attempt = 0; attempt < 8 * n && static_cast<int>(out.size()) < n; ++attempt) {
    const Vec2 x1(rng.uniform(0, width), rng.uniform(0, height));
    if (auto x2 = correspondence(x1)) out.emplace_back(x1, *x2);
  }
  return out;
}

SynthScene make_planar_pair_from_pose(std::uint64_t seed, int width, int height, const RelativePose<double>& pose,
                                      const Vec3& plane_normal, double plane_distance, const TextureConfig& tex_cfg,
                                      const PoseRange& range) {
  if (width % 16 != 0 || height % 16 != 0 || width <= 0 || height <= 0)
    throw InputError("synth: image size must be a positive multiple of 16");
  pose.validate();
  SynthScene s;
  s.mode = SceneMode::Planar;
  s.seed = seed;
  s.width = width;
  s.height = height;
  s.supervision.k1 = camera_for(width, height, range);
  s.supervision.k2 = s.supervision.k1;
  s.supervision.pose = pose;
  const Vec3 n = plane_normal.normalized();
  s.homography = s.supervision.k2.matrix() * (pose.R + pose.t * n.transpose() / plane_distance) *
                 s.supervision.k1.inverse();
  *s.homography /= (*s.homography)(2, 2);
  const Mat3 h_inv = s.homography->inverse();

  const ProceduralTexture tex(seed, width, height, tex_cfg);
  const Image img1 = render(width, height, [&](double x, double y) { return static_cast<double>(tex(x, y)); });
  const Image img2 = render(width, height, [&](double x, double y) {
    const Vec2 p = (h_inv * Vec3(x, y, 1)).hnormalized();
    return static_cast<double>(tex(p(0), p(1)));
  });
  CounterRng rng(seed, 0x9407);
  s.image1 = photometric(img1, rng, tex_cfg);
  s.image2 = photometric(img2, rng, tex_cfg);
  s.repetitive_fraction = pixel_fraction_in_band(tex, width, height);
  return s;
}

SynthScene make_planar_pair(std::uint64_t seed, int width, int height, const TextureConfig& tex,
                            const PoseRange& range) {
  CounterRng rng(seed, 0x905e);
  const RelativePose<double> pose = random_pose(rng, range);
  const double tilt = rng.uniform(0, range.max_tilt_deg) * kPi / 180;
  const double phi = rng.uniform(0, 2 * kPi);
  const Vec3 normal(std::sin(tilt) * std::cos(phi), std::sin(tilt) * std::sin(phi), std::cos(tilt));
  return make_planar_pair_from_pose(seed, width, height, pose, normal, range.depth, tex, range);
}

SynthScene make_two_view_scene_from_pose(std::uint64_t seed, int width, int height, const RelativePose<double>& pose,
                                         const DepthSurface& surface, const TextureConfig& tex_cfg,
                                         const PoseRange& range) {
  if (width % 16 != 0 || height % 16 != 0 || width <= 0 || height <= 0)
    throw InputError("synth: image size must be a positive multiple of 16");
  pose.validate();
  SynthScene s;
  s.mode = SceneMode::General;
  s.seed = seed;
  s.width = width;
  s.height = height;
  s.supervision.k1 = camera_for(width, height, range);
  s.supervision.k2 = s.supervision.k1;
  s.supervision.pose = pose;
  s.depth = surface;

  const ProceduralTexture tex(seed, width, height, tex_cfg);
  const Image img1 = render(width, height, [&](double x, double y) { return static_cast<double>(tex(x, y)); });
  const Image img2 = render(width, height, [&](double x, double y) {
    const auto p = general_inverse(s, Vec2(x, y));
    return p ? static_cast<double>(tex((*p)(0), (*p)(1))) : 0.5;
  });
  CounterRng rng(seed, 0x9407);
  s.image1 = photometric(img1, rng, tex_cfg);
  s.image2 = photometric(img2, rng, tex_cfg);
  s.repetitive_fraction = pixel_fraction_in_band(tex, width, height);
  return s;
}

SynthScene make_two_view_scene(std::uint64_t seed, int width, int height, const TextureConfig& tex,
                               const PoseRange& range) {
  CounterRng rng(seed, 0x6e4e);
  const RelativePose<double> pose = random_pose(rng, range);
  DepthSurface surface;
  surface.base = 0.5 * (range.min_depth + range.max_depth);
  const double budget = 0.5 * (range.max_depth - range.min_depth) / 6;
  for (int k = 0; k < 6; ++k) {
    surface.bumps.emplace_back(rng.uniform(0, width), rng.uniform(0, height),
                               rng.uniform(width / 6.0, width / 3.0), rng.uniform(-1, 1) * budget);
  }
  return make_two_view_scene_from_pose(seed, width, height, pose, surface, tex, range);
}

// --- bundles ----------------------------------------------------------------

namespace fs = std::filesystem;

void write_scene_bundle(const std::string& dir, const SynthScene& scene) {
  fs::create_directories(dir);
  write_pgm((fs::path(dir) / "img1.pgm").string(), scene.image1);
  write_pgm((fs::path(dir) / "img2.pgm").string(), scene.image2);
  write_pose_json((fs::path(dir) / "pose.json").string(), scene.supervision);
  if (scene.homography) write_homography((fs::path(dir) / "H.txt").string(), *scene.homography);
  nlohmann::ordered_json meta;
  meta["seed"] = scene.seed;
  meta["mode"] = scene.mode == SceneMode::Planar ? "planar" : "general";
  meta["width"] = scene.width;
  meta["height"] = scene.height;
  meta["repetitive_fraction"] = scene.repetitive_fraction;
  std::ofstream out(fs::path(dir) / "meta.json");
  if (!out) throw FormatError("cannot write meta.json in " + dir);
  out << meta.dump(2) << "\n";
}

SceneBundle read_scene_bundle(const std::string& dir) {
  SceneBundle b;
  b.name = fs::path(dir).filename().string();
  b.image1 = read_image((fs::path(dir) / "img1.pgm").string());
  b.image2 = read_image((fs::path(dir) / "img2.pgm").string());
  b.supervision = read_pose_json((fs::path(dir) / "pose.json").string());
  const fs::path h = fs::path(dir) / "H.txt";
  if (fs::exists(h)) b.homography = read_homography(h.string()).matrix();
  return b;
}

SceneBundle to_bundle(const SynthScene& scene, std::string name) {
  SceneBundle b;
  b.name = std::move(name);
  b.image1 = scene.image1;
  b.image2 = scene.image2;
  b.supervision = scene.supervision;
  b.homography = scene.homography;
  return b;
}

std::vector<SceneBundle> read_scene_directory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "img1.pgm")) names.push_back(e.path().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw FormatError("no scene bundles in " + dir);
  std::vector<SceneBundle> out;
  for (const auto& n : names) out.push_back(read_scene_bundle(n));
  return out;
}

}  // namespace posfeat
