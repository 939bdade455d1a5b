#pragma once

// Deterministic synthetic two-view scenes with exact ground truth.

#include "posfeat/common.hpp"
#include "posfeat/geometry.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace posfeat {

struct TextureConfig {
  int octaves = 5;
  double base_period = 32.0;  // pixels, coarsest octave
  double persistence = 0.7;   // amplitude ratio between successive octaves
  double blob_spacing = 10.0;
  double blob_probability = 0.6;
  // Vertical band of periodic tiles (fraction of the width, rounded up to
  // whole columns), 0 disables.
  double repetitive_band = 0.1;
  double repetitive_period = 16.0;
  // Fraction of the area rendered at low contrast.
  double low_contrast_fraction = 0.0;
  bool photometric_jitter = true;
  double jitter = 0.1;  // relative gain/bias amplitude
};

/// Continuous procedural intensity field: value-noise octaves, sparse
/// high-contrast blobs, a periodic band and low-contrast patches. Coordinates
/// are image-1 pixels, so image 1 is the field sampled on its pixel grid.
class ProceduralTexture {
 public:
  ProceduralTexture(std::uint64_t seed, int width, int height, TextureConfig cfg = {});

  float operator()(double x, double y) const;
  bool in_repetitive_region(double x, double y) const;
  const TextureConfig& config() const { return cfg_; }

 private:
  double value_noise(double x, double y, std::uint64_t octave) const;
  double blobs(double x, double y) const;
  double tile(double x, double y) const;
  double contrast(double x, double y) const;

  std::uint64_t seed_;
  int width_, height_;
  TextureConfig cfg_;
  double band_lo_ = 0, band_hi_ = 0;
};

struct TextureImage {
  Image image;
  double repetitive_fraction = 0;  // share of pixels inside the periodic band
};

/// Field sampled at pixel centers (2x2 supersampled), values in [0,1].
TextureImage texture(std::uint64_t seed, int width, int height, const TextureConfig& cfg = {});

struct PoseRange {
  double max_rotation_deg = 4.0;
  double min_translation = 0.3;
  double max_translation = 0.6;
  double max_tilt_deg = 15.0;  // planar mode: plane normal tilt
  double depth = 5.0;          // planar mode: plane distance
  double min_depth = 4.0;      // general mode
  double max_depth = 7.0;
  double focal_scale = 1.0;    // focal length = focal_scale * width
  bool forward_motion = false;
};

enum class SceneMode { Planar, General };

/// Smooth positive depth field over image-1 pixels (general mode).
struct DepthSurface {
  double base = 5.0;
  std::vector<Eigen::Vector4d> bumps;  // (cx, cy, sigma, amplitude) in pixels / depth units

  double operator()(double x, double y) const;
};

struct SynthScene {
  SceneMode mode = SceneMode::Planar;
  std::uint64_t seed = 0;
  int width = 0, height = 0;
  Image image1, image2;
  PoseSupervision supervision;
  std::optional<Mat3> homography;  // planar mode, image 1 -> image 2
  std::optional<DepthSurface> depth;
  double repetitive_fraction = 0;

  /// Exact correspondence of an image-1 point; absent when it leaves image 2
  /// or is occluded.
  std::optional<Vec2> correspondence(const Vec2& x1) const;

  /// Up to n visible correspondences at seeded random image-1 positions.
  std::vector<std::pair<Vec2, Vec2>> sample_correspondences(int n, std::uint64_t seed) const;
};

SynthScene make_planar_pair(std::uint64_t seed, int width, int height, const TextureConfig& tex = {},
                            const PoseRange& range = {});

SynthScene make_two_view_scene(std::uint64_t seed, int width, int height, const TextureConfig& tex = {},
                               const PoseRange& range = {});

/// Planar scene from an explicit pose, used for controlled experiments.
SynthScene make_planar_pair_from_pose(std::uint64_t seed, int width, int height, const RelativePose<double>& pose,
                                      const Vec3& plane_normal, double plane_distance, const TextureConfig& tex = {},
                                      const PoseRange& range = {});

SynthScene make_two_view_scene_from_pose(std::uint64_t seed, int width, int height, const RelativePose<double>& pose,
                                         const DepthSurface& surface, const TextureConfig& tex = {},
                                         const PoseRange& range = {});

/// Scene bundle: img1.pgm, img2.pgm, pose.json, H.txt (planar), meta.json.
void write_scene_bundle(const std::string& dir, const SynthScene& scene);

/// Training view of a bundle: images, pose, and homography when present.
struct SceneBundle {
  std::string name;
  Image image1, image2;
  PoseSupervision supervision;
  std::optional<Mat3> homography;
};

SceneBundle read_scene_bundle(const std::string& dir);
SceneBundle to_bundle(const SynthScene& scene, std::string name = {});

/// All bundle subdirectories of `dir`, sorted by name.
std::vector<SceneBundle> read_scene_directory(const std::string& dir);

}  // namespace posfeat
