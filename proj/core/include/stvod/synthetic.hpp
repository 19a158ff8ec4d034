#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stvod/boxes.hpp"
#include "stvod/config.hpp"
#include "stvod/tensor.hpp"

namespace stvod {

enum class ShapeClass : std::size_t { circle = 0, square = 1, triangle = 2, cross = 3 };
inline constexpr std::size_t kShapeClasses = 4;
std::string shape_name(ShapeClass s);

enum class Degradation { none, motion_blur, occlusion, defocus };
std::string degradation_name(Degradation d);
/// Throws std::invalid_argument on an unknown name.
Degradation parse_degradation(const std::string& name);

/// A moving shape. Positions are pixel coordinates of the shape center;
/// `radius` is half the nominal extent.
struct SceneObject {
  ShapeClass shape = ShapeClass::circle;
  double radius = 5.0;
  std::array<double, 3> color{1.0, 1.0, 1.0};
  double x0 = 0, y0 = 0;    // position at t = 0
  double vx = 0, vy = 0;    // pixels per frame
  double wobble = 0;        // sinusoidal amplitude across the direction of motion
  double wobble_period = 8;
  double wobble_phase = 0;

  std::array<double, 2> position(double t) const;
  std::array<double, 2> velocity(double t) const;
  /// True when the pixel centered at (px + 0.5, py + 0.5) is covered at time t.
  bool covers(double px, double py, double t) const;
};

struct Clip {
  std::vector<Tensor> frames;  // [3, H, W], values k/255
  std::vector<std::vector<GroundTruthBox>> annotations;
  std::vector<Degradation> degradations;
  std::size_t current_index = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const Clip&, const Clip&) = default;
};

/// Bounding box (normalized) of a boolean pixel mask; throws when empty.
BoxCS mask_box(const std::vector<char>& mask, std::size_t height, std::size_t width);

/// Renders `objects` at time t over a flat background, returning the frame
/// and the per-object coverage masks (before any other object is drawn on top).
Tensor render_frame(const std::vector<SceneObject>& objects, const std::array<double, 3>& background,
                    std::size_t size, double t, std::vector<std::vector<char>>* masks = nullptr);

/// Deterministic clip for (config, seed). `degradation_prob` is the chance
/// that the current frame is degraded; reference frames stay clean.
Clip generate_clip(const DataConfig& config, std::uint64_t seed, double degradation_prob);

/// Samples the scene objects of a clip; exposed for tests.
std::vector<SceneObject> sample_objects(const DataConfig& config, std::mt19937_64& rng);

struct DegradationParams {
  double blur_length = 9.0;
  std::array<double, 2> direction{1.0, 0.0};  // motion blur direction
  double defocus_radius = 3.0;
  BoxCS target{0.5, 0.5, 0.2, 0.2};  // occlusion target box
  double occlusion_fraction = 0.6;    // of the target box area, at most 0.6
};

/// Box blur along a direction, bilinear taps with edge clamping.
Tensor motion_blur(const Tensor& frame, double length, std::array<double, 2> direction);
/// Disk-kernel blur with wrap-around borders; preserves the channel means.
Tensor defocus(const Tensor& frame, double radius);
/// Pixel rectangle [x0, x1) x [y0, y1) chosen inside the target box.
struct PixelRect {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::size_t area() const { return (x1 - x0) * (y1 - y0); }
};
PixelRect occlusion_rect(const BoxCS& target, std::size_t height, std::size_t width,
                         double fraction, std::mt19937_64& rng);

Tensor apply_degradation(const Tensor& frame, Degradation kind, const DegradationParams& params,
                         std::uint64_t seed);

/// Rounds every value to the nearest k/255 in [0,1].
Tensor quantize(const Tensor& frame);

}  // namespace stvod
