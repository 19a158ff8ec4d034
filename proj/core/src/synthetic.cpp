#include "stvod/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "stvod/parameters.hpp"

namespace stvod {
namespace {

double uniform_between(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit_uniform(rng);
}

std::size_t index_below(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(n)));
}

std::vector<Degradation> enabled_kinds(const std::string& list) {
  std::vector<Degradation> kinds;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (item.empty()) continue;
    const Degradation d = parse_degradation(item);
    if (d == Degradation::none) throw std::invalid_argument("'none' is not a degradation kind");
    kinds.push_back(d);
  }
  return kinds;
}

double clamp_read(const Tensor& f, std::size_t c, long y, long x) {
  const long h = static_cast<long>(f.dim(1)), w = static_cast<long>(f.dim(2));
  y = std::clamp(y, 0L, h - 1);
  x = std::clamp(x, 0L, w - 1);
  return f[(c * f.dim(1) + static_cast<std::size_t>(y)) * f.dim(2) + static_cast<std::size_t>(x)];
}

double bilinear_clamped(const Tensor& f, std::size_t c, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double top = clamp_read(f, c, y0, x0) +
                     (clamp_read(f, c, y0, x0 + 1) - clamp_read(f, c, y0, x0)) * tx;
  const double bottom = clamp_read(f, c, y0 + 1, x0) +
                        (clamp_read(f, c, y0 + 1, x0 + 1) - clamp_read(f, c, y0 + 1, x0)) * tx;
  return top + (bottom - top) * ty;
}

}  // namespace

std::string shape_name(ShapeClass s) {
  switch (s) {
    case ShapeClass::circle: return "circle";
    case ShapeClass::square: return "square";
    case ShapeClass::triangle: return "triangle";
    case ShapeClass::cross: return "cross";
  }
  return "unknown";
}

std::string degradation_name(Degradation d) {
  switch (d) {
    case Degradation::none: return "none";
    case Degradation::motion_blur: return "motion_blur";
    case Degradation::occlusion: return "occlusion";
    case Degradation::defocus: return "defocus";
  }
  return "unknown";
}

Degradation parse_degradation(const std::string& name) {
  if (name == "none") return Degradation::none;
  if (name == "motion_blur") return Degradation::motion_blur;
  if (name == "occlusion") return Degradation::occlusion;
  if (name == "defocus") return Degradation::defocus;
  throw std::invalid_argument("unknown degradation kind '" + name + "'");
}

std::array<double, 2> SceneObject::position(double t) const {
  const double speed = std::hypot(vx, vy);
  // Sideways unit vector; objects at rest wobble vertically.
  const double nx = speed > 0 ? -vy / speed : 0.0;
  const double ny = speed > 0 ? vx / speed : 1.0;
  const double side = wobble * std::sin(2 * std::numbers::pi * t / wobble_period + wobble_phase);
  return {x0 + vx * t + nx * side, y0 + vy * t + ny * side};
}

std::array<double, 2> SceneObject::velocity(double t) const {
  const double speed = std::hypot(vx, vy);
  const double nx = speed > 0 ? -vy / speed : 0.0;
  const double ny = speed > 0 ? vx / speed : 1.0;
  const double w = 2 * std::numbers::pi / wobble_period;
  const double dside = wobble * w * std::cos(w * t + wobble_phase);
  return {vx + nx * dside, vy + ny * dside};
}

bool SceneObject::covers(double px, double py, double t) const {
  const auto c = position(t);
  const double dx = px + 0.5 - c[0], dy = py + 0.5 - c[1];
  const double r = radius;
  switch (shape) {
    case ShapeClass::circle: return dx * dx + dy * dy <= r * r;
    case ShapeClass::square: return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeClass::triangle: return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2;
    case ShapeClass::cross: {
      const double arm = r / 3;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
  }
  return false;
}

BoxCS mask_box(const std::vector<char>& mask, std::size_t height, std::size_t width) {
  std::size_t x_min = width, y_min = height, x_max = 0, y_max = 0;
  bool any = false;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (!mask[y * width + x]) continue;
      any = true;
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  }
  if (!any) throw std::invalid_argument("mask_box: empty mask");
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  return box_corners_to_cs(BoxCorners{static_cast<double>(x_min) / w, static_cast<double>(y_min) / h,
                                      static_cast<double>(x_max + 1) / w,
                                      static_cast<double>(y_max + 1) / h});
}

Tensor render_frame(const std::vector<SceneObject>& objects, const std::array<double, 3>& background,
                    std::size_t size, double t, std::vector<std::vector<char>>* masks) {
  Tensor frame(Shape{3, size, size});
  const std::size_t plane = size * size;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) frame[c * plane + i] = background[c];
  }
  if (masks) masks->assign(objects.size(), std::vector<char>(plane, 0));
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const auto& obj = objects[o];
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        if (!obj.covers(static_cast<double>(x), static_cast<double>(y), t)) continue;
        if (masks) (*masks)[o][y * size + x] = 1;
        for (std::size_t c = 0; c < 3; ++c) frame[c * plane + y * size + x] = obj.color[c];
      }
    }
  }
  return frame;
}

std::vector<SceneObject> sample_objects(const DataConfig& config, std::mt19937_64& rng) {
  const std::size_t count =
      config.min_objects + index_below(rng, config.max_objects - config.min_objects + 1);
  const double size = static_cast<double>(config.frame_size);
  const double mid = static_cast<double>(config.clip_length - 1) / 2.0;
  std::vector<SceneObject> objects;
  for (std::size_t i = 0; i < count; ++i) {
    SceneObject o;
    o.shape = static_cast<ShapeClass>(index_below(rng, kShapeClasses));
    o.radius = uniform_between(rng, config.min_object_size, config.max_object_size) / 2.0;
    for (auto& c : o.color) c = uniform_between(rng, 0.45, 1.0);
    const double angle = uniform_between(rng, 0.0, 2 * std::numbers::pi);
    const double speed = uniform_between(rng, 0.0, config.max_speed);
    o.vx = speed * std::cos(angle);
    o.vy = speed * std::sin(angle);
    o.wobble = uniform_between(rng, 0.0, config.max_wobble);
    o.wobble_period = uniform_between(rng, 6.0, 12.0);
    o.wobble_phase = uniform_between(rng, 0.0, 2 * std::numbers::pi);
    // Keep the whole shape at least one pixel inside the frame at every time.
    const double lo = o.radius + 1.0 + o.wobble, hi = size - 1.0 - o.radius - o.wobble;
    const double reach_x = std::abs(o.vx) * mid, reach_y = std::abs(o.vy) * mid;
    if (lo + reach_x > hi - reach_x || lo + reach_y > hi - reach_y) {
      o.vx = o.vy = 0.0;
    }
    const double ex = std::abs(o.vx) * mid, ey = std::abs(o.vy) * mid;
    const double cx = uniform_between(rng, lo + ex, hi - ex);
    const double cy = uniform_between(rng, lo + ey, hi - ey);
    o.x0 = cx - o.vx * mid;
    o.y0 = cy - o.vy * mid;
    objects.push_back(o);
  }
  return objects;
}

Clip generate_clip(const DataConfig& config, std::uint64_t seed, double degradation_prob) {
  if (config.clip_length == 0 || config.max_objects == 0) {
    throw std::invalid_argument("clip needs at least one frame and one object");
  }
  if (config.current_index >= config.clip_length) {
    throw std::invalid_argument("current index outside the clip");
  }
  const auto kinds = enabled_kinds(config.degradation_kinds);
  std::mt19937_64 rng(seed);
  Clip clip;
  clip.seed = seed;
  clip.current_index = config.current_index;
  const auto objects = sample_objects(config, rng);
  const double shade = uniform_between(rng, 0.0, 0.25);
  std::array<double, 3> background{};
  for (auto& c : background) c = std::clamp(shade + uniform_between(rng, -0.05, 0.05), 0.0, 1.0);

  const bool degrade = !kinds.empty() && unit_uniform(rng) < degradation_prob;
  const Degradation kind = kinds.empty() ? Degradation::none : kinds[index_below(rng, kinds.size())];
  const std::size_t target = index_below(rng, objects.size());
  const std::uint64_t degradation_seed = rng();
  const double fraction =
      uniform_between(rng, config.occlusion_min_fraction, config.occlusion_max_fraction);

  for (std::size_t f = 0; f < config.clip_length; ++f) {
    const double t = static_cast<double>(f);
    std::vector<std::vector<char>> masks;
    Tensor frame = render_frame(objects, background, config.frame_size, t, &masks);
    std::vector<GroundTruthBox> boxes;
    for (std::size_t o = 0; o < objects.size(); ++o) {
      boxes.push_back(GroundTruthBox{static_cast<std::size_t>(objects[o].shape),
                                     mask_box(masks[o], config.frame_size, config.frame_size)});
    }
    Degradation applied = Degradation::none;
    if (degrade && f == config.current_index) {
      DegradationParams params;
      params.blur_length = config.blur_length;
      params.defocus_radius = config.defocus_radius;
      params.occlusion_fraction = fraction;
      params.target = boxes[target].box;
      const auto v = objects[target].velocity(t);
      const double speed = std::hypot(v[0], v[1]);
      if (speed > 1e-9) params.direction = {v[0] / speed, v[1] / speed};
      frame = apply_degradation(frame, kind, params, degradation_seed);
      applied = kind;
    }
    clip.frames.push_back(quantize(frame));
    clip.annotations.push_back(std::move(boxes));
    clip.degradations.push_back(applied);
  }
  return clip;
}

Tensor motion_blur(const Tensor& frame, double length, std::array<double, 2> direction) {
  const std::size_t taps = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(length)));
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  Tensor out(frame.shape());
  const double center = (static_cast<double>(taps) - 1.0) / 2.0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < taps; ++k) {
          const double s = static_cast<double>(k) - center;
          acc += bilinear_clamped(frame, c, static_cast<double>(y) + s * direction[1],
                                  static_cast<double>(x) + s * direction[0]);
        }
        out[(c * h + y) * w + x] = acc / static_cast<double>(taps);
      }
    }
  }
  return out;
}

Tensor defocus(const Tensor& frame, double radius) {
  const long r = static_cast<long>(std::floor(radius));
  std::vector<std::pair<long, long>> offsets;
  for (long dy = -r; dy <= r; ++dy) {
    for (long dx = -r; dx <= r; ++dx) {
      if (static_cast<double>(dx * dx + dy * dy) <= radius * radius) offsets.emplace_back(dy, dx);
    }
  }
  const long h = static_cast<long>(frame.dim(1)), w = static_cast<long>(frame.dim(2));
  const double weight = 1.0 / static_cast<double>(offsets.size());
  Tensor out(frame.shape());
  for (std::size_t c = 0; c < frame.dim(0); ++c) {
    const std::size_t base = c * static_cast<std::size_t>(h * w);
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (const auto& [dy, dx] : offsets) {
          const long yy = ((y + dy) % h + h) % h, xx = ((x + dx) % w + w) % w;
          acc += frame[base + static_cast<std::size_t>(yy * w + xx)];
        }
        out[base + static_cast<std::size_t>(y * w + x)] = acc * weight;
      }
    }
  }
  return out;
}

PixelRect occlusion_rect(const BoxCS& target, std::size_t height, std::size_t width,
                         double fraction, std::mt19937_64& rng) {
  if (fraction < 0 || fraction > 0.6) {
    throw std::invalid_argument("occlusion fraction must lie in [0, 0.6]");
  }
  const BoxCorners b = box_cs_to_corners(target);
  const auto clampi = [](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(std::lround(v), 0L, static_cast<long>(hi)));
  };
  const std::size_t bx0 = clampi(b.x1 * static_cast<double>(width), width);
  const std::size_t bx1 = std::max(bx0, clampi(b.x2 * static_cast<double>(width), width));
  const std::size_t by0 = clampi(b.y1 * static_cast<double>(height), height);
  const std::size_t by1 = std::max(by0, clampi(b.y2 * static_cast<double>(height), height));
  const std::size_t bw = bx1 - bx0, bh = by1 - by0;
  const double budget = fraction * static_cast<double>(bw * bh);
  const double aspect = uniform_between(rng, 0.5, 2.0);
  std::size_t rw = std::min(bw, static_cast<std::size_t>(std::floor(std::sqrt(budget * aspect))));
  rw = std::max<std::size_t>(rw, budget >= 1.0 ? 1 : 0);
  std::size_t rh = rw ? std::min(bh, static_cast<std::size_t>(std::floor(budget / static_cast<double>(rw)))) : 0;
  if (rh == 0) rw = 0;
  PixelRect r;
  r.x0 = bx0 + index_below(rng, bw - rw + 1);
  r.y0 = by0 + index_below(rng, bh - rh + 1);
  r.x1 = r.x0 + rw;
  r.y1 = r.y0 + rh;
  return r;
}

Tensor apply_degradation(const Tensor& frame, Degradation kind, const DegradationParams& params,
                         std::uint64_t seed) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw ShapeError("degradation expects [3,H,W], got " + shape_to_string(frame.shape()));
  }
  switch (kind) {
    case Degradation::none: return frame;
    case Degradation::motion_blur: return motion_blur(frame, params.blur_length, params.direction);
    case Degradation::defocus: return defocus(frame, params.defocus_radius);
    case Degradation::occlusion: {
      std::mt19937_64 rng(seed);
      const std::size_t h = frame.dim(1), w = frame.dim(2);
      const PixelRect r = occlusion_rect(params.target, h, w, params.occlusion_fraction, rng);
      Tensor out = frame;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = uniform_between(rng, 0.0, 1.0);
        for (std::size_t y = r.y0; y < r.y1; ++y) {
          for (std::size_t x = r.x0; x < r.x1; ++x) out[(c * h + y) * w + x] = v;
        }
      }
      return out;
    }
  }
  throw std::invalid_argument("unknown degradation kind");
}

Tensor quantize(const Tensor& frame) {
  Tensor out = frame;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::round(std::clamp(out[i], 0.0, 1.0) * 255.0) / 255.0;
  }
  return out;
}

}  // namespace stvod
