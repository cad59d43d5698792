#include "tomotx/phantom/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tomotx/common/error.hpp"
#include "tomotx/common/rng.hpp"

namespace tomotx::phantom {
namespace {

constexpr uint64_t kCountStream = 0xc0de5a11ULL;

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

void PhantomConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("phantom config: " + field + " " + why);
  };
  if (image_side < 8) fail("image_side", "must be at least 8");
  if ((image_side & (image_side - 1)) != 0) fail("image_side", "must be a power of two");
  if (shapes_min < 0) fail("shapes_min", "must be non-negative");
  if (shapes_max < shapes_min) fail("shapes_max", "must be >= shapes_min");
  if (!(intensity_low >= 0.0)) fail("intensity_low", "must be >= 0");
  if (!(intensity_high <= 1.0)) fail("intensity_high", "must be <= 1");
  if (!(intensity_low <= intensity_high)) fail("intensity_low", "must be <= intensity_high");
  if (!(size_low > 0.0)) fail("size_low", "must be > 0");
  if (!(size_high <= 0.5)) fail("size_high", "must be <= 0.5");
  if (!(size_low <= size_high)) fail("size_low", "must be <= size_high");
}

bool Shape::contains(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  switch (kind) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= a * a;
    case ShapeKind::ellipse:
    case ShapeKind::rectangle: {
      const double c = std::cos(rotation);
      const double s = std::sin(rotation);
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      if (kind == ShapeKind::ellipse) return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
      return std::abs(u) <= a && std::abs(v) <= b;
    }
    case ShapeKind::triangle: {
      const auto& p = vertices;
      const double e0 = edge(p[0], p[1], p[2], p[3], x, y);
      const double e1 = edge(p[2], p[3], p[4], p[5], x, y);
      const double e2 = edge(p[4], p[5], p[0], p[1], x, y);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

double support_radius(int side) { return 0.5 * side - 2.0; }

std::vector<Shape> sample_shapes(const PhantomConfig& config, uint64_t index) {
  config.validate();
  Rng count_rng(derive_seed({config.seed, index, kCountStream}));
  const auto count = count_rng.uniform_int(config.shapes_min, config.shapes_max);

  const double side = config.image_side;
  const double center_radius = 0.6 * support_radius(config.image_side);
  std::vector<Shape> shapes;
  shapes.reserve(static_cast<size_t>(count));
  for (int64_t ordinal = 0; ordinal < count; ++ordinal) {
    Rng rng(derive_seed({config.seed, index, static_cast<uint64_t>(ordinal)}));
    Shape s;
    s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 3));
    // Uniform over the disk of admissible centers.
    const double rho = center_radius * std::sqrt(rng.uniform());
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    s.cx = rho * std::cos(phi);
    s.cy = rho * std::sin(phi);
    s.a = side * rng.uniform(config.size_low, config.size_high);
    s.b = side * rng.uniform(config.size_low, config.size_high);
    s.rotation = std::numbers::pi * rng.uniform();
    s.intensity = rng.uniform(config.intensity_low, config.intensity_high);
    if (s.kind == ShapeKind::circle) s.b = s.a;
    if (s.kind == ShapeKind::triangle) {
      const double third = 2.0 * std::numbers::pi / 3.0;
      for (int k = 0; k < 3; ++k) {
        const double jitter = rng.uniform(-0.35, 0.35);
        const double ang = s.rotation + k * third + jitter;
        s.vertices[2 * k] = s.cx + s.a * std::cos(ang);
        s.vertices[2 * k + 1] = s.cy + s.a * std::sin(ang);
      }
    }
    shapes.push_back(s);
  }
  return shapes;
}

Image rasterize(std::span<const Shape> shapes, int side) {
  Image img = Image::square(side);
  const double c = grid_center(side);
  const double r2 = support_radius(side) * support_radius(side);
  for (int i = 0; i < side; ++i) {
    const double y = i - c;
    for (int j = 0; j < side; ++j) {
      const double x = j - c;
      if (x * x + y * y > r2) continue;
      double v = 0.0;
      for (const auto& s : shapes) {
        if (s.contains(x, y)) v += s.intensity;
      }
      img(i, j) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

Image generate_phantom(const PhantomConfig& config, uint64_t index) {
  const auto shapes = sample_shapes(config, index);
  return rasterize(shapes, config.image_side);
}

}  // namespace tomotx::phantom
