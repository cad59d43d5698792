#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tomotx/common/image.hpp"

namespace tomotx::phantom {

struct PhantomConfig {
  int image_side = 64;
  int shapes_min = 3;
  int shapes_max = 8;
  double intensity_low = 0.1;
  double intensity_high = 1.0;
  // Characteristic shape radius as a fraction of image_side.
  double size_low = 0.05;
  double size_high = 0.25;
  uint64_t seed = 0;

  // Throws ConfigError naming the first offending field.
  void validate() const;
};

enum class ShapeKind { circle, ellipse, triangle, rectangle };

// Geometry is in pixel units relative to the image center, x to the right
// and y downwards (row direction).
struct Shape {
  ShapeKind kind = ShapeKind::circle;
  double cx = 0.0;
  double cy = 0.0;
  // circle: a = radius; ellipse: semi-axes; rectangle: half-widths.
  double a = 0.0;
  double b = 0.0;
  double rotation = 0.0;
  double intensity = 0.0;
  // triangle only, absolute coordinates
  std::array<double, 6> vertices{};

  bool contains(double x, double y) const;
};

// Radius of the circular support; every pixel whose center lies farther
// from the image center is zero.
double support_radius(int side);

// Offset of the pixel-center coordinate origin, (side - 1) / 2.
inline double grid_center(int side) { return 0.5 * (side - 1); }

std::vector<Shape> sample_shapes(const PhantomConfig& config, uint64_t index);

// Sums shape intensities per pixel center, clamps to [0, 1] and applies the
// circular support mask.
Image rasterize(std::span<const Shape> shapes, int side);

Image generate_phantom(const PhantomConfig& config, uint64_t index);

}  // namespace tomotx::phantom
