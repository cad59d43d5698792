#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "tomotx/common/error.hpp"
#include "tomotx/ctgeom/ctgeom.hpp"
#include "tomotx/phantom/phantom.hpp"

using namespace tomotx;
using namespace tomotx::ct;
using tomotx::phantom::Shape;
using tomotx::phantom::ShapeKind;

namespace {

Image centered_disk(int side, double radius, double intensity) {
  Shape disk;
  disk.kind = ShapeKind::circle;
  disk.a = disk.b = radius;
  disk.intensity = intensity;
  return phantom::rasterize(std::span<const Shape>(&disk, 1), side);
}

// Rotates a shape about the image center by +delta (x right, y down).
Shape rotated(Shape s, double delta) {
  const double c = std::cos(delta), sn = std::sin(delta);
  auto rot = [&](double& x, double& y) {
    const double nx = c * x - sn * y;
    const double ny = sn * x + c * y;
    x = nx;
    y = ny;
  };
  rot(s.cx, s.cy);
  s.rotation += delta;
  for (int k = 0; k < 3; ++k) rot(s.vertices[2 * k], s.vertices[2 * k + 1]);
  return s;
}

double max_abs(const Image& img) {
  double m = 0.0;
  for (float v : img.values()) m = std::max(m, static_cast<double>(std::abs(v)));
  return m;
}

}  // namespace

TEST_CASE("radon of zero image is zero") {
  const auto sino = radon(Image::square(32), AngleGrid{10, 0, 180});
  for (float v : sino.values.values()) CHECK(v == 0.0f);
  CHECK(sino.n_angles() == 10);
  CHECK(sino.n_bins() == 32);
}

TEST_CASE("radon rejects non-square images") {
  CHECK_THROWS_AS(radon(Image(16, 32), AngleGrid{10, 0, 180}), GeometryError);
}

TEST_CASE("centered disk matches the analytic chord length") {
  const int side = 64;
  const double r = 16.0, c = 1.0;
  const auto sino = radon(centered_disk(side, r, c), AngleGrid{60, 0, 180});
  const double center = 0.5 * (side - 1);
  for (int a = 0; a < sino.n_angles(); ++a) {
    // Bins at s = +-0.5 straddle the center.
    for (int k : {31, 32}) {
      const double s = k - center;
      const double analytic = 2.0 * c * std::sqrt(r * r - s * s);
      CHECK(std::abs(sino.values(a, k) - analytic) <= 0.02 * 2.0 * c * r);
    }
    double mae = 0.0;
    for (int k = 0; k < side; ++k) {
      const double s = k - center;
      const double analytic = std::abs(s) < r ? 2.0 * c * std::sqrt(r * r - s * s) : 0.0;
      mae += std::abs(sino.values(a, k) - analytic);
    }
    CHECK(mae / side < 0.03 * 2.0 * c * r);
  }
}

TEST_CASE("rotating the object shifts the sinogram by one row") {
  const int side = 64;
  const AngleGrid grid{60, 0, 180};
  phantom::PhantomConfig cfg;
  cfg.seed = 2024;
  cfg.shapes_min = cfg.shapes_max = 5;
  const auto shapes = phantom::sample_shapes(cfg, 0);
  std::vector<Shape> turned;
  const double delta = grid.step_deg() * std::numbers::pi / 180.0;
  for (const auto& s : shapes) turned.push_back(rotated(s, delta));

  const auto base = radon(phantom::rasterize(shapes, side), grid);
  const auto shifted = radon(phantom::rasterize(turned, side), grid);
  double mad = 0.0;
  for (int a = 0; a < grid.n_angles; ++a) {
    for (int k = 0; k < side; ++k) {
      // p'_theta = p_{theta - delta}; row 0 wraps to the last row, mirrored.
      const float expected = a > 0 ? base.values(a - 1, k) : base.values(grid.n_angles - 1, side - 1 - k);
      mad += std::abs(shifted.values(a, k) - expected);
    }
  }
  mad /= static_cast<double>(grid.n_angles * side);
  CHECK(mad < 1e-2 * max_abs(base.values));
}

TEST_CASE("radon is linear") {
  phantom::PhantomConfig cfg;
  cfg.seed = 3;
  const auto x = phantom::generate_phantom(cfg, 0);
  const auto y = phantom::generate_phantom(cfg, 1);
  const double a = 0.7, b = -1.3;
  Image combo = Image::square(cfg.image_side);
  for (size_t i = 0; i < combo.size(); ++i) {
    combo.values()[i] = static_cast<float>(a * x.values()[i] + b * y.values()[i]);
  }
  const AngleGrid grid{30, 0, 180};
  const auto lhs = radon(combo, grid);
  const auto rx = radon(x, grid);
  const auto ry = radon(y, grid);
  double worst = 0.0;
  for (size_t i = 0; i < lhs.values.size(); ++i) {
    const double rhs = a * rx.values.values()[i] + b * ry.values.values()[i];
    worst = std::max(worst, std::abs(lhs.values.values()[i] - rhs));
  }
  CHECK(worst <= 1e-6 * max_abs(lhs.values));
}

TEST_CASE("per-angle mass conservation") {
  phantom::PhantomConfig cfg;
  cfg.seed = 11;
  for (uint64_t idx = 0; idx < 5; ++idx) {
    const auto img = phantom::generate_phantom(cfg, idx);
    const double mass = std::accumulate(img.values().begin(), img.values().end(), 0.0);
    if (mass == 0.0) continue;
    const auto sino = radon(img, AngleGrid{60, 0, 180});
    double lo = 1e300, hi = -1e300;
    for (int a = 0; a < sino.n_angles(); ++a) {
      const auto row = sino.row(a);
      const double s = std::accumulate(row.begin(), row.end(), 0.0);
      lo = std::min(lo, s);
      hi = std::max(hi, s);
      CHECK(std::abs(s - mass) <= 0.02 * mass);
    }
    CHECK((hi - lo) <= 0.01 * hi);
  }
}

TEST_CASE("fbp of zero sinogram is zero; degenerate grids are rejected") {
  Sinogram zero{AngleGrid{8, 0, 180}, Image(8, 16)};
  const auto rec = fbp(zero);
  CHECK(rec.rows() == 16);
  for (float v : rec.values()) CHECK(v == 0.0f);
  Sinogram one{AngleGrid{1, 0, 180}, Image(1, 16)};
  CHECK_THROWS_AS(fbp(one), GeometryError);
}

TEST_CASE("fbp recovers the disk interior value") {
  const int side = 64;
  const auto disk = centered_disk(side, 14.0, 0.8);
  const auto rec = fbp(radon(disk, AngleGrid{180, 0, 180}), FbpFilter::ramlak);
  double acc = 0.0;
  int n = 0;
  for (int i = 24; i < 40; ++i) {
    for (int j = 24; j < 40; ++j) {
      acc += rec(i, j);
      ++n;
    }
  }
  CHECK(acc / n == doctest::Approx(0.8).epsilon(0.03));
  CHECK(std::abs(rec(2, 2)) < 0.05);
}

TEST_CASE("hann filter smooths; response is a ramp at low frequency") {
  const auto ram = ramp_filter_response(128, FbpFilter::ramlak);
  const auto hann = ramp_filter_response(128, FbpFilter::hann);
  CHECK(ram.size() == 65);
  CHECK(std::abs(ram[0]) < 0.01);
  // Near-linear growth with frequency index: H(f) ~ f / N.
  CHECK(ram[8] == doctest::Approx(8.0 / 128).epsilon(0.05));
  CHECK(hann[64] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(hann[8] < ram[8]);
}

TEST_CASE("masked fbp uses only kept angles") {
  phantom::PhantomConfig cfg;
  cfg.seed = 9;
  const auto sino = radon(phantom::generate_phantom(cfg, 0), AngleGrid{60, 0, 180});
  const auto masked = apply_mask(sino, MaskSpec{MaskScheme::uniform, 0.5, 0});
  const auto a = fbp(masked);
  const auto b = fbp_rows(sino, masked.kept_indices);
  CHECK(a == b);
}

TEST_CASE("dose at huge flux is nearly lossless") {
  phantom::PhantomConfig cfg;
  cfg.seed = 4;
  auto sino = radon(phantom::generate_phantom(cfg, 0), AngleGrid{20, 0, 180});
  const double phys = 4.6 / max_abs(sino.values);
  const auto noisy = apply_dose(sino, DoseModel{1e9, 1.0, 1, phys});
  double mae = 0.0;
  for (size_t i = 0; i < sino.values.size(); ++i) {
    mae += std::abs(noisy.values.values()[i] - sino.values.values()[i]) * phys;
  }
  CHECK(mae / sino.values.size() < 1e-3);
}

TEST_CASE("dose is deterministic per seed and seeds differ") {
  Sinogram s{AngleGrid{4, 0, 180}, Image(4, 8, 1.0f)};
  const auto a = apply_dose(s, DoseModel{1e4, 0.005, 42, 1.0});
  const auto b = apply_dose(s, DoseModel{1e4, 0.005, 42, 1.0});
  const auto c = apply_dose(s, DoseModel{1e4, 0.005, 43, 1.0});
  CHECK(a == b);
  CHECK(!(a == c));
}

TEST_CASE("dose estimate is unbiased on average") {
  // Bins span p in [0.5, 2) in attenuation units.
  Image vals(1, 16);
  for (int k = 0; k < 16; ++k) vals(0, k) = static_cast<float>(0.5 + 1.5 * k / 16.0);
  Sinogram clean{AngleGrid{2, 0, 180}, vals};
  std::vector<double> mean(16, 0.0);
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const auto noisy = apply_dose(clean, DoseModel{1e4, 0.1, static_cast<uint64_t>(t), 1.0});
    for (int k = 0; k < 16; ++k) mean[static_cast<size_t>(k)] += noisy.values(0, k);
  }
  for (int k = 0; k < 16; ++k) {
    const double m = mean[static_cast<size_t>(k)] / trials;
    CHECK(std::abs(m - vals(0, k)) <= 0.05 * vals(0, k));
  }
}

TEST_CASE("dose rejects non-positive fractions") {
  Sinogram s{AngleGrid{2, 0, 180}, Image(2, 4)};
  CHECK_THROWS_AS(apply_dose(s, DoseModel{1e4, 0.0, 0, 1.0}), ConfigError);
  CHECK_THROWS_AS(apply_dose(s, DoseModel{1e4, -0.1, 0, 1.0}), ConfigError);
}

TEST_CASE("masking: identity, uniform stride, random count") {
  Sinogram s{AngleGrid{180, 0, 180}, Image(180, 4, 1.0f)};
  const auto all = apply_mask(s, MaskSpec{MaskScheme::random, 0.0, 3});
  CHECK(all.kept_indices.size() == 180);
  CHECK(all.sinogram == s);

  const auto uni = kept_indices(MaskSpec{MaskScheme::uniform, 0.8, 0}, 180);
  REQUIRE(uni.size() == 36);
  for (size_t i = 0; i < uni.size(); ++i) CHECK(uni[i] == static_cast<int>(5 * i));

  const auto r1 = kept_indices(MaskSpec{MaskScheme::random, 0.5, 10}, 60);
  const auto r2 = kept_indices(MaskSpec{MaskScheme::random, 0.5, 10}, 60);
  const auto r3 = kept_indices(MaskSpec{MaskScheme::random, 0.5, 11}, 60);
  CHECK(r1.size() == 30);
  CHECK(r1 == r2);
  CHECK(r1 != r3);
  CHECK(std::is_sorted(r1.begin(), r1.end()));
  CHECK(std::adjacent_find(r1.begin(), r1.end()) == r1.end());
}

TEST_CASE("masked rows are zero, kept rows copied, and masking is idempotent") {
  phantom::PhantomConfig cfg;
  cfg.seed = 21;
  const auto sino = radon(phantom::generate_phantom(cfg, 2), AngleGrid{60, 0, 180});
  const MaskSpec spec{MaskScheme::random, 0.8, 99};
  const auto once = apply_mask(sino, spec);
  const auto twice = apply_mask(once.sinogram, spec);
  CHECK(once.sinogram == twice.sinogram);
  CHECK(once.kept_indices == twice.kept_indices);
  for (int a = 0; a < 60; ++a) {
    const bool kept = std::binary_search(once.kept_indices.begin(), once.kept_indices.end(), a);
    for (int k = 0; k < sino.n_bins(); ++k) {
      CHECK(once.sinogram.values(a, k) == (kept ? sino.values(a, k) : 0.0f));
    }
  }
}

TEST_CASE("mask ratios outside [0,1) or keeping nothing are config errors") {
  CHECK_THROWS_AS(kept_indices(MaskSpec{MaskScheme::random, 1.0, 0}, 60), ConfigError);
  CHECK_THROWS_AS(kept_indices(MaskSpec{MaskScheme::random, -0.1, 0}, 60), ConfigError);
  CHECK_THROWS_AS(kept_indices(MaskSpec{MaskScheme::uniform, 0.96, 0}, 10), ConfigError);
}
