#include <cmath>
#include <numbers>
#include <string>

#include "tomotx/common/error.hpp"
#include "tomotx/ctgeom/ctgeom.hpp"

namespace tomotx::ct {

void AngleGrid::validate() const {
  if (n_angles < 2) throw ConfigError("angle grid: n_angles must be >= 2, got " + std::to_string(n_angles));
  if (!(end_deg > start_deg)) throw ConfigError("angle grid: end_deg must exceed start_deg");
}

double AngleGrid::angle_rad(int i) const { return angle_deg(i) * std::numbers::pi / 180.0; }

Sinogram radon(const Image& image, const AngleGrid& grid) {
  if (image.rows() != image.cols()) {
    throw GeometryError("radon: image must be square, got " + std::to_string(image.rows()) + "x" +
                        std::to_string(image.cols()));
  }
  grid.validate();
  const int n = image.rows();
  const double c = 0.5 * (n - 1);
  Sinogram sino{grid, Image(grid.n_angles, n)};
  for (int a = 0; a < grid.n_angles; ++a) {
    const double th = grid.angle_rad(a);
    const double ct = std::cos(th);
    const double st = std::sin(th);
    auto out = sino.row(a);
    for (int k = 0; k < n; ++k) {
      const double s = k - c;
      double acc = 0.0;
      for (int m = 0; m < n; ++m) {
        const double t = m - c;
        const double x = s * ct - t * st;
        const double y = s * st + t * ct;
        acc += sample_bilinear(image, y + c, x + c);
      }
      out[k] = static_cast<float>(acc);
    }
  }
  return sino;
}

}  // namespace tomotx::ct
