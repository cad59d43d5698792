#include "tomotx/common/image.hpp"

#include <cmath>
#include <string>

#include "tomotx/common/error.hpp"

namespace tomotx {

Image::Image(int rows, int cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != static_cast<size_t>(rows) * cols) {
    throw ShapeError("image storage has " + std::to_string(values_.size()) + " values, expected " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

float sample_bilinear(const Image& img, double r, double c) {
  const double r0f = std::floor(r);
  const double c0f = std::floor(c);
  const int r0 = static_cast<int>(r0f);
  const int c0 = static_cast<int>(c0f);
  const double fr = r - r0f;
  const double fc = c - c0f;
  auto at = [&](int rr, int cc) -> double {
    if (rr < 0 || cc < 0 || rr >= img.rows() || cc >= img.cols()) return 0.0;
    return img(rr, cc);
  };
  const double top = at(r0, c0) * (1.0 - fc) + at(r0, c0 + 1) * fc;
  const double bottom = at(r0 + 1, c0) * (1.0 - fc) + at(r0 + 1, c0 + 1) * fc;
  return static_cast<float>(top * (1.0 - fr) + bottom * fr);
}

}  // namespace tomotx
