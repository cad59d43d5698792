#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tomotx {

// Dense row-major 2-D grid of 32-bit reals. Used for phantoms,
// reconstructions and as the storage of a sinogram.
class Image {
 public:
  Image() = default;
  Image(int rows, int cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), values_(static_cast<size_t>(rows) * cols, fill) {}
  Image(int rows, int cols, std::vector<float> values);

  static Image square(int side, float fill = 0.0f) { return Image(side, side, fill); }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float& operator()(int r, int c) { return values_[static_cast<size_t>(r) * cols_ + c]; }
  float operator()(int r, int c) const { return values_[static_cast<size_t>(r) * cols_ + c]; }

  std::span<float> row(int r) { return {values_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)}; }
  std::span<const float> row(int r) const {
    return {values_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)};
  }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  std::vector<float>& storage() { return values_; }

  bool operator==(const Image&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> values_;
};

// Bilinear sample at fractional (row, col); zero outside the grid.
float sample_bilinear(const Image& img, double r, double c);

}  // namespace tomotx
