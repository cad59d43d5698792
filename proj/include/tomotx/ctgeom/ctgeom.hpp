#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tomotx/common/image.hpp"

namespace tomotx::ct {

// Evenly spaced projection angles over [start_deg, end_deg).
struct AngleGrid {
  int n_angles = 180;
  double start_deg = 0.0;
  double end_deg = 180.0;

  void validate() const;
  double step_deg() const { return (end_deg - start_deg) / n_angles; }
  double angle_deg(int i) const { return start_deg + i * step_deg(); }
  double angle_rad(int i) const;

  bool operator==(const AngleGrid&) const = default;
};

// n_angles x n_bins line integrals; row i is the projection at grid angle i.
struct Sinogram {
  AngleGrid grid;
  Image values;

  int n_angles() const { return values.rows(); }
  int n_bins() const { return values.cols(); }
  std::span<float> row(int i) { return values.row(i); }
  std::span<const float> row(int i) const { return values.row(i); }

  bool operator==(const Sinogram&) const = default;
};

enum class MaskScheme { random, uniform };

struct MaskSpec {
  MaskScheme scheme = MaskScheme::random;
  // Fraction of angles removed, in [0, 1).
  double ratio = 0.0;
  uint64_t seed = 0;
};

struct MaskedSinogram {
  // Masked rows are zero-filled; kept rows are copies of the source.
  Sinogram sinogram;
  std::vector<int> kept_indices;
};

struct DoseModel {
  double incident_flux = 1e4;
  double dose_fraction = 1.0;
  uint64_t rng_seed = 0;
  // Converts sinogram units into attenuation (exponent of Beer's law).
  double physical_scale = 1.0;
};

enum class FbpFilter { ramlak, hann, none };

// Forward projection by rotate-and-sum with bilinear interpolation. Bin
// spacing is one pixel and n_bins equals the image side.
Sinogram radon(const Image& image, const AngleGrid& grid);

// Filtered back-projection over every row of the sinogram.
Image fbp(const Sinogram& sino, FbpFilter filter = FbpFilter::ramlak);

// Filtered back-projection over a subset of rows only, each weighted as if
// the subset were the complete acquisition.
Image fbp_rows(const Sinogram& sino, std::span<const int> rows, FbpFilter filter = FbpFilter::ramlak);

// Sparse-view analytic reconstruction: back-projects the kept angles only.
Image fbp(const MaskedSinogram& masked, FbpFilter filter = FbpFilter::ramlak);

// Ramp filter response on an rfft grid of padded_length / 2 + 1 bins.
std::vector<double> ramp_filter_response(int padded_length, FbpFilter filter);

// Poisson counting under Beer's law, mapped back to line integrals.
Sinogram apply_dose(const Sinogram& sino, const DoseModel& dose);

int kept_count(int n_angles, double ratio);
std::vector<int> kept_indices(const MaskSpec& spec, int n_angles);
MaskedSinogram apply_mask(const Sinogram& sino, const MaskSpec& spec);

}  // namespace tomotx::ct
