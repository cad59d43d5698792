#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tomotx/common/error.hpp"
#include "tomotx/common/rng.hpp"
#include "tomotx/ctgeom/ctgeom.hpp"

namespace tomotx::ct {

Sinogram apply_dose(const Sinogram& sino, const DoseModel& dose) {
  if (!(dose.dose_fraction > 0.0) || dose.dose_fraction > 1.0) {
    throw ConfigError("dose model: dose_fraction must lie in (0, 1], got " + std::to_string(dose.dose_fraction));
  }
  if (!(dose.incident_flux > 0.0)) throw ConfigError("dose model: incident_flux must be > 0");
  if (!(dose.physical_scale > 0.0)) throw ConfigError("dose model: physical_scale must be > 0");

  const double photons = dose.incident_flux * dose.dose_fraction;
  Rng rng(dose.rng_seed);
  Sinogram out = sino;
  for (auto& v : out.values.values()) {
    const double attenuation = static_cast<double>(v) * dose.physical_scale;
    const double expected = photons * std::exp(-attenuation);
    const auto counts = rng.poisson(expected);
    const double observed = std::max<double>(static_cast<double>(counts), 1.0);
    v = static_cast<float>(-std::log(observed / photons) / dose.physical_scale);
  }
  return out;
}

int kept_count(int n_angles, double ratio) {
  if (!(ratio >= 0.0) || !(ratio < 1.0)) {
    throw ConfigError("mask spec: ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  const int removed = static_cast<int>(std::lround(ratio * n_angles));
  const int kept = n_angles - removed;
  if (kept < 1) {
    throw ConfigError("mask spec: ratio " + std::to_string(ratio) + " keeps no angle out of " +
                      std::to_string(n_angles));
  }
  return kept;
}

std::vector<int> kept_indices(const MaskSpec& spec, int n_angles) {
  const int kept = kept_count(n_angles, spec.ratio);
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(kept));
  if (spec.scheme == MaskScheme::uniform) {
    // Evenly spread; reduces to {0, k, 2k, ...} when k = n / kept is integral.
    for (int i = 0; i < kept; ++i) idx.push_back(static_cast<int>((static_cast<int64_t>(i) * n_angles) / kept));
    return idx;
  }
  std::vector<int> pool(static_cast<size_t>(n_angles));
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(spec.seed);
  for (int i = 0; i < kept; ++i) {
    const auto j = static_cast<size_t>(rng.uniform_int(i, n_angles - 1));
    std::swap(pool[static_cast<size_t>(i)], pool[j]);
  }
  idx.assign(pool.begin(), pool.begin() + kept);
  std::sort(idx.begin(), idx.end());
  return idx;
}

MaskedSinogram apply_mask(const Sinogram& sino, const MaskSpec& spec) {
  MaskedSinogram out;
  out.kept_indices = kept_indices(spec, sino.n_angles());
  out.sinogram.grid = sino.grid;
  out.sinogram.values = Image(sino.n_angles(), sino.n_bins());
  for (int a : out.kept_indices) {
    const auto src = sino.row(a);
    std::copy(src.begin(), src.end(), out.sinogram.row(a).begin());
  }
  return out;
}

}  // namespace tomotx::ct
