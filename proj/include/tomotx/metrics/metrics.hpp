#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tomotx/common/image.hpp"
#include "tomotx/ctgeom/ctgeom.hpp"

namespace tomotx::metrics {

inline constexpr double kPsnrCap = 99.0;

// Gaussian-window SSIM (11x11, sigma 1.5) averaged over every window that
// fits inside the image.
double ssim(const Image& a, const Image& b, double data_range = 1.0);

// Capped at kPsnrCap, including for identical images.
double psnr(const Image& a, const Image& b, double peak = 1.0);
double psnr_from_mse(double mse, double peak = 1.0);
double mse(const Image& a, const Image& b);

// Maps `image` through the affine map sending truth's [min, max] to [0, 1],
// then clamps to [0, 1].
Image normalize_to(const Image& image, const Image& truth);

struct ImageScore {
  double ssim = 0.0;
  double psnr = 0.0;
};

// Both images normalized by the truth's range before scoring.
ImageScore score(const Image& recon, const Image& truth);

enum class SweepKind { mask, dose };

std::string to_string(SweepKind kind);

struct QualityReport {
  std::string method;
  SweepKind kind = SweepKind::mask;
  double condition = 0.0;
  std::vector<double> ssim;
  std::vector<double> psnr;
  // Set when the method failed on this cell; scores are then empty.
  std::optional<std::string> error;

  double mean_ssim() const;
  double std_ssim() const;
  double mean_psnr() const;
  double std_psnr() const;
};

struct SweepTable {
  std::vector<std::string> methods;
  std::vector<double> conditions;
  // cells[m][c]; NaN where the cell failed.
  std::vector<std::vector<double>> cells;

  double at(const std::string& method, double condition) const;
  std::string to_csv() const;
};

// A reconstruction method maps degraded sinograms to images, in batch.
using Method = std::function<std::vector<Image>(std::span<const ct::MaskedSinogram>)>;

struct NamedMethod {
  std::string name;
  Method run;
};

struct SweepSpec {
  SweepKind kind = SweepKind::mask;
  std::vector<double> conditions;
  // Mask sweeps only.
  ct::MaskScheme scheme = ct::MaskScheme::uniform;
  // Dose sweeps only.
  double incident_flux = 1e4;
  double physical_scale = 1.0;
  uint64_t seed = 0;
  // Keep the first `examples` per-cell reconstructions for previews.
  int examples = 1;
};

struct CellExample {
  std::string method;
  double condition = 0.0;
  int sample = 0;
  Image degraded;  // zero-filled / noisy-input back-projection
  Image recon;
  Image truth;
};

struct SweepResult {
  SweepTable ssim;
  SweepTable psnr;
  std::vector<QualityReport> reports;  // method-major
  std::vector<CellExample> examples;

  std::string quality_csv() const;
  std::string summary_csv() const;
};

// Degrades every eval sinogram per condition with seeds derived from
// (seed, condition index, sample index), so all methods see the same inputs.
SweepResult sweep(std::span<const ct::Sinogram> sinograms, std::span<const Image> truths,
                  std::span<const NamedMethod> methods, const SweepSpec& spec);

std::vector<ct::MaskedSinogram> degrade_eval(std::span<const ct::Sinogram> sinograms, const SweepSpec& spec,
                                             size_t condition_index);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace tomotx::metrics
