#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>

#include "tomotx/common/error.hpp"
#include "tomotx/ctgeom/ctgeom.hpp"

namespace tomotx::ct {
namespace {

// FFTW's planner is not re-entrant; execution on private buffers is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

int padded_length_for(int n_bins) {
  int p = 64;
  while (p < 2 * n_bins) p *= 2;
  return p;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(static_cast<size_t>(n));
    out_ = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
    std::lock_guard lock(planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(n, out_, in_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(forward_);
      fftw_destroy_plan(inverse_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* real() { return in_; }
  fftw_complex* spectrum() { return out_; }
  void forward() { fftw_execute(forward_); }
  // Unnormalized; caller divides by n.
  void inverse() { fftw_execute(inverse_); }
  int size() const { return n_; }

 private:
  int n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

}  // namespace

std::vector<double> ramp_filter_response(int padded_length, FbpFilter filter) {
  const int n = padded_length;
  const int n_freq = n / 2 + 1;
  if (filter == FbpFilter::none) return std::vector<double>(static_cast<size_t>(n_freq), 1.0);

  // Band-limited ramp built from its spatial kernel (h[0] = 1/4,
  // h[odd k] = -1/(pi k)^2), which avoids the DC offset of a sampled |f|.
  RealFft fft(n);
  double* h = fft.real();
  for (int i = 0; i < n; ++i) h[i] = 0.0;
  h[0] = 0.25;
  for (int k = 1; k < n / 2; k += 2) {
    const double v = -1.0 / (std::numbers::pi * std::numbers::pi * k * k);
    h[k] = v;
    h[n - k] = v;
  }
  fft.forward();
  std::vector<double> response(static_cast<size_t>(n_freq));
  for (int f = 0; f < n_freq; ++f) {
    double v = fft.spectrum()[f][0];
    if (filter == FbpFilter::hann) {
      const double nu = static_cast<double>(f) / n;  // cycles per sample, [0, 0.5]
      v *= 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * nu));
    }
    response[static_cast<size_t>(f)] = v;
  }
  return response;
}

Image fbp_rows(const Sinogram& sino, std::span<const int> rows, FbpFilter filter) {
  if (sino.n_angles() < 2) {
    throw GeometryError("fbp: need at least 2 projection angles, got " + std::to_string(sino.n_angles()));
  }
  if (rows.empty()) throw GeometryError("fbp: no projection rows selected");
  for (float v : sino.values.values()) {
    if (!std::isfinite(v)) throw NumericError("fbp: sinogram contains non-finite values");
  }
  const int n = sino.n_bins();
  const int padded = padded_length_for(n);
  const auto response = ramp_filter_response(padded, filter);

  RealFft fft(padded);
  Image filtered(static_cast<int>(rows.size()), n);
  for (size_t r = 0; r < rows.size(); ++r) {
    const int a = rows[r];
    if (a < 0 || a >= sino.n_angles()) throw GeometryError("fbp: row index out of range");
    double* buf = fft.real();
    const auto src = sino.row(a);
    for (int i = 0; i < padded; ++i) buf[i] = i < n ? src[i] : 0.0;
    fft.forward();
    auto* spec = fft.spectrum();
    for (size_t f = 0; f < response.size(); ++f) {
      spec[f][0] *= response[f];
      spec[f][1] *= response[f];
    }
    fft.inverse();
    auto dst = filtered.row(static_cast<int>(r));
    for (int i = 0; i < n; ++i) dst[i] = static_cast<float>(buf[i] / padded);
  }

  const double c = 0.5 * (n - 1);
  // Unfiltered back-projection is normalized to a mean smear instead.
  const double weight = filter == FbpFilter::none ? 1.0 / (static_cast<double>(rows.size()) * n)
                                                  : std::numbers::pi / static_cast<double>(rows.size());
  std::vector<double> cosv(rows.size()), sinv(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    const double th = sino.grid.angle_rad(rows[r]);
    cosv[r] = std::cos(th);
    sinv[r] = std::sin(th);
  }
  Image recon = Image::square(n);
  for (int i = 0; i < n; ++i) {
    const double y = i - c;
    for (int j = 0; j < n; ++j) {
      const double x = j - c;
      double acc = 0.0;
      for (size_t r = 0; r < rows.size(); ++r) {
        const double pos = x * cosv[r] + y * sinv[r] + c;
        const double p0 = std::floor(pos);
        const int k = static_cast<int>(p0);
        const double frac = pos - p0;
        const auto q = filtered.row(static_cast<int>(r));
        const double lo = (k >= 0 && k < n) ? q[k] : 0.0;
        const double hi = (k + 1 >= 0 && k + 1 < n) ? q[k + 1] : 0.0;
        acc += lo * (1.0 - frac) + hi * frac;
      }
      recon(i, j) = static_cast<float>(acc * weight);
    }
  }
  return recon;
}

Image fbp(const Sinogram& sino, FbpFilter filter) {
  std::vector<int> rows(static_cast<size_t>(sino.n_angles()));
  std::iota(rows.begin(), rows.end(), 0);
  return fbp_rows(sino, rows, filter);
}

Image fbp(const MaskedSinogram& masked, FbpFilter filter) {
  if (masked.kept_indices.empty()) throw GeometryError("fbp: masked sinogram keeps no angles");
  return fbp_rows(masked.sinogram, masked.kept_indices, filter);
}

}  // namespace tomotx::ct
