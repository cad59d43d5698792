#include "tomotx/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "tomotx/common/error.hpp"
#include "tomotx/common/rng.hpp"

namespace tomotx::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> w(kWindow);
  const int r = kWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    w[static_cast<size_t>(i)] = std::exp(-0.5 * (i - r) * (i - r) / (kSigma * kSigma));
    sum += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable valid-mode filter of a rows x cols field.
std::vector<double> filter_valid(const std::vector<double>& in, int rows, int cols, const std::vector<double>& w) {
  const int orows = rows - kWindow + 1, ocols = cols - kWindow + 1;
  std::vector<double> tmp(static_cast<size_t>(rows) * ocols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < ocols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += w[static_cast<size_t>(k)] * in[static_cast<size_t>(r) * cols + c + k];
      tmp[static_cast<size_t>(r) * ocols + c] = acc;
    }
  }
  std::vector<double> out(static_cast<size_t>(orows) * ocols);
  for (int r = 0; r < orows; ++r) {
    for (int c = 0; c < ocols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += w[static_cast<size_t>(k)] * tmp[static_cast<size_t>(r + k) * ocols + c];
      out[static_cast<size_t>(r) * ocols + c] = acc;
    }
  }
  return out;
}

void require_same(const Image& a, const Image& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + " differ");
  }
}

std::string num(double v, const char* spec = "%.6f") {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

double ssim(const Image& a, const Image& b, double data_range) {
  require_same(a, b, "ssim");
  if (a.rows() < kWindow || a.cols() < kWindow) throw ShapeError("ssim: image smaller than the 11x11 window");
  if (!(data_range > 0.0)) throw ConfigError("ssim: data range must be positive");
  const int rows = a.rows(), cols = a.cols();
  const size_t n = a.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (size_t i = 0; i < n; ++i) {
    x[i] = a.values()[i];
    y[i] = b.values()[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto w = gaussian_taps();
  const auto mx = filter_valid(x, rows, cols, w);
  const auto my = filter_valid(y, rows, cols, w);
  const auto mxx = filter_valid(xx, rows, cols, w);
  const auto myy = filter_valid(yy, rows, cols, w);
  const auto mxy = filter_valid(xy, rows, cols, w);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double total = 0.0;
  for (size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

double mse(const Image& a, const Image& b) {
  require_same(a, b, "mse");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double e = static_cast<double>(a.values()[i]) - b.values()[i];
    acc += e * e;
  }
  return acc / static_cast<double>(a.size());
}

double psnr_from_mse(double m, double peak) {
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be positive");
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

double psnr(const Image& a, const Image& b, double peak) { return psnr_from_mse(mse(a, b), peak); }

Image normalize_to(const Image& image, const Image& truth) {
  require_same(image, truth, "normalize");
  const auto [lo, hi] = std::ranges::minmax(truth.values());
  const double range = hi > lo ? static_cast<double>(hi) - lo : 1.0;
  Image out(image.rows(), image.cols());
  for (size_t i = 0; i < image.size(); ++i) {
    const double v = (static_cast<double>(image.values()[i]) - lo) / range;
    out.values()[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

ImageScore score(const Image& recon, const Image& truth) {
  const Image r = normalize_to(recon, truth);
  const Image t = normalize_to(truth, truth);
  return {ssim(r, t, 1.0), psnr(r, t, 1.0)};
}

std::string to_string(SweepKind kind) { return kind == SweepKind::mask ? "mask" : "dose"; }

double QualityReport::mean_ssim() const { return mean_of(ssim); }
double QualityReport::std_ssim() const { return std_of(ssim); }
double QualityReport::mean_psnr() const { return mean_of(psnr); }
double QualityReport::std_psnr() const { return std_of(psnr); }

double SweepTable::at(const std::string& method, double condition) const {
  for (size_t m = 0; m < methods.size(); ++m) {
    if (methods[m] != method) continue;
    for (size_t c = 0; c < conditions.size(); ++c) {
      if (conditions[c] == condition) return cells[m][c];
    }
  }
  throw ContractError("sweep table has no cell (" + method + ", " + num(condition, "%g") + ")");
}

std::string SweepTable::to_csv() const {
  std::string out = "method";
  for (double c : conditions) out += "," + num(c, "%g");
  out += "\n";
  for (size_t m = 0; m < methods.size(); ++m) {
    out += methods[m];
    for (double v : cells[m]) out += "," + num(v, "%.4f");
    out += "\n";
  }
  return out;
}

std::string SweepResult::quality_csv() const {
  std::string out = "method,sweep,condition,sample,ssim,psnr\n";
  for (const auto& r : reports) {
    for (size_t i = 0; i < r.ssim.size(); ++i) {
      out += r.method + "," + to_string(r.kind) + "," + num(r.condition, "%g") + "," + std::to_string(i) + "," +
             num(r.ssim[i]) + "," + num(r.psnr[i]) + "\n";
    }
  }
  return out;
}

std::string SweepResult::summary_csv() const {
  std::string out = "method,sweep,condition,n,mean_ssim,std_ssim,mean_psnr,std_psnr,error\n";
  for (const auto& r : reports) {
    out += r.method + "," + to_string(r.kind) + "," + num(r.condition, "%g") + "," + std::to_string(r.ssim.size()) +
           "," + num(r.mean_ssim()) + "," + num(r.std_ssim()) + "," + num(r.mean_psnr()) + "," +
           num(r.std_psnr()) + ",";
    if (r.error) {
      std::string e = *r.error;
      std::ranges::replace(e, ',', ';');
      std::ranges::replace(e, '\n', ' ');
      out += e;
    }
    out += "\n";
  }
  return out;
}

std::vector<ct::MaskedSinogram> degrade_eval(std::span<const ct::Sinogram> sinograms, const SweepSpec& spec,
                                             size_t condition_index) {
  const double value = spec.conditions.at(condition_index);
  std::vector<ct::MaskedSinogram> out;
  out.reserve(sinograms.size());
  for (size_t i = 0; i < sinograms.size(); ++i) {
    const uint64_t seed = derive_seed({spec.seed, condition_index, i});
    if (spec.kind == SweepKind::mask) {
      out.push_back(ct::apply_mask(sinograms[i], ct::MaskSpec{spec.scheme, value, seed}));
    } else {
      const ct::DoseModel dose{spec.incident_flux, value, seed, spec.physical_scale};
      out.push_back(ct::apply_mask(ct::apply_dose(sinograms[i], dose), ct::MaskSpec{ct::MaskScheme::uniform, 0.0, 0}));
    }
  }
  return out;
}

SweepResult sweep(std::span<const ct::Sinogram> sinograms, std::span<const Image> truths,
                  std::span<const NamedMethod> methods, const SweepSpec& spec) {
  if (sinograms.size() != truths.size()) throw ContractError("sweep: sinogram and image counts differ");
  if (sinograms.empty()) throw ContractError("sweep: empty evaluation set");
  if (spec.conditions.empty()) throw ConfigError("sweep: no conditions given");
  SweepResult result;
  for (auto* t : {&result.ssim, &result.psnr}) {
    t->conditions = spec.conditions;
    for (const auto& m : methods) {
      t->methods.push_back(m.name);
      t->cells.emplace_back(spec.conditions.size(), std::numeric_limits<double>::quiet_NaN());
    }
  }
  std::vector<QualityReport> reports(methods.size() * spec.conditions.size());
  for (size_t c = 0; c < spec.conditions.size(); ++c) {
    const auto degraded = degrade_eval(sinograms, spec, c);
    std::vector<Image> previews;
    for (int e = 0; e < spec.examples && static_cast<size_t>(e) < degraded.size(); ++e) {
      previews.push_back(ct::fbp(degraded[static_cast<size_t>(e)]));
    }
    for (size_t m = 0; m < methods.size(); ++m) {
      QualityReport& rep = reports[m * spec.conditions.size() + c];
      rep.method = methods[m].name;
      rep.kind = spec.kind;
      rep.condition = spec.conditions[c];
      try {
        const auto recon = methods[m].run(degraded);
        if (recon.size() != truths.size()) throw ContractError("method returned the wrong number of images");
        for (size_t i = 0; i < recon.size(); ++i) {
          const auto s = score(recon[i], truths[i]);
          rep.ssim.push_back(s.ssim);
          rep.psnr.push_back(s.psnr);
        }
        for (size_t e = 0; e < previews.size(); ++e) {
          result.examples.push_back({rep.method, rep.condition, static_cast<int>(e), previews[e], recon[e], truths[e]});
        }
        result.ssim.cells[m][c] = rep.mean_ssim();
        result.psnr.cells[m][c] = rep.mean_psnr();
      } catch (const std::exception& ex) {
        rep.ssim.clear();
        rep.psnr.clear();
        rep.error = ex.what();
      }
    }
  }
  result.reports = std::move(reports);
  return result;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace tomotx::metrics
