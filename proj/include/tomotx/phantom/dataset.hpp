#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tomotx/common/image.hpp"
#include "tomotx/ctgeom/ctgeom.hpp"
#include "tomotx/phantom/phantom.hpp"

namespace tomotx::phantom {

// Attenuation assigned to the largest training line integral; keeps the
// minimum transmission exp(-p) at 1% on the training set.
inline constexpr double kMaxAttenuation = 4.605170185988091;  // ln(100)

struct DatasetManifest {
  PhantomConfig config;
  ct::AngleGrid grid;
  int64_t n_train = 0;
  int64_t n_eval = 0;
  // Max |p| over the training sinograms; models see sinograms divided by it.
  double sino_scale = 1.0;
  // Converts sinogram units to Beer's-law attenuation.
  double physical_scale = 1.0;
  // SHA-256 over the four data files in a fixed order.
  std::string data_hash;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct DatasetFiles {
  static constexpr const char* kManifest = "dataset.json";
  static constexpr const char* kTrainImages = "train_images.ttx";
  static constexpr const char* kTrainSinograms = "train_sinograms.ttx";
  static constexpr const char* kEvalImages = "eval_images.ttx";
  static constexpr const char* kEvalSinograms = "eval_sinograms.ttx";
};

// Validates a dataset request without generating anything.
void validate_request(const PhantomConfig& config, const ct::AngleGrid& grid, int64_t n_train, int64_t n_eval);

// Writes phantoms and their full-view sinograms. Training samples use phantom
// indices [0, n_train), evaluation samples [n_train, n_train + n_eval).
DatasetManifest generate_dataset(const PhantomConfig& config, const ct::AngleGrid& grid, int64_t n_train,
                                 int64_t n_eval, const std::filesystem::path& output_dir);

struct Dataset {
  DatasetManifest manifest;
  std::vector<Image> train_images;
  std::vector<ct::Sinogram> train_sinograms;
  std::vector<Image> eval_images;
  std::vector<ct::Sinogram> eval_sinograms;
};

// Loads a dataset directory; verifies the stored hash unless disabled.
Dataset load_dataset(const std::filesystem::path& dir, bool verify_hash = true);

std::string hash_dataset_files(const std::filesystem::path& dir);

}  // namespace tomotx::phantom
