#include "tomotx/phantom/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "tomotx/common/error.hpp"
#include "tomotx/common/hash.hpp"
#include "tomotx/common/tensor_file.hpp"

namespace tomotx::phantom {
namespace fs = std::filesystem;

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json j;
  j["format"] = "tomotx-dataset-1";
  j["phantom"] = {{"image_side", config.image_side},       {"shapes_min", config.shapes_min},
                  {"shapes_max", config.shapes_max},       {"intensity_low", config.intensity_low},
                  {"intensity_high", config.intensity_high}, {"size_low", config.size_low},
                  {"size_high", config.size_high},         {"seed", config.seed}};
  j["angles"] = {{"n_angles", grid.n_angles}, {"start_deg", grid.start_deg}, {"end_deg", grid.end_deg}};
  j["n_train"] = n_train;
  j["n_eval"] = n_eval;
  j["sino_scale"] = sino_scale;
  j["physical_scale"] = physical_scale;
  j["data_hash"] = data_hash;
  return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    const auto& p = j.at("phantom");
    m.config.image_side = p.at("image_side").get<int>();
    m.config.shapes_min = p.at("shapes_min").get<int>();
    m.config.shapes_max = p.at("shapes_max").get<int>();
    m.config.intensity_low = p.at("intensity_low").get<double>();
    m.config.intensity_high = p.at("intensity_high").get<double>();
    m.config.size_low = p.at("size_low").get<double>();
    m.config.size_high = p.at("size_high").get<double>();
    m.config.seed = p.at("seed").get<uint64_t>();
    const auto& a = j.at("angles");
    m.grid.n_angles = a.at("n_angles").get<int>();
    m.grid.start_deg = a.at("start_deg").get<double>();
    m.grid.end_deg = a.at("end_deg").get<double>();
    m.n_train = j.at("n_train").get<int64_t>();
    m.n_eval = j.at("n_eval").get<int64_t>();
    m.sino_scale = j.at("sino_scale").get<double>();
    m.physical_scale = j.at("physical_scale").get<double>();
    m.data_hash = j.at("data_hash").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("dataset manifest: ") + e.what());
  }
}

void validate_request(const PhantomConfig& config, const ct::AngleGrid& grid, int64_t n_train, int64_t n_eval) {
  config.validate();
  grid.validate();
  if (n_train < 1) throw ConfigError("dataset: n_train must be >= 1");
  if (n_eval < 1) throw ConfigError("dataset: n_eval must be >= 1");
}

std::string hash_dataset_files(const fs::path& dir) {
  Sha256 h;
  for (const char* name : {DatasetFiles::kTrainImages, DatasetFiles::kTrainSinograms, DatasetFiles::kEvalImages,
                           DatasetFiles::kEvalSinograms}) {
    h.update(std::string_view(name));
    h.update_file(dir / name);
  }
  return h.hex_digest();
}

DatasetManifest generate_dataset(const PhantomConfig& config, const ct::AngleGrid& grid, int64_t n_train,
                                 int64_t n_eval, const fs::path& output_dir) {
  validate_request(config, grid, n_train, n_eval);
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec) throw IoError("cannot create " + output_dir.string() + ": " + ec.message());

  const int64_t side = config.image_side;
  double max_abs = 0.0;
  auto write_split = [&](const char* image_file, const char* sino_file, int64_t first, int64_t count,
                         bool track_scale) {
    TensorWriter images(output_dir / image_file, {count, side, side});
    TensorWriter sinos(output_dir / sino_file, {count, grid.n_angles, side});
    for (int64_t i = 0; i < count; ++i) {
      const auto img = generate_phantom(config, static_cast<uint64_t>(first + i));
      const auto sino = ct::radon(img, grid);
      if (track_scale) {
        for (float v : sino.values.values()) max_abs = std::max(max_abs, static_cast<double>(std::abs(v)));
      }
      images.append(img.values());
      sinos.append(sino.values.values());
    }
    images.close();
    sinos.close();
  };
  write_split(DatasetFiles::kTrainImages, DatasetFiles::kTrainSinograms, 0, n_train, true);
  write_split(DatasetFiles::kEvalImages, DatasetFiles::kEvalSinograms, n_train, n_eval, false);

  DatasetManifest m;
  m.config = config;
  m.grid = grid;
  m.n_train = n_train;
  m.n_eval = n_eval;
  m.sino_scale = max_abs > 0.0 ? max_abs : 1.0;
  m.physical_scale = kMaxAttenuation / m.sino_scale;
  m.data_hash = hash_dataset_files(output_dir);

  std::ofstream out(output_dir / DatasetFiles::kManifest, std::ios::trunc);
  if (!out) throw IoError("cannot write dataset manifest in " + output_dir.string());
  out << m.to_json().dump(2) << '\n';
  if (!out) throw IoError("write failed: dataset manifest");
  return m;
}

namespace {

std::vector<Image> split_images(const TensorData& t, const fs::path& path) {
  if (t.shape.size() != 3) throw IoError(path.string() + ": expected a rank-3 tensor");
  const auto n = t.shape[0];
  const auto rows = static_cast<int>(t.shape[1]);
  const auto cols = static_cast<int>(t.shape[2]);
  const auto per = static_cast<size_t>(rows) * cols;
  std::vector<Image> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    auto first = t.data.begin() + static_cast<std::ptrdiff_t>(i * per);
    out.emplace_back(rows, cols, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(per)));
  }
  return out;
}

}  // namespace

Dataset load_dataset(const fs::path& dir, bool verify_hash) {
  const auto manifest_path = dir / DatasetFiles::kManifest;
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  ds.manifest = DatasetManifest::from_json(j);
  if (verify_hash) {
    const auto actual = hash_dataset_files(dir);
    if (actual != ds.manifest.data_hash) {
      throw IntegrityError("dataset " + dir.string() + ": data hash " + actual + " does not match manifest " +
                           ds.manifest.data_hash);
    }
  }
  auto load_split = [&](const char* image_file, const char* sino_file, int64_t expected,
                        std::vector<Image>& images, std::vector<ct::Sinogram>& sinos) {
    const auto img_path = dir / image_file;
    const auto sino_path = dir / sino_file;
    images = split_images(read_tensor(img_path), img_path);
    auto rows = split_images(read_tensor(sino_path), sino_path);
    if (static_cast<int64_t>(images.size()) != expected || static_cast<int64_t>(rows.size()) != expected) {
      throw IntegrityError("dataset " + dir.string() + ": record count disagrees with manifest");
    }
    sinos.clear();
    sinos.reserve(rows.size());
    for (auto& r : rows) {
      if (r.rows() != ds.manifest.grid.n_angles) throw IntegrityError("dataset: sinogram angle count mismatch");
      sinos.push_back(ct::Sinogram{ds.manifest.grid, std::move(r)});
    }
  };
  load_split(DatasetFiles::kTrainImages, DatasetFiles::kTrainSinograms, ds.manifest.n_train, ds.train_images,
             ds.train_sinograms);
  load_split(DatasetFiles::kEvalImages, DatasetFiles::kEvalSinograms, ds.manifest.n_eval, ds.eval_images,
             ds.eval_sinograms);
  return ds;
}

}  // namespace tomotx::phantom
