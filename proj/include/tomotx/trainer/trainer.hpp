#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tomotx/diffcore/tensor.hpp"
#include "tomotx/model/msm.hpp"
#include "tomotx/phantom/dataset.hpp"

namespace tomotx::train {

enum class Task { msm, svtx, dntx, ctx };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct TrainConfig {
  Task task = Task::msm;
  int epochs = 40;
  int batch_size = 16;
  double lr = 1e-3;
  // Fraction of angles removed from each input; 0 for dntx.
  double mask_ratio = 0.8;
  // Relative dose of the dntx training inputs.
  double dose_fraction = 1.0 / 200.0;
  double incident_flux = 1e4;
  // Tail of the training split held out for validation.
  double val_fraction = 0.1;
  uint64_t seed = 0;
  bool freeze_encoder = false;
  std::string base_checkpoint;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

// Task defaults: masking 0.8 (random for msm/ctx, uniform for svtx), no
// masking for dntx, frozen encoder for ctx.
TrainConfig default_train_config(Task task);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_seconds = 0.0;
};

struct ConvergenceLog {
  std::vector<EpochRecord> records;

  // Header epoch,train_loss,val_loss[,wall_seconds]. Losses are printed
  // with round-trip precision.
  std::string to_csv(bool include_wall = true) const;
  void write_csv(const std::filesystem::path& path, bool include_wall = true) const;
};

struct NamedTensor {
  std::string name;
  diff::Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  model::ModelConfig model_config;
  TrainConfig train_config;
  int epoch = 0;
  double best_val_loss = 0.0;
  std::string dataset_hash;
  double sino_scale = 1.0;
  double physical_scale = 1.0;
  std::vector<NamedTensor> parameters;

  static constexpr const char* kManifest = "checkpoint.json";

  // Directory of one TensorContainer per parameter plus a JSON manifest.
  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);

  model::SinogramTransformer instantiate() const;
  // SHA-256 over the encoder parameters, in name order.
  std::string encoder_hash() const;
};

std::vector<NamedTensor> snapshot(const model::SinogramTransformer& model);

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainResult {
  Checkpoint checkpoint;  // best validation epoch
  ConvergenceLog log;
  double initial_val_loss = 0.0;  // before the first update
};

// Mean validation loss of `model` under `cfg`'s input degradation.
double validation_loss(const model::SinogramTransformer& model, const phantom::Dataset& data,
                       const TrainConfig& cfg);

TrainResult pretrain_msm(const phantom::Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {});
TrainResult train_svtx(const phantom::Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {});
TrainResult train_dntx(const phantom::Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {});
// With a base, the encoder is copied from it and the decoder is new. Without
// one (freeze disabled) everything is trained from scratch.
TrainResult finetune_ctx(const phantom::Dataset& data, const std::optional<Checkpoint>& base,
                         const model::ModelConfig& mcfg, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Dispatch on cfg.task.
TrainResult run_training(const phantom::Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                         const std::optional<Checkpoint>& base = std::nullopt, const EpochCallback& on_epoch = {});

struct ConvergenceComparison {
  TrainResult finetune;
  TrainResult retrain;
  double retrain_final_val = 0.0;
  // First 1-based fine-tune epoch whose validation loss is at or below the
  // retrain run's final validation loss.
  std::optional<int> crossing_epoch;

  std::string report() const;
};

ConvergenceComparison compare_convergence(const phantom::Dataset& data, const Checkpoint& base,
                                          const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace tomotx::train
