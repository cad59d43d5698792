#include "tomotx/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tomotx/common/error.hpp"
#include "tomotx/common/hash.hpp"
#include "tomotx/common/rng.hpp"
#include "tomotx/common/tensor_file.hpp"
#include "tomotx/diffcore/adam.hpp"

namespace tomotx::train {

namespace fs = std::filesystem;
using model::SinogramTransformer;
using model::VisibleBatch;

namespace {

constexpr uint64_t kInitStream = 0x1417;
constexpr uint64_t kTrainStream = 0x7a41;
constexpr uint64_t kValStream = 0x5a11;
constexpr uint64_t kShuffleStream = 0x5f1e;

ct::MaskScheme scheme_for(Task task) { return task == Task::svtx ? ct::MaskScheme::uniform : ct::MaskScheme::random; }

bool image_task(Task task) { return task == Task::ctx; }

struct Split {
  size_t n_train = 0;
  size_t n_val = 0;
};

Split split_of(const phantom::Dataset& data, const TrainConfig& cfg) {
  const size_t n = data.train_sinograms.size();
  const auto n_val = static_cast<size_t>(std::max<long>(1, std::lround(cfg.val_fraction * static_cast<double>(n))));
  if (n < 2 || n_val >= n) {
    throw ConfigError("trainer: need at least 2 training samples for a train/validation split, have " +
                      std::to_string(n));
  }
  return {n - n_val, n_val};
}

ct::MaskedSinogram degrade(const ct::Sinogram& clean, const TrainConfig& cfg, double physical_scale, uint64_t seed) {
  if (cfg.task == Task::dntx) {
    ct::DoseModel dose{cfg.incident_flux, cfg.dose_fraction, seed, physical_scale};
    return ct::apply_mask(ct::apply_dose(clean, dose), ct::MaskSpec{ct::MaskScheme::uniform, 0.0, 0});
  }
  return ct::apply_mask(clean, ct::MaskSpec{scheme_for(cfg.task), cfg.mask_ratio, seed});
}

void append_target(std::vector<float>& out, const phantom::Dataset& data, size_t index, const TrainConfig& cfg,
                   int patch_side) {
  if (image_task(cfg.task)) {
    const auto patches = model::disassemble_patches(data.train_images[index], patch_side);
    out.insert(out.end(), patches.begin(), patches.end());
    return;
  }
  const auto inv = static_cast<float>(1.0 / data.manifest.sino_scale);
  for (float v : data.train_sinograms[index].values.values()) out.push_back(v * inv);
}

// Batched loss over `indices`; seeds[i] drives the degradation of indices[i].
diff::Tensor batch_loss(const SinogramTransformer& m, const phantom::Dataset& data, const TrainConfig& cfg,
                        std::span<const size_t> indices, std::span<const uint64_t> seeds) {
  std::vector<ct::MaskedSinogram> inputs;
  inputs.reserve(indices.size());
  std::vector<float> target;
  for (size_t i = 0; i < indices.size(); ++i) {
    inputs.push_back(degrade(data.train_sinograms[indices[i]], cfg, data.manifest.physical_scale, seeds[i]));
    append_target(target, data, indices[i], cfg, m.config().patch_side);
  }
  std::vector<const ct::MaskedSinogram*> ptrs;
  for (const auto& in : inputs) ptrs.push_back(&in);
  const auto pred = m.forward(VisibleBatch::from_masked(ptrs, data.manifest.sino_scale));
  return model::msm_loss(pred, diff::Tensor::from_data(pred.shape(), std::move(target)));
}

void check_compat(const phantom::Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& cfg) {
  cfg.validate();
  mcfg.validate();
  const auto& grid = data.manifest.grid;
  if (mcfg.token_dim != data.manifest.config.image_side) {
    throw ConfigError("trainer: token_dim " + std::to_string(mcfg.token_dim) + " does not match dataset side " +
                      std::to_string(data.manifest.config.image_side));
  }
  if (mcfg.max_angles < grid.n_angles) {
    throw ConfigError("trainer: max_angles " + std::to_string(mcfg.max_angles) + " is below the dataset's " +
                      std::to_string(grid.n_angles) + " angles");
  }
  const auto want = image_task(cfg.task) ? model::HeadKind::image_patch_decoder : model::HeadKind::sino_decoder;
  if (mcfg.head_kind != want) {
    throw ConfigError("trainer: task " + to_string(cfg.task) + " needs head_kind " + model::to_string(want));
  }
  if (data.train_sinograms.empty()) throw ConfigError("trainer: dataset has no training samples");
  (void)ct::kept_count(grid.n_angles, cfg.mask_ratio);
}

TrainResult fit(SinogramTransformer& m, const phantom::Dataset& data, const TrainConfig& cfg,
                const EpochCallback& on_epoch) {
  const Split split = split_of(data, cfg);
  auto params = m.trainable();
  auto adam = diff::make_adam_state(params, cfg.lr);

  TrainResult result;
  Checkpoint& best = result.checkpoint;
  best.model_config = m.config();
  best.train_config = cfg;
  best.dataset_hash = data.manifest.data_hash;
  best.sino_scale = data.manifest.sino_scale;
  best.physical_scale = data.manifest.physical_scale;
  best.best_val_loss = std::numeric_limits<double>::infinity();

  result.initial_val_loss = validation_loss(m, data, cfg);
  std::vector<size_t> order(split.n_train);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle(derive_seed({cfg.seed, kShuffleStream, static_cast<uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle.engine());

    double loss_sum = 0.0;
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), b + static_cast<size_t>(cfg.batch_size));
      const std::span<const size_t> idx(order.data() + b, stop - b);
      std::vector<uint64_t> seeds;
      for (size_t i : idx) seeds.push_back(derive_seed({cfg.seed, kTrainStream, static_cast<uint64_t>(epoch), i}));
      for (auto& p : params) p.zero_grad();
      const auto loss = batch_loss(m, data, cfg, idx, seeds);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      loss.backward();
      diff::adam_step(params, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = validation_loss(m, data, cfg);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      throw NumericError("trainer: non-finite loss at epoch " + std::to_string(epoch));
    }
    result.log.records.push_back(rec);
    if (rec.val_loss < best.best_val_loss) {
      best.best_val_loss = rec.val_loss;
      best.epoch = epoch;
      best.parameters = snapshot(m);
    }
    if (on_epoch) on_epoch(rec);
  }
  if (best.parameters.empty()) {
    best.parameters = snapshot(m);
    best.best_val_loss = validation_loss(m, data, cfg);
  }
  return result;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

std::string to_string(Task task) {
  switch (task) {
    case Task::msm: return "msm";
    case Task::svtx: return "svtx";
    case Task::dntx: return "dntx";
    case Task::ctx: return "ctx";
  }
  return "?";
}

Task task_from_string(const std::string& name) {
  for (Task t : {Task::msm, Task::svtx, Task::dntx, Task::ctx}) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("unknown task '" + name + "' (expected msm, svtx, dntx or ctx)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train config: epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("train config: mask_ratio must be in [0, 1)");
  if (task == Task::dntx && mask_ratio != 0.0) throw ConfigError("train config: dntx uses no masking");
  if (!(dose_fraction > 0.0 && dose_fraction <= 1.0)) {
    throw ConfigError("train config: dose_fraction must be in (0, 1]");
  }
  if (!(incident_flux > 0.0)) throw ConfigError("train config: incident_flux must be positive");
  if (!(val_fraction > 0.0 && val_fraction <= 0.5)) throw ConfigError("train config: val_fraction must be in (0, 0.5]");
  if (freeze_encoder && task != Task::ctx) throw ConfigError("train config: freeze_encoder applies to ctx only");
  if (task == Task::ctx && freeze_encoder && base_checkpoint.empty()) {
    throw ContractError("train config: ctx with a frozen encoder requires a base checkpoint (--base)");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"task", to_string(task)},          {"epochs", epochs},
          {"batch_size", batch_size},         {"lr", lr},
          {"mask_ratio", mask_ratio},         {"mask_scheme", scheme_for(task) == ct::MaskScheme::uniform ? "uniform" : "random"},
          {"dose_fraction", dose_fraction},   {"incident_flux", incident_flux},
          {"val_fraction", val_fraction},     {"seed", seed},
          {"freeze_encoder", freeze_encoder}, {"base_checkpoint", base_checkpoint},
          {"optimizer", "adam"}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.task = task_from_string(j.at("task").get<std::string>());
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<double>();
    c.mask_ratio = j.at("mask_ratio").get<double>();
    c.dose_fraction = j.at("dose_fraction").get<double>();
    c.incident_flux = j.at("incident_flux").get<double>();
    c.val_fraction = j.at("val_fraction").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.freeze_encoder = j.at("freeze_encoder").get<bool>();
    c.base_checkpoint = j.at("base_checkpoint").get<std::string>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("train config: ") + e.what());
  }
}

TrainConfig default_train_config(Task task) {
  TrainConfig c;
  c.task = task;
  c.mask_ratio = task == Task::dntx ? 0.0 : 0.8;
  c.freeze_encoder = task == Task::ctx;
  return c;
}

std::string ConvergenceLog::to_csv(bool include_wall) const {
  std::string out = include_wall ? "epoch,train_loss,val_loss,wall_seconds\n" : "epoch,train_loss,val_loss\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + fmt("%.10g", r.train_loss) + "," + fmt("%.10g", r.val_loss);
    if (include_wall) out += "," + fmt("%.3f", r.wall_seconds);
    out += "\n";
  }
  return out;
}

void ConvergenceLog::write_csv(const fs::path& path, bool include_wall) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_csv(include_wall);
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<NamedTensor> snapshot(const SinogramTransformer& model) {
  std::vector<NamedTensor> out;
  for (const auto& p : model.parameters().items()) {
    out.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  return out;
}

void Checkpoint::save(const fs::path& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::json names = nlohmann::json::array();
  for (const auto& p : parameters) {
    write_tensor(dir / (p.name + ".ttx"), p.shape, p.data);
    names.push_back(p.name);
  }
  const nlohmann::json j{{"format", "tomotx-checkpoint-1"},
                         {"model", model_config.to_json()},
                         {"train", train_config.to_json()},
                         {"epoch", epoch},
                         {"best_val_loss", best_val_loss},
                         {"dataset_hash", dataset_hash},
                         {"sino_scale", sino_scale},
                         {"physical_scale", physical_scale},
                         {"parameters", names}};
  std::ofstream f(dir / kManifest, std::ios::binary);
  if (!f) throw IoError("cannot write " + (dir / kManifest).string());
  f << j.dump(2) << "\n";
  if (!f) throw IoError("write failed: " + (dir / kManifest).string());
}

Checkpoint Checkpoint::load(const fs::path& dir) {
  const auto manifest = dir / kManifest;
  std::ifstream f(manifest, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("checkpoint manifest " + manifest.string() + ": " + e.what());
  }
  Checkpoint c;
  try {
    if (j.at("format").get<std::string>() != "tomotx-checkpoint-1") {
      throw IntegrityError("checkpoint manifest has an unknown format");
    }
    c.model_config = model::ModelConfig::from_json(j.at("model"));
    c.train_config = TrainConfig::from_json(j.at("train"));
    c.epoch = j.at("epoch").get<int>();
    c.best_val_loss = j.at("best_val_loss").get<double>();
    c.dataset_hash = j.at("dataset_hash").get<std::string>();
    c.sino_scale = j.at("sino_scale").get<double>();
    c.physical_scale = j.at("physical_scale").get<double>();
    for (const auto& name : j.at("parameters")) {
      const auto n = name.get<std::string>();
      auto t = read_tensor(dir / (n + ".ttx"));
      c.parameters.push_back({n, std::move(t.shape), std::move(t.data)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("checkpoint manifest " + manifest.string() + ": " + e.what());
  }
  // Shapes must match what the recorded configuration builds.
  const SinogramTransformer probe(c.model_config, 0);
  const auto& items = probe.parameters().items();
  if (items.size() != c.parameters.size()) throw IntegrityError("checkpoint parameter count does not match its model");
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].name != c.parameters[i].name || items[i].tensor.shape() != c.parameters[i].shape) {
      throw IntegrityError("checkpoint parameter '" + c.parameters[i].name + "' does not match its model");
    }
  }
  return c;
}

SinogramTransformer Checkpoint::instantiate() const {
  SinogramTransformer m(model_config, 0);
  std::vector<std::pair<std::string, std::vector<float>>> values;
  for (const auto& p : parameters) values.emplace_back(p.name, p.data);
  m.load(values);
  return m;
}

std::string Checkpoint::encoder_hash() const {
  std::vector<const NamedTensor*> enc;
  for (const auto& p : parameters) {
    if (p.name.starts_with(SinogramTransformer::kEncoderPrefix)) enc.push_back(&p);
  }
  std::ranges::sort(enc, {}, &NamedTensor::name);
  Sha256 h;
  for (const auto* p : enc) {
    h.update(p->name);
    h.update(std::as_bytes(std::span(p->data)));
  }
  return h.hex_digest();
}

double validation_loss(const SinogramTransformer& m, const phantom::Dataset& data, const TrainConfig& cfg) {
  const Split split = split_of(data, cfg);
  double sum = 0.0;
  for (size_t b = 0; b < split.n_val; b += static_cast<size_t>(cfg.batch_size)) {
    const size_t stop = std::min(split.n_val, b + static_cast<size_t>(cfg.batch_size));
    std::vector<size_t> idx;
    std::vector<uint64_t> seeds;
    for (size_t i = b; i < stop; ++i) {
      idx.push_back(split.n_train + i);
      seeds.push_back(derive_seed({cfg.seed, kValStream, i}));
    }
    sum += static_cast<double>(batch_loss(m, data, cfg, idx, seeds).item()) * static_cast<double>(idx.size());
  }
  return sum / static_cast<double>(split.n_val);
}

TrainResult pretrain_msm(const phantom::Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                         const EpochCallback& on_epoch) {
  if (cfg.task != Task::msm) throw ConfigError("pretrain_msm: task must be msm");
  check_compat(data, mcfg, cfg);
  SinogramTransformer m(mcfg, derive_seed({cfg.seed, kInitStream}));
  return fit(m, data, cfg, on_epoch);
}

TrainResult train_svtx(const phantom::Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  if (cfg.task != Task::svtx) throw ConfigError("train_svtx: task must be svtx");
  if (!cfg.base_checkpoint.empty()) throw ConfigError("train_svtx: trains from scratch; no base checkpoint");
  check_compat(data, mcfg, cfg);
  SinogramTransformer m(mcfg, derive_seed({cfg.seed, kInitStream}));
  return fit(m, data, cfg, on_epoch);
}

TrainResult train_dntx(const phantom::Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  if (cfg.task != Task::dntx) throw ConfigError("train_dntx: task must be dntx");
  check_compat(data, mcfg, cfg);
  SinogramTransformer m(mcfg, derive_seed({cfg.seed, kInitStream}));
  return fit(m, data, cfg, on_epoch);
}

TrainResult finetune_ctx(const phantom::Dataset& data, const std::optional<Checkpoint>& base,
                         const model::ModelConfig& mcfg, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (cfg.task != Task::ctx) throw ConfigError("finetune_ctx: task must be ctx");
  if (cfg.freeze_encoder && !base) throw ContractError("finetune_ctx: a frozen encoder needs a base checkpoint");
  check_compat(data, mcfg, cfg);
  SinogramTransformer m(mcfg, derive_seed({cfg.seed, kInitStream}));
  if (base) {
    if (base->dataset_hash != data.manifest.data_hash) {
      throw IntegrityError("finetune_ctx: base checkpoint was trained on a different dataset");
    }
    const auto& b = base->model_config;
    if (b.token_dim != mcfg.token_dim || b.d_model != mcfg.d_model || b.n_heads != mcfg.n_heads ||
        b.n_enc_layers != mcfg.n_enc_layers || b.d_ff != mcfg.d_ff || b.max_angles != mcfg.max_angles) {
      throw ConfigError("finetune_ctx: base encoder shape differs from the requested model");
    }
    std::vector<std::pair<std::string, std::vector<float>>> enc;
    for (const auto& p : base->parameters) {
      if (p.name.starts_with(SinogramTransformer::kEncoderPrefix)) enc.emplace_back(p.name, p.data);
    }
    m.load(enc);
  }
  m.freeze_encoder(cfg.freeze_encoder);
  return fit(m, data, cfg, on_epoch);
}

TrainResult run_training(const phantom::Dataset& data, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                         const std::optional<Checkpoint>& base, const EpochCallback& on_epoch) {
  switch (cfg.task) {
    case Task::msm: return pretrain_msm(data, mcfg, cfg, on_epoch);
    case Task::svtx: return train_svtx(data, mcfg, cfg, on_epoch);
    case Task::dntx: return train_dntx(data, mcfg, cfg, on_epoch);
    case Task::ctx: return finetune_ctx(data, base, mcfg, cfg, on_epoch);
  }
  throw ConfigError("unknown task");
}

std::string ConvergenceComparison::report() const {
  std::ostringstream out;
  out << "mode,epochs,final_val_loss,best_val_loss,mean_epoch_seconds,crossing_epoch\n";
  auto line = [&](const char* mode, const TrainResult& r, const std::string& crossing) {
    double wall = 0.0;
    for (const auto& e : r.log.records) wall += e.wall_seconds;
    const auto n = r.log.records.size();
    out << mode << "," << n << "," << fmt("%.10g", n ? r.log.records.back().val_loss : 0.0) << ","
        << fmt("%.10g", r.checkpoint.best_val_loss) << "," << fmt("%.3f", n ? wall / static_cast<double>(n) : 0.0)
        << "," << crossing << "\n";
  };
  line("finetune", finetune, crossing_epoch ? std::to_string(*crossing_epoch) : "none");
  line("retrain", retrain, "");
  return out.str();
}

ConvergenceComparison compare_convergence(const phantom::Dataset& data, const Checkpoint& base,
                                          const TrainConfig& cfg, const EpochCallback& on_epoch) {
  model::ModelConfig mcfg = base.model_config;
  mcfg.head_kind = model::HeadKind::image_patch_decoder;
  TrainConfig ft = cfg;
  ft.task = Task::ctx;
  ft.freeze_encoder = true;
  if (ft.base_checkpoint.empty()) ft.base_checkpoint = "(in-memory)";
  TrainConfig rt = ft;
  rt.freeze_encoder = false;
  rt.base_checkpoint.clear();

  ConvergenceComparison c;
  c.finetune = finetune_ctx(data, base, mcfg, ft, on_epoch);
  c.retrain = finetune_ctx(data, std::nullopt, mcfg, rt, on_epoch);
  if (!c.retrain.log.records.empty()) {
    c.retrain_final_val = c.retrain.log.records.back().val_loss;
    for (const auto& r : c.finetune.log.records) {
      if (r.val_loss <= c.retrain_final_val) {
        c.crossing_epoch = r.epoch;
        break;
      }
    }
  }
  return c;
}

}  // namespace tomotx::train
