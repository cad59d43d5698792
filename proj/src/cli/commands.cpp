#include "tomotx/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tomotx/common/error.hpp"
#include "tomotx/common/rng.hpp"
#include "tomotx/common/tensor_file.hpp"
#include "tomotx/metrics/metrics.hpp"
#include "tomotx/model/inference.hpp"
#include "tomotx/phantom/dataset.hpp"
#include "tomotx/trainer/trainer.hpp"

namespace tomotx::cli {

using nlohmann::json;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One run_manifest.json per artifact-producing command.
class RunManifest {
 public:
  RunManifest(std::string command, json config) : command_(std::move(command)), config_(std::move(config)) {
    start_ = utc_now();
  }
  void set_dataset_hash(std::string h) { dataset_hash_ = std::move(h); }
  void add_output(const fs::path& p) { outputs_.push_back(p.filename().string()); }
  void write(const fs::path& dir) {
    std::ranges::sort(outputs_);
    const json j{{"command", command_},       {"config", config_},   {"dataset_hash", dataset_hash_},
                 {"code_version", kVersion}, {"started_at", start_}, {"finished_at", utc_now()},
                 {"outputs", outputs_}};
    metrics::write_text(dir / "run_manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  json config_;
  std::string dataset_hash_;
  std::string start_;
  std::vector<std::string> outputs_;
};

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string label(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

ct::MaskScheme scheme_from(const std::string& s) {
  if (s == "random") return ct::MaskScheme::random;
  if (s == "uniform") return ct::MaskScheme::uniform;
  throw ConfigError("unknown mask scheme '" + s + "' (expected random or uniform)");
}

Image side_by_side(std::span<const Image> panels) {
  int rows = 0, cols = 0;
  for (const auto& p : panels) {
    rows = std::max(rows, p.rows());
    cols += p.cols();
  }
  Image out(rows, cols);
  int off = 0;
  for (const auto& p : panels) {
    const auto [lo, hi] = std::ranges::minmax(p.values());
    const double range = hi > lo ? static_cast<double>(hi) - lo : 1.0;
    for (int r = 0; r < p.rows(); ++r) {
      for (int c = 0; c < p.cols(); ++c) out(r, off + c) = static_cast<float>((p(r, c) - lo) / range);
    }
    off += p.cols();
  }
  return out;
}

std::vector<ct::Sinogram> read_sinograms(const fs::path& path) {
  const auto t = read_tensor(path);
  int64_t n = 1, a = 0, b = 0;
  if (t.shape.size() == 2) {
    a = t.shape[0];
    b = t.shape[1];
  } else if (t.shape.size() == 3) {
    n = t.shape[0];
    a = t.shape[1];
    b = t.shape[2];
  } else {
    throw ShapeError("infer: input must be [angles, bins] or [n, angles, bins], got " + format_shape(t.shape));
  }
  std::vector<ct::Sinogram> out;
  const auto per = static_cast<size_t>(a * b);
  for (int64_t i = 0; i < n; ++i) {
    std::vector<float> v(t.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                         t.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    out.push_back({ct::AngleGrid{static_cast<int>(a), 0.0, 180.0}, Image(static_cast<int>(a), static_cast<int>(b), std::move(v))});
  }
  return out;
}

template <typename T, typename Get>
void write_stack(const fs::path& path, std::span<const T> items, Get get) {
  const Image& first = get(items[0]);
  TensorWriter w(path, {static_cast<int64_t>(items.size()), first.rows(), first.cols()});
  for (const auto& it : items) w.append(get(it).values());
  w.close();
}

// Rows that are exactly zero everywhere are taken as not measured.
ct::MaskedSinogram mask_from_zero_rows(const ct::Sinogram& s) {
  ct::MaskedSinogram m{s, {}};
  for (int a = 0; a < s.n_angles(); ++a) {
    if (std::ranges::any_of(s.row(a), [](float v) { return v != 0.0f; })) m.kept_indices.push_back(a);
  }
  if (m.kept_indices.empty()) throw ContractError("infer: input sinogram has no non-zero rows");
  return m;
}

std::string method_for(train::Task task) {
  return task == train::Task::ctx ? "ctx" : train::to_string(task) + "+iradon";
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) throw ConfigError("--values: '" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--values must list at least one condition");
  return out;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  if (dynamic_cast<const Error*>(&e)) return kUsage;
  return kUnexpected;
}

void write_pgm(const fs::path& path, const Image& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  const auto [lo, hi] = std::ranges::minmax(image.values());
  const double range = hi > lo ? static_cast<double>(hi) - lo : 0.0;
  std::vector<unsigned char> bytes(image.size());
  for (size_t i = 0; i < image.size(); ++i) {
    const double v = range > 0.0 ? (image.values()[i] - lo) / range : 0.0;
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Image read_pgm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::string magic;
  int cols = 0, rows = 0, maxval = 0;
  f >> magic >> cols >> rows >> maxval;
  f.get();
  if (magic != "P5" || cols <= 0 || rows <= 0 || maxval != 255) throw IntegrityError("not an 8-bit P5 PGM: " + path.string());
  std::vector<unsigned char> bytes(static_cast<size_t>(rows) * cols);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw IntegrityError("truncated PGM: " + path.string());
  Image img(rows, cols);
  for (size_t i = 0; i < bytes.size(); ++i) img.values()[i] = bytes[i] / 255.0f;
  return img;
}

void gen_data(const GenDataOptions& opt) {
  phantom::PhantomConfig pc;
  pc.image_side = opt.side;
  pc.seed = opt.seed;
  const ct::AngleGrid grid{opt.angles, 0.0, 180.0};
  phantom::validate_request(pc, grid, opt.n_train, opt.n_eval);
  RunManifest rm("gen-data", {{"side", opt.side},
                              {"angles", opt.angles},
                              {"n_train", opt.n_train},
                              {"n_eval", opt.n_eval},
                              {"seed", opt.seed},
                              {"out", opt.out.string()}});
  make_dir(opt.out);
  const auto manifest = phantom::generate_dataset(pc, grid, opt.n_train, opt.n_eval, opt.out);
  rm.set_dataset_hash(manifest.data_hash);
  for (const char* f : {phantom::DatasetFiles::kManifest, phantom::DatasetFiles::kTrainImages,
                        phantom::DatasetFiles::kTrainSinograms, phantom::DatasetFiles::kEvalImages,
                        phantom::DatasetFiles::kEvalSinograms}) {
    rm.add_output(f);
  }
  rm.write(opt.out);
}

void train(const TrainOptions& opt) {
  auto cfg = train::default_train_config(train::task_from_string(opt.task));
  cfg.epochs = opt.epochs;
  cfg.batch_size = opt.batch_size;
  cfg.lr = opt.lr;
  cfg.seed = opt.seed;
  if (opt.mask_ratio) cfg.mask_ratio = *opt.mask_ratio;
  if (opt.dose) {
    if (cfg.task != train::Task::dntx) throw ConfigError("--dose applies to --task dntx only");
    cfg.dose_fraction = *opt.dose;
  }
  if (cfg.task == train::Task::ctx) {
    cfg.freeze_encoder = !opt.no_freeze;
    if (opt.base) cfg.base_checkpoint = opt.base->string();
  } else if (opt.base) {
    throw ConfigError("--base applies to --task ctx only");
  }
  if (opt.compare && cfg.task != train::Task::ctx) throw ConfigError("--compare applies to --task ctx only");
  if (opt.compare && !opt.base) throw ContractError("--compare needs --base");
  cfg.validate();

  const auto data = phantom::load_dataset(opt.data);
  std::optional<train::Checkpoint> base;
  if (opt.base) base = train::Checkpoint::load(*opt.base);

  model::ModelConfig mcfg;
  if (base) {
    mcfg = base->model_config;
  } else {
    mcfg.token_dim = data.manifest.config.image_side;
    mcfg.max_angles = data.manifest.grid.n_angles;
    mcfg.d_model = opt.d_model;
    mcfg.n_heads = opt.n_heads;
    mcfg.n_enc_layers = opt.enc_layers;
    mcfg.n_dec_layers = opt.dec_layers;
    mcfg.d_ff = opt.d_ff;
  }
  mcfg.patch_side = opt.patch_side;
  mcfg.head_kind = cfg.task == train::Task::ctx ? model::HeadKind::image_patch_decoder
                                                : model::HeadKind::sino_decoder;

  json resolved{{"train", cfg.to_json()}, {"model", mcfg.to_json()}, {"data", opt.data.string()},
                {"compare", opt.compare}, {"out", opt.out.string()}};
  RunManifest rm("train", resolved);
  rm.set_dataset_hash(data.manifest.data_hash);
  make_dir(opt.out);

  const std::string tag = train::to_string(cfg.task);
  auto progress = [&](const train::EpochRecord& r) {
    if (opt.quiet) return;
    std::cerr << tag << " epoch " << r.epoch << "/" << cfg.epochs << "  train " << r.train_loss << "  val "
              << r.val_loss << "  (" << std::lround(r.wall_seconds * 10) / 10.0 << " s)\n";
  };

  train::TrainResult result;
  if (opt.compare) {
    auto cmp = train::compare_convergence(data, *base, cfg, progress);
    cmp.retrain.log.write_csv(opt.out / "convergence_retrain.csv");
    metrics::write_text(opt.out / "comparison.csv", cmp.report());
    rm.add_output("convergence_retrain.csv");
    rm.add_output("comparison.csv");
    result = std::move(cmp.finetune);
  } else {
    result = train::run_training(data, mcfg, cfg, base, progress);
  }
  result.checkpoint.save(opt.out);
  result.log.write_csv(opt.out / "convergence.csv");
  rm.add_output(train::Checkpoint::kManifest);
  rm.add_output("convergence.csv");
  rm.write(opt.out);
}

void infer(const InferOptions& opt) {
  const auto ckpt = train::Checkpoint::load(opt.ckpt);
  const auto task = ckpt.train_config.task;
  if (!opt.task.empty() && train::task_from_string(opt.task) != task) {
    throw ContractError("infer: --task " + opt.task + " does not match the checkpoint's task " +
                        train::to_string(task));
  }
  const auto model = ckpt.instantiate();
  auto sinos = read_sinograms(opt.input);
  if (sinos[0].n_bins() != ckpt.model_config.token_dim) {
    throw ShapeError("infer: input has " + std::to_string(sinos[0].n_bins()) + " bins, model expects " +
                     std::to_string(ckpt.model_config.token_dim));
  }
  if (sinos[0].n_angles() > ckpt.model_config.max_angles) {
    throw ContractError("infer: input has more angles than the model supports");
  }
  if (opt.dose) {
    for (size_t i = 0; i < sinos.size(); ++i) {
      sinos[i] = ct::apply_dose(sinos[i], ct::DoseModel{ckpt.train_config.incident_flux, *opt.dose,
                                                        derive_seed({opt.seed, 0xd05e, i}), ckpt.physical_scale});
    }
  }
  std::vector<ct::MaskedSinogram> masked;
  for (size_t i = 0; i < sinos.size(); ++i) {
    if (opt.mask_ratio) {
      masked.push_back(ct::apply_mask(sinos[i], ct::MaskSpec{scheme_from(opt.scheme), *opt.mask_ratio,
                                                             derive_seed({opt.seed, i})}));
    } else if (task == train::Task::dntx) {
      masked.push_back(ct::apply_mask(sinos[i], ct::MaskSpec{ct::MaskScheme::uniform, 0.0, 0}));
    } else {
      masked.push_back(mask_from_zero_rows(sinos[i]));
    }
  }

  RunManifest rm("infer", {{"task", train::to_string(task)},
                           {"ckpt", opt.ckpt.string()},
                           {"input", opt.input.string()},
                           {"mask_ratio", opt.mask_ratio ? json(*opt.mask_ratio) : json(nullptr)},
                           {"scheme", opt.scheme},
                           {"dose", opt.dose ? json(*opt.dose) : json(nullptr)},
                           {"seed", opt.seed},
                           {"out", opt.out.string()}});
  rm.set_dataset_hash(ckpt.dataset_hash);
  make_dir(opt.out);

  std::vector<Image> images;
  if (task == train::Task::ctx) {
    images = model::reconstruct_direct(model, masked, ckpt.sino_scale);
  } else {
    const auto pred = model::inpaint(model, masked, ckpt.sino_scale, task != train::Task::dntx);
    write_stack(opt.out / "prediction.ttx", std::span<const ct::Sinogram>(pred), [](const ct::Sinogram& s) -> const Image& { return s.values; });
    rm.add_output("prediction.ttx");
    for (size_t i = 0; i < pred.size(); ++i) {
      const auto name = "prediction_" + std::to_string(i) + ".pgm";
      write_pgm(opt.out / name, pred[i].values);
      rm.add_output(name);
      images.push_back(ct::fbp(pred[i]));
    }
  }
  write_stack(opt.out / "image.ttx", std::span<const Image>(images), [](const Image& im) -> const Image& { return im; });
  rm.add_output("image.ttx");
  for (size_t i = 0; i < images.size(); ++i) {
    const auto name = "image_" + std::to_string(i) + ".pgm";
    write_pgm(opt.out / name, images[i]);
    rm.add_output(name);
  }

  if (opt.attention_layer) {
    const int layer = *opt.attention_layer - 1;
    if (layer < 0 || layer >= ckpt.model_config.n_dec_layers) {
      throw ContractError("--export-attention: layer must be in 1.." + std::to_string(ckpt.model_config.n_dec_layers));
    }
    std::vector<const ct::MaskedSinogram*> first{&masked[0]};
    const auto batch = model::VisibleBatch::from_masked(first, ckpt.sino_scale);
    std::vector<int> heads;
    if (opt.attention_head) {
      heads.push_back(*opt.attention_head);
    } else {
      for (int h = 0; h < ckpt.model_config.n_heads; ++h) heads.push_back(h);
    }
    for (int h : heads) {
      const auto map = model::extract_attention(model, batch, layer, h);
      Image img(map.rows, map.cols, map.weights);
      const auto stem = "attention_L" + std::to_string(layer + 1) + "_H" + std::to_string(h);
      write_pgm(opt.out / (stem + ".pgm"), img);
      write_tensor(opt.out / (stem + ".ttx"), std::vector<int64_t>{map.rows, map.cols}, map.weights);
      rm.add_output(stem + ".pgm");
      rm.add_output(stem + ".ttx");
    }
  }
  rm.write(opt.out);
}

void eval(const EvalOptions& opt) {
  if (opt.values.empty()) throw ConfigError("eval: --values must list at least one condition");
  metrics::SweepSpec spec;
  if (opt.sweep == "mask") {
    spec.kind = metrics::SweepKind::mask;
    for (double v : opt.values) {
      if (!(v >= 0.0 && v < 1.0)) throw ConfigError("eval: mask ratios must be in [0, 1), got " + label(v));
    }
  } else if (opt.sweep == "dose") {
    spec.kind = metrics::SweepKind::dose;
    for (double v : opt.values) {
      if (!(v > 0.0 && v <= 1.0)) throw ConfigError("eval: dose fractions must be in (0, 1], got " + label(v));
    }
  } else {
    throw ConfigError("eval: --sweep must be mask or dose");
  }
  spec.conditions = opt.values;
  spec.scheme = scheme_from(opt.scheme);
  spec.seed = opt.seed;
  spec.examples = std::max(0, opt.triptychs);

  const auto data = phantom::load_dataset(opt.data);
  spec.physical_scale = data.manifest.physical_scale;

  std::map<std::string, std::pair<train::Checkpoint, model::SinogramTransformer>> models;
  for (const auto& path : opt.ckpts) {
    auto ck = train::Checkpoint::load(path);
    if (ck.dataset_hash != data.manifest.data_hash && !opt.allow_dataset_mismatch) {
      throw IntegrityError("eval: checkpoint " + path.string() +
                           " was trained on a different dataset (pass --allow-dataset-mismatch to override)");
    }
    const auto name = method_for(ck.train_config.task);
    if (models.contains(name)) throw ConfigError("eval: two checkpoints provide method " + name);
    auto m = ck.instantiate();
    models.emplace(name, std::make_pair(std::move(ck), std::move(m)));
  }

  std::vector<std::string> wanted = opt.methods;
  if (wanted.empty()) {
    wanted.push_back("iradon");
    for (const char* n : {"msm+iradon", "svtx+iradon", "dntx+iradon", "ctx"}) {
      if (models.contains(n)) wanted.push_back(n);
    }
  }
  std::vector<metrics::NamedMethod> methods;
  for (const auto& name : wanted) {
    if (name == "iradon") {
      methods.push_back({name, [](std::span<const ct::MaskedSinogram> in) {
                           std::vector<Image> out;
                           for (const auto& m : in) out.push_back(ct::fbp(m));
                           return out;
                         }});
      continue;
    }
    auto it = models.find(name);
    if (it == models.end()) {
      std::cerr << "warning: no checkpoint for method " << name << "; row skipped\n";
      continue;
    }
    const auto& [ck, m] = it->second;
    const double scale = ck.sino_scale;
    if (ck.train_config.task == train::Task::ctx) {
      methods.push_back({name, [&m, scale](std::span<const ct::MaskedSinogram> in) {
                           return model::reconstruct_direct(m, in, scale);
                         }});
    } else {
      const bool keep = ck.train_config.task != train::Task::dntx;
      methods.push_back({name, [&m, scale, keep](std::span<const ct::MaskedSinogram> in) {
                           const auto full = model::inpaint(m, in, scale, keep);
                           std::vector<Image> out;
                           for (const auto& s : full) out.push_back(ct::fbp(s));
                           return out;
                         }});
    }
  }

  std::span<const ct::Sinogram> sinos = data.eval_sinograms;
  std::span<const Image> truths = data.eval_images;
  if (opt.max_samples > 0 && static_cast<size_t>(opt.max_samples) < sinos.size()) {
    sinos = sinos.first(static_cast<size_t>(opt.max_samples));
    truths = truths.first(static_cast<size_t>(opt.max_samples));
  }

  json ck_paths = json::array();
  for (const auto& p : opt.ckpts) ck_paths.push_back(p.string());
  RunManifest rm("eval", {{"ckpts", ck_paths},
                          {"data", opt.data.string()},
                          {"sweep", opt.sweep},
                          {"values", opt.values},
                          {"scheme", opt.scheme},
                          {"methods", wanted},
                          {"seed", opt.seed},
                          {"samples", sinos.size()},
                          {"out", opt.out.string()}});
  rm.set_dataset_hash(data.manifest.data_hash);
  make_dir(opt.out);

  const auto result = metrics::sweep(sinos, truths, methods, spec);
  for (const auto& r : result.reports) {
    if (r.error) std::cerr << "warning: " << r.method << " failed at " << label(r.condition) << ": " << *r.error << "\n";
  }
  metrics::write_text(opt.out / "sweep_ssim.csv", result.ssim.to_csv());
  metrics::write_text(opt.out / "sweep_psnr.csv", result.psnr.to_csv());
  metrics::write_text(opt.out / "quality.csv", result.quality_csv());
  metrics::write_text(opt.out / "summary.csv", result.summary_csv());
  for (const char* f : {"sweep_ssim.csv", "sweep_psnr.csv", "quality.csv", "summary.csv"}) rm.add_output(f);
  for (const auto& ex : result.examples) {
    std::string method = ex.method;
    std::ranges::replace(method, '+', '_');
    const auto name = "triptych_" + method + "_" + opt.sweep + label(ex.condition) + "_" + std::to_string(ex.sample) + ".pgm";
    const std::vector<Image> panels{ex.degraded, ex.recon, ex.truth};
    write_pgm(opt.out / name, side_by_side(panels));
    rm.add_output(name);
  }
  rm.write(opt.out);
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Masked sinogram transformer toolkit for sparse-view and low-dose CT", "tomotx"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenDataOptions g;
  auto* gen = app.add_subcommand("gen-data", "Generate a phantom dataset with full-view sinograms");
  gen->add_option("--side", g.side, "Image side in pixels")->capture_default_str();
  gen->add_option("--angles", g.angles, "Projection angles over 180 degrees")->capture_default_str();
  gen->add_option("--n-train", g.n_train, "Training samples")->capture_default_str();
  gen->add_option("--n-eval", g.n_eval, "Evaluation samples")->capture_default_str();
  gen->add_option("--seed", g.seed, "Phantom seed")->capture_default_str();
  gen->add_option("--out", g.out, "Output directory")->required();

  TrainOptions t;
  auto* tr = app.add_subcommand("train", "Train msm, svtx, dntx or ctx");
  tr->add_option("--task", t.task, "msm | svtx | dntx | ctx")->required();
  tr->add_option("--data", t.data, "Dataset directory")->required();
  tr->add_option("--base", t.base, "MSM checkpoint providing the ctx encoder");
  tr->add_option("--mask-ratio", t.mask_ratio, "Fraction of angles removed");
  tr->add_option("--dose", t.dose, "Relative dose for dntx inputs");
  tr->add_option("--epochs", t.epochs)->capture_default_str();
  tr->add_option("--batch-size", t.batch_size)->capture_default_str();
  tr->add_option("--lr", t.lr)->capture_default_str();
  tr->add_option("--seed", t.seed)->capture_default_str();
  tr->add_flag("--no-freeze", t.no_freeze, "ctx: also train the encoder");
  tr->add_flag("--compare", t.compare, "ctx: also retrain from scratch and compare convergence");
  tr->add_option("--d-model", t.d_model)->capture_default_str();
  tr->add_option("--heads", t.n_heads)->capture_default_str();
  tr->add_option("--enc-layers", t.enc_layers)->capture_default_str();
  tr->add_option("--dec-layers", t.dec_layers)->capture_default_str();
  tr->add_option("--d-ff", t.d_ff)->capture_default_str();
  tr->add_option("--patch-side", t.patch_side)->capture_default_str();
  tr->add_flag("--quiet", t.quiet);
  tr->add_option("--out", t.out, "Checkpoint directory")->required();

  InferOptions in;
  std::vector<int> attention;
  auto* inf = app.add_subcommand("infer", "Run a checkpoint on a sinogram file");
  inf->add_option("--task", in.task, "Expected task; defaults to the checkpoint's");
  inf->add_option("--ckpt", in.ckpt, "Checkpoint directory")->required();
  inf->add_option("--input", in.input, "Sinogram TensorContainer [angles, bins] or [n, angles, bins]")->required();
  inf->add_option("--mask-ratio", in.mask_ratio, "Mask the input first");
  inf->add_option("--scheme", in.scheme, "random | uniform")->capture_default_str();
  inf->add_option("--dose", in.dose, "Simulate this relative dose first");
  inf->add_option("--seed", in.seed)->capture_default_str();
  inf->add_option("--export-attention", attention, "Decoder layer (1-based) and optional head")->expected(1, 2);
  inf->add_option("--out", in.out)->required();

  EvalOptions e;
  auto* ev = app.add_subcommand("eval", "Sweep mask ratios or doses and score SSIM/PSNR");
  ev->add_option("--ckpt", e.ckpts, "Checkpoint directory (repeatable)");
  ev->add_option("--data", e.data, "Dataset directory")->required();
  ev->add_option("--sweep", e.sweep, "mask | dose")->capture_default_str();
  std::string values;
  ev->add_option("--values", values, "Comma-separated conditions")->required();
  ev->add_option("--scheme", e.scheme, "Mask scheme for mask sweeps")->capture_default_str();
  ev->add_option("--methods", e.methods, "Subset of iradon,msm+iradon,svtx+iradon,dntx+iradon,ctx")->delimiter(',');
  ev->add_option("--seed", e.seed)->capture_default_str();
  ev->add_option("--max-samples", e.max_samples, "Use only the first N eval samples")->capture_default_str();
  ev->add_option("--triptychs", e.triptychs, "Preview triptychs per cell")->capture_default_str();
  ev->add_flag("--allow-dataset-mismatch", e.allow_dataset_mismatch);
  ev->add_option("--out", e.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      gen_data(g);
    } else if (*tr) {
      train(t);
    } else if (*inf) {
      if (!attention.empty()) {
        in.attention_layer = attention[0];
        if (attention.size() > 1) in.attention_head = attention[1];
      }
      infer(in);
    } else if (*ev) {
      e.values = parse_values(values);
      eval(e);
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code_for(err);
  }
  return kOk;
}

}  // namespace tomotx::cli
