#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "tomotx/common/error.hpp"
#include "tomotx/trainer/trainer.hpp"

using namespace tomotx;
using namespace tomotx::train;
namespace fs = std::filesystem;

namespace {

const phantom::Dataset& tiny_data() {
  static const phantom::Dataset data = [] {
    const fs::path dir = fs::temp_directory_path() / "tomotx_test_trainer_data";
    fs::remove_all(dir);
    phantom::PhantomConfig pc;
    pc.image_side = 16;
    pc.seed = 5;
    generate_dataset(pc, ct::AngleGrid{12, 0.0, 180.0}, 20, 4, dir);
    return phantom::load_dataset(dir);
  }();
  return data;
}

model::ModelConfig tiny_model(model::HeadKind head = model::HeadKind::sino_decoder) {
  model::ModelConfig c;
  c.token_dim = 16;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 32;
  c.max_angles = 12;
  c.head_kind = head;
  c.patch_side = 4;
  return c;
}

TrainConfig quick(Task task, int epochs = 2) {
  auto c = default_train_config(task);
  c.epochs = epochs;
  c.batch_size = 4;
  c.lr = 3e-3;
  c.seed = 11;
  c.val_fraction = 0.2;
  if (task == Task::ctx) c.base_checkpoint = "(in-memory)";
  return c;
}

fs::path scratch(const char* name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("task defaults") {
  CHECK(default_train_config(Task::msm).mask_ratio == 0.8);
  CHECK(default_train_config(Task::svtx).mask_ratio == 0.8);
  CHECK(default_train_config(Task::svtx).to_json()["mask_scheme"] == "uniform");
  CHECK(default_train_config(Task::msm).to_json()["mask_scheme"] == "random");
  CHECK(default_train_config(Task::dntx).dose_fraction == 1.0 / 200.0);
  CHECK(default_train_config(Task::dntx).mask_ratio == 0.0);
  CHECK(default_train_config(Task::ctx).freeze_encoder);
  CHECK(default_train_config(Task::ctx).mask_ratio == 0.8);
  CHECK(default_train_config(Task::msm).val_fraction == 0.1);
  CHECK(default_train_config(Task::msm).lr == 1e-3);
}

TEST_CASE("train config validation") {
  auto c = default_train_config(Task::ctx);
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = default_train_config(Task::msm);
  c.val_fraction = 0.6;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.val_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = default_train_config(Task::msm);
  c.mask_ratio = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(task_from_string("gan"), ConfigError);
  const auto j = quick(Task::dntx).to_json();
  CHECK(TrainConfig::from_json(j) == quick(Task::dntx));
}

TEST_CASE("one epoch on ten samples lowers validation loss") {
  auto cfg = quick(Task::msm, 1);
  cfg.batch_size = 1;
  cfg.val_fraction = 0.1;
  phantom::Dataset ten = tiny_data();
  ten.train_images.resize(10);
  ten.train_sinograms.resize(10);
  const auto r = pretrain_msm(ten, tiny_model(), cfg);
  REQUIRE(r.log.records.size() == 1);
  CHECK(std::isfinite(r.log.records[0].val_loss));
  CHECK(r.log.records[0].val_loss < r.initial_val_loss);
}

TEST_CASE("fixed seeds reproduce the convergence log") {
  const auto a = pretrain_msm(tiny_data(), tiny_model(), quick(Task::msm));
  const auto b = pretrain_msm(tiny_data(), tiny_model(), quick(Task::msm));
  CHECK(a.log.to_csv(false) == b.log.to_csv(false));
  CHECK(a.log.records.size() == 2);
  CHECK(a.log.records[0].epoch == 1);
  CHECK(a.log.records[1].epoch == 2);
  auto other = quick(Task::msm);
  other.seed = 12;
  CHECK(pretrain_msm(tiny_data(), tiny_model(), other).log.to_csv(false) != a.log.to_csv(false));
}

TEST_CASE("best checkpoint matches the minimum logged validation loss") {
  const auto r = train_dntx(tiny_data(), tiny_model(), quick(Task::dntx, 3));
  double best = 1e300;
  for (const auto& e : r.log.records) best = std::min(best, e.val_loss);
  CHECK(r.checkpoint.best_val_loss == best);
  const auto m = r.checkpoint.instantiate();
  CHECK(validation_loss(m, tiny_data(), quick(Task::dntx)) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("uniform masks are seed independent") {
  const ct::MaskSpec a{ct::MaskScheme::uniform, 0.8, 1}, b{ct::MaskScheme::uniform, 0.8, 99};
  CHECK(ct::kept_indices(a, 180) == ct::kept_indices(b, 180));
  const auto r = train_svtx(tiny_data(), tiny_model(), quick(Task::svtx, 1));
  CHECK(std::isfinite(r.checkpoint.best_val_loss));
}

TEST_CASE("svtx refuses a base checkpoint") {
  auto cfg = quick(Task::svtx);
  cfg.base_checkpoint = "x";
  CHECK_THROWS_AS(train_svtx(tiny_data(), tiny_model(), cfg), ConfigError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto r = pretrain_msm(tiny_data(), tiny_model(), quick(Task::msm, 1));
  const auto dir = scratch("tomotx_test_ckpt");
  r.checkpoint.save(dir);
  const auto back = Checkpoint::load(dir);
  CHECK(back.model_config == r.checkpoint.model_config);
  CHECK(back.train_config == r.checkpoint.train_config);
  CHECK(back.dataset_hash == tiny_data().manifest.data_hash);
  CHECK(back.best_val_loss == r.checkpoint.best_val_loss);
  CHECK(back.sino_scale == r.checkpoint.sino_scale);

  const auto masked = ct::apply_mask(tiny_data().eval_sinograms[0], ct::MaskSpec{ct::MaskScheme::random, 0.5, 3});
  std::vector<const ct::MaskedSinogram*> ptrs{&masked};
  const auto batch = model::VisibleBatch::from_masked(ptrs, r.checkpoint.sino_scale);
  const auto before = r.checkpoint.instantiate().forward(batch);
  const auto after = back.instantiate().forward(batch);
  CHECK(std::ranges::equal(before.data(), after.data()));
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto r = pretrain_msm(tiny_data(), tiny_model(), quick(Task::msm, 1));
  const auto dir = scratch("tomotx_test_ckpt_bad");
  CHECK_THROWS_AS(Checkpoint::load(dir), IoError);
  r.checkpoint.save(dir);
  {
    std::ofstream f(dir / "encoder.pos.ttx", std::ios::binary | std::ios::trunc);
    f << "magic=TOMOTX1 dtype=f32 shape=2x2 byte_order=little\n";
    f.write("\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0", 16);
  }
  CHECK_THROWS_AS(Checkpoint::load(dir), IntegrityError);
  {
    std::ofstream f(dir / Checkpoint::kManifest, std::ios::trunc);
    f << "{not json";
  }
  CHECK_THROWS_AS(Checkpoint::load(dir), IntegrityError);
}

TEST_CASE("frozen-encoder fine-tune leaves the encoder untouched") {
  const auto base = pretrain_msm(tiny_data(), tiny_model(), quick(Task::msm, 1)).checkpoint;
  const auto r = finetune_ctx(tiny_data(), base, tiny_model(model::HeadKind::image_patch_decoder), quick(Task::ctx));
  CHECK(r.checkpoint.encoder_hash() == base.encoder_hash());
  CHECK(r.checkpoint.model_config.head_kind == model::HeadKind::image_patch_decoder);
  const auto& token = *std::ranges::find(r.checkpoint.parameters, std::string("decoder.mask_token"), &NamedTensor::name);
  const auto& base_token = *std::ranges::find(base.parameters, std::string("decoder.mask_token"), &NamedTensor::name);
  CHECK(token.data != base_token.data);

  auto unfrozen = quick(Task::ctx);
  unfrozen.freeze_encoder = false;
  const auto moved = finetune_ctx(tiny_data(), base, tiny_model(model::HeadKind::image_patch_decoder), unfrozen);
  CHECK(moved.checkpoint.encoder_hash() != base.encoder_hash());
}

TEST_CASE("fine-tune preconditions") {
  auto cfg = quick(Task::ctx);
  CHECK_THROWS_AS(finetune_ctx(tiny_data(), std::nullopt, tiny_model(model::HeadKind::image_patch_decoder), cfg),
                  ContractError);
  auto base = pretrain_msm(tiny_data(), tiny_model(), quick(Task::msm, 1)).checkpoint;
  base.dataset_hash = "0000";
  CHECK_THROWS_AS(finetune_ctx(tiny_data(), base, tiny_model(model::HeadKind::image_patch_decoder), cfg),
                  IntegrityError);
  CHECK_THROWS_AS(pretrain_msm(tiny_data(), tiny_model(model::HeadKind::image_patch_decoder), quick(Task::msm)),
                  ConfigError);
  auto wide = tiny_model();
  wide.token_dim = 32;
  CHECK_THROWS_AS(pretrain_msm(tiny_data(), wide, quick(Task::msm)), ConfigError);
}

TEST_CASE("convergence comparison bookkeeping") {
  const auto base = pretrain_msm(tiny_data(), tiny_model(), quick(Task::msm, 2)).checkpoint;
  const auto c = compare_convergence(tiny_data(), base, quick(Task::ctx, 3));
  CHECK(c.finetune.log.records.size() == c.retrain.log.records.size());
  CHECK(c.retrain_final_val == c.retrain.log.records.back().val_loss);
  if (c.crossing_epoch) {
    CHECK(c.finetune.log.records[static_cast<size_t>(*c.crossing_epoch - 1)].val_loss <= c.retrain_final_val);
  }
  const auto report = c.report();
  CHECK(report.find("mean_epoch_seconds") != std::string::npos);
  CHECK(report.find("finetune,3,") != std::string::npos);
  CHECK(report.find("retrain,3,") != std::string::npos);
  CHECK(c.finetune.log.to_csv().starts_with("epoch,train_loss,val_loss,wall_seconds\n"));
}
