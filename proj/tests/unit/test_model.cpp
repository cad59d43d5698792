#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "finite_diff.hpp"
#include "tomotx/common/error.hpp"
#include "tomotx/common/rng.hpp"
#include "tomotx/model/inference.hpp"
#include "tomotx/model/msm.hpp"

using namespace tomotx;
using namespace tomotx::model;
using diff::Tensor;

namespace {

ModelConfig tiny(HeadKind head = HeadKind::sino_decoder) {
  ModelConfig c;
  c.token_dim = 8;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 16;
  c.max_angles = 12;
  c.head_kind = head;
  c.patch_side = 4;
  return c;
}

ct::Sinogram random_sino(int angles, int bins, uint64_t seed) {
  ct::Sinogram s{ct::AngleGrid{angles, 0.0, 180.0}, Image(angles, bins)};
  Rng rng(seed);
  for (auto& v : s.values.values()) v = static_cast<float>(rng.uniform());
  return s;
}

VisibleBatch masked_batch(const std::vector<ct::Sinogram>& sinos, double ratio, std::vector<ct::MaskedSinogram>& keep) {
  keep.clear();
  for (size_t i = 0; i < sinos.size(); ++i) {
    keep.push_back(ct::apply_mask(sinos[i], ct::MaskSpec{ct::MaskScheme::random, ratio, 100 + i}));
  }
  std::vector<const ct::MaskedSinogram*> ptrs;
  for (const auto& m : keep) ptrs.push_back(&m);
  return VisibleBatch::from_masked(ptrs, 1.0);
}

bool all_finite(const Tensor& t) {
  return std::ranges::all_of(t.data(), [](float v) { return std::isfinite(v); });
}

}  // namespace

TEST_CASE("embed yields one token per visible row") {
  ModelConfig cfg = desk_config();
  cfg.max_angles = 180;
  SinogramTransformer m(cfg, 1);
  const auto sino = random_sino(180, 64, 2);
  const auto masked = ct::apply_mask(sino, ct::MaskSpec{ct::MaskScheme::random, 0.8, 3});
  std::vector<const ct::MaskedSinogram*> ptrs{&masked};
  const auto batch = VisibleBatch::from_masked(ptrs, 1.0);
  const auto tokens = m.embed(batch);
  CHECK(tokens.shape() == diff::Shape{1, 36, cfg.d_model});
  CHECK(std::ranges::all_of(batch.angle_ids, [](int64_t a) { return a >= 0 && a < 180; }));
}

TEST_CASE("embed separates identical rows at different angles") {
  SinogramTransformer m(tiny(), 4);
  ct::Sinogram s{ct::AngleGrid{6, 0.0, 180.0}, Image(6, 8, 0.5f)};
  std::vector<const ct::Sinogram*> ptrs{&s};
  const auto tokens = m.embed(VisibleBatch::from_full(ptrs, 1.0));
  const auto d = tokens.data();
  bool differ = false;
  for (int i = 0; i < 8; ++i) differ |= d[static_cast<size_t>(i)] != d[static_cast<size_t>(8 + i)];
  CHECK(differ);
}

TEST_CASE("zero projection weights leave pure positional tokens") {
  SinogramTransformer m(tiny(), 5);
  const Tensor* pos = m.parameters().find("encoder.pos");
  REQUIRE(pos != nullptr);
  for (const char* name : {"encoder.embed.weight", "encoder.embed.bias"}) {
    auto t = *m.parameters().find(name);
    std::ranges::fill(t.mutable_data(), 0.0f);
  }
  const auto s = random_sino(10, 8, 6);
  std::vector<ct::MaskedSinogram> keep;
  const auto batch = masked_batch({s}, 0.5, keep);
  const auto tokens = m.embed(batch);
  for (int64_t j = 0; j < batch.kept; ++j) {
    const auto a = batch.angle_ids[static_cast<size_t>(j)];
    for (int i = 0; i < 8; ++i) {
      CHECK(tokens.data()[static_cast<size_t>(j * 8 + i)] == pos->data()[static_cast<size_t>(a * 8 + i)]);
    }
  }
}

TEST_CASE("embed rejects a width mismatch") {
  SinogramTransformer m(tiny(), 1);
  const auto s = random_sino(6, 9, 1);
  std::vector<const ct::Sinogram*> ptrs{&s};
  CHECK_THROWS_AS(m.embed(VisibleBatch::from_full(ptrs, 1.0)), ShapeError);
}

TEST_CASE("encoder is permutation equivariant") {
  SinogramTransformer m(tiny(), 7);
  const auto s = random_sino(8, 8, 8);
  std::vector<const ct::Sinogram*> ptrs{&s};
  const auto batch = VisibleBatch::from_full(ptrs, 1.0);
  VisibleBatch shuffled = batch;
  const std::vector<int> perm{3, 0, 7, 5, 1, 6, 2, 4};
  for (size_t j = 0; j < perm.size(); ++j) {
    shuffled.angle_ids[j] = batch.angle_ids[static_cast<size_t>(perm[j])];
    std::copy_n(batch.rows.begin() + perm[j] * 8, 8, shuffled.rows.begin() + static_cast<std::ptrdiff_t>(j * 8));
  }
  const auto a = m.encode(m.embed(batch));
  const auto b = m.encode(m.embed(shuffled));
  double worst = 0.0;
  for (size_t j = 0; j < perm.size(); ++j) {
    for (int i = 0; i < 8; ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(b.data()[j * 8 + static_cast<size_t>(i)]) -
                                       a.data()[static_cast<size_t>(perm[j] * 8 + i)]));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("a single token attends to itself") {
  SinogramTransformer m(tiny(), 9);
  const auto s = random_sino(10, 8, 10);
  const auto masked = ct::apply_mask(s, ct::MaskSpec{ct::MaskScheme::random, 0.9, 1});
  REQUIRE(masked.kept_indices.size() == 1);
  std::vector<const ct::MaskedSinogram*> ptrs{&masked};
  AttentionTrace trace;
  (void)m.encode(m.embed(VisibleBatch::from_masked(ptrs, 1.0)), &trace);
  REQUIRE(trace.encoder.size() == 1);
  const auto& w = trace.encoder[0];
  CHECK(w.shape() == diff::Shape{1, 2, 1, 1});
  for (float v : w.data()) CHECK(v == 1.0f);
}

TEST_CASE("decode_sino restores the full angle count") {
  SinogramTransformer m(tiny(), 11);
  std::vector<ct::Sinogram> sinos{random_sino(10, 8, 12), random_sino(10, 8, 13)};
  std::vector<ct::MaskedSinogram> keep;
  for (double ratio : {0.0, 0.5, 0.9}) {
    const auto batch = masked_batch(sinos, ratio, keep);
    const auto out = m.forward(batch);
    CHECK(out.shape() == diff::Shape{2, 10, 8});
    CHECK(all_finite(out));
  }
}

TEST_CASE("ratio zero inserts no mask tokens") {
  SinogramTransformer m(tiny(), 14);
  const auto s = random_sino(10, 8, 15);
  std::vector<const ct::Sinogram*> ptrs{&s};
  const auto batch = VisibleBatch::from_full(ptrs, 1.0);
  CHECK(batch.kept == 10);
  AttentionTrace trace;
  const auto out = m.forward(batch, &trace);
  CHECK(trace.decoder[0].shape() == diff::Shape{1, 2, 10, 10});
  // Changing the mask token cannot matter when no slot is masked.
  auto token = *m.parameters().find("decoder.mask_token");
  std::ranges::fill(token.mutable_data(), 7.0f);
  const auto again = m.forward(batch);
  CHECK(std::ranges::equal(out.data(), again.data()));
}

TEST_CASE("out-of-range kept indices are a contract error") {
  SinogramTransformer m(tiny(), 1);
  const auto s = random_sino(10, 8, 1);
  std::vector<const ct::Sinogram*> ptrs{&s};
  auto batch = VisibleBatch::from_full(ptrs, 1.0);
  const auto encoded = m.encode(m.embed(batch));
  batch.angle_ids[3] = 10;
  CHECK_THROWS_AS(m.decode_sino(encoded, batch), ContractError);
  const auto big = random_sino(13, 8, 2);
  std::vector<const ct::Sinogram*> big_ptrs{&big};
  CHECK_THROWS_AS(m.forward(VisibleBatch::from_full(big_ptrs, 1.0)), ContractError);
}

TEST_CASE("msm_loss closed forms") {
  const auto a = random_sino(6, 8, 20);
  CHECK(msm_loss(a, a) == 0.0);
  auto b = a;
  for (auto& v : b.values.values()) v += 1.0f;
  CHECK(msm_loss(b, a) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(msm_loss(a, random_sino(6, 9, 1)), ShapeError);
}

TEST_CASE("full-sinogram loss counts imperfect masked rows") {
  const auto target = random_sino(10, 8, 21);
  const auto masked = ct::apply_mask(target, ct::MaskSpec{ct::MaskScheme::random, 0.5, 2});
  auto pred = target;
  Rng rng(3);
  std::vector<bool> kept(10, false);
  for (int a : masked.kept_indices) kept[static_cast<size_t>(a)] = true;
  for (int a = 0; a < 10; ++a) {
    if (!kept[static_cast<size_t>(a)]) {
      for (auto& v : pred.row(a)) v += static_cast<float>(rng.normal(0.0, 0.3));
    }
  }
  double visible = 0.0;
  for (int a : masked.kept_indices) {
    for (int i = 0; i < 8; ++i) {
      const double e = pred.values(a, i) - target.values(a, i);
      visible += e * e;
    }
  }
  visible /= static_cast<double>(masked.kept_indices.size() * 8);
  CHECK(visible == 0.0);
  CHECK(msm_loss(pred, target) > visible);
}

TEST_CASE("image head tiles the desk-scale image into 64 patches") {
  ModelConfig cfg = desk_config();
  cfg.head_kind = HeadKind::image_patch_decoder;
  CHECK(cfg.n_patches() == 64);
  CHECK(cfg.patch_pixels() == 64);
  SinogramTransformer m(cfg, 3);
  const auto s = random_sino(60, 64, 4);
  const auto masked = ct::apply_mask(s, ct::MaskSpec{ct::MaskScheme::random, 0.8, 5});
  std::vector<const ct::MaskedSinogram*> ptrs{&masked};
  const auto out = m.forward(VisibleBatch::from_masked(ptrs, 1.0));
  CHECK(out.shape() == diff::Shape{1, 64, 64});
  CHECK(all_finite(out));
  const auto img = assemble_patches(out.data(), 64, 8);
  CHECK(img.rows() == 64);
  CHECK(img.cols() == 64);
}

TEST_CASE("256-pixel patch arithmetic") {
  ModelConfig cfg;
  cfg.token_dim = 256;
  cfg.d_model = 256;
  cfg.n_heads = 16;
  cfg.max_angles = 180;
  cfg.head_kind = HeadKind::image_patch_decoder;
  cfg.patch_side = 16;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.n_patches() == 256);
  CHECK(cfg.patch_pixels() == 256);
}

TEST_CASE("patch assembly is a bijection") {
  std::vector<float> patches(64 * 64);
  std::iota(patches.begin(), patches.end(), 0.0f);
  const auto img = assemble_patches(patches, 64, 8);
  // Patch 1 is the second tile of the top row.
  CHECK(img(0, 8) == 64.0f);
  CHECK(img(8, 0) == 8.0f * 64.0f);
  CHECK(disassemble_patches(img, 8) == patches);
  CHECK_THROWS_AS(assemble_patches(patches, 64, 7), ContractError);
}

TEST_CASE("image-head config errors") {
  SinogramTransformer sino(tiny(), 1);
  const auto s = random_sino(6, 8, 1);
  std::vector<const ct::Sinogram*> ptrs{&s};
  const auto batch = VisibleBatch::from_full(ptrs, 1.0);
  CHECK_THROWS_AS(sino.decode_image(sino.encode(sino.embed(batch)), batch), ContractError);
  ModelConfig bad = tiny(HeadKind::image_patch_decoder);
  bad.patch_side = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny();
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("decoder attention maps at half masking") {
  ModelConfig cfg = desk_config();
  SinogramTransformer m(cfg, 16);
  const auto s = random_sino(60, 64, 17);
  const auto masked = ct::apply_mask(s, ct::MaskSpec{ct::MaskScheme::random, 0.5, 18});
  std::vector<const ct::MaskedSinogram*> ptrs{&masked};
  const auto batch = VisibleBatch::from_masked(ptrs, 1.0);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const auto map = extract_attention(m, batch, 0, h);
    CHECK(map.rows == 60);
    CHECK(map.cols == 60);
    for (int r = 0; r < map.rows; ++r) {
      double sum = 0.0;
      for (int c = 0; c < map.cols; ++c) {
        if (map.at(r, c) < 0.0f) FAIL("negative attention weight");
        sum += map.at(r, c);
      }
      if (std::abs(sum - 1.0) > 1e-5) FAIL("row " << r << " sums to " << sum);
    }
  }
  CHECK_THROWS_AS(extract_attention(m, batch, 2, 0), ContractError);
  CHECK_THROWS_AS(extract_attention(m, batch, 0, cfg.n_heads), ContractError);
}

TEST_CASE("full-size head count is extractable") {
  ModelConfig cfg;
  cfg.token_dim = 16;
  cfg.d_model = 32;
  cfg.n_heads = 16;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.d_ff = 32;
  cfg.max_angles = 12;
  SinogramTransformer m(cfg, 1);
  const auto s = random_sino(12, 16, 2);
  std::vector<const ct::Sinogram*> ptrs{&s};
  const auto batch = VisibleBatch::from_full(ptrs, 1.0);
  for (int h = 0; h < 16; ++h) CHECK_NOTHROW(extract_attention(m, batch, 0, h));
}

TEST_CASE("every trainable parameter receives gradient") {
  for (HeadKind head : {HeadKind::sino_decoder, HeadKind::image_patch_decoder}) {
    SinogramTransformer m(tiny(head), 30);
    std::vector<ct::Sinogram> sinos{random_sino(10, 8, 31), random_sino(10, 8, 32)};
    std::vector<ct::MaskedSinogram> keep;
    const auto batch = masked_batch(sinos, 0.5, keep);
    const auto out = m.forward(batch);
    diff::mse_loss(out, tomotx::testing::random_tensor(out.shape(), 33, false)).backward();
    for (const auto& p : m.parameters().items()) {
      double norm = 0.0;
      for (float g : p.tensor.grad()) norm += static_cast<double>(g) * g;
      if (!(norm > 0.0)) FAIL("no gradient reaches " << p.name);
    }
  }
}

TEST_CASE("frozen encoder is excluded from training and gradients") {
  SinogramTransformer m(tiny(HeadKind::image_patch_decoder), 40);
  m.freeze_encoder(true);
  for (const auto& t : m.trainable()) {
    for (const auto& p : m.parameters().items()) {
      if (p.tensor.node() == t.node()) CHECK_FALSE(p.name.starts_with(SinogramTransformer::kEncoderPrefix));
    }
  }
  std::vector<ct::Sinogram> sinos{random_sino(10, 8, 41)};
  std::vector<ct::MaskedSinogram> keep;
  const auto batch = masked_batch(sinos, 0.5, keep);
  const auto out = m.forward(batch);
  diff::mse_loss(out, Tensor::zeros(out.shape())).backward();
  for (const auto& p : m.parameters().items()) {
    if (p.name.starts_with(SinogramTransformer::kEncoderPrefix)) CHECK_FALSE(p.tensor.has_grad());
  }
  m.freeze_encoder(false);
  CHECK(m.trainable().size() == m.parameters().items().size());
}

TEST_CASE("identical seeds give identical parameters and names decide init") {
  SinogramTransformer a(tiny(), 50), b(tiny(), 50), c(tiny(HeadKind::image_patch_decoder), 50);
  for (size_t i = 0; i < a.parameters().items().size(); ++i) {
    CHECK(std::ranges::equal(a.parameters().items()[i].tensor.data(), b.parameters().items()[i].tensor.data()));
  }
  CHECK(std::ranges::equal(a.parameters().find("encoder.pos")->data(), c.parameters().find("encoder.pos")->data()));
}

TEST_CASE("positional tables start as sin/cos pairs") {
  SinogramTransformer m(tiny(), 51);
  const auto pos = m.parameters().find("decoder.pos")->data();
  const int d = tiny().d_model;
  for (int k = 0; k < d; ++k) CHECK(pos[static_cast<size_t>(k)] == (k % 2 == 0 ? 0.0f : 1.0f));
  // Lowest-index pair runs at unit frequency.
  CHECK(pos[static_cast<size_t>(3 * d)] == doctest::Approx(std::sin(3.0)));
  CHECK(pos[static_cast<size_t>(3 * d + 1)] == doctest::Approx(std::cos(3.0)));
  CHECK(m.parameters().find("encoder.pos")->requires_grad());
}

TEST_CASE("end-to-end gradient check on sampled parameters") {
  SinogramTransformer m(tiny(), 60);
  std::vector<ct::Sinogram> sinos{random_sino(10, 8, 61), random_sino(10, 8, 62)};
  std::vector<ct::MaskedSinogram> keep;
  const auto batch = masked_batch(sinos, 0.5, keep);
  const auto target = tomotx::testing::random_tensor({2, 10, 8}, 63, false);
  auto loss_of = [&] {
    const auto out = m.forward(batch);
    return tomotx::testing::reduce_loss(out, std::vector<float>(target.data().begin(), target.data().end()));
  };
  for (auto& p : m.parameters().items()) p.tensor.zero_grad();
  diff::mse_loss(m.forward(batch), target).backward();

  Rng rng(64);
  auto& items = m.parameters().items();
  std::vector<double> analytic, numeric;
  const double h = 1e-3;
  for (int probe = 0; probe < 10; ++probe) {
    auto& param = items[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(items.size()) - 1))].tensor;
    const auto idx = static_cast<size_t>(rng.uniform_int(0, param.numel() - 1));
    analytic.push_back(param.grad()[idx]);
    auto data = param.mutable_data();
    const float orig = data[idx];
    data[idx] = static_cast<float>(orig + h);
    const double lp = loss_of();
    data[idx] = static_cast<float>(orig - h);
    const double lm = loss_of();
    data[idx] = orig;
    numeric.push_back((lp - lm) / (2.0 * h));
  }
  CHECK(tomotx::testing::relative_error(analytic, numeric) < 1e-2);
}

TEST_CASE("inference helpers return dataset-unit outputs") {
  SinogramTransformer m(tiny(), 70);
  std::vector<ct::Sinogram> sinos{random_sino(10, 8, 71), random_sino(10, 8, 72), random_sino(10, 8, 73)};
  std::vector<ct::MaskedSinogram> masked;
  for (size_t i = 0; i < sinos.size(); ++i) {
    masked.push_back(ct::apply_mask(sinos[i], ct::MaskSpec{ct::MaskScheme::random, i == 1 ? 0.3 : 0.5, i}));
  }
  const auto full = inpaint(m, masked, 2.0);
  REQUIRE(full.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(full[i].n_angles() == 10);
    for (int a : masked[i].kept_indices) CHECK(std::ranges::equal(full[i].row(a), sinos[i].row(a)));
  }
  // Grouped batching must not change per-sample results.
  const auto single = inpaint(m, std::span(masked).subspan(2, 1), 2.0);
  CHECK(single[0] == full[2]);
  CHECK(denoise(m, sinos, 2.0).size() == 3);
  CHECK_THROWS_AS(reconstruct_direct(m, masked, 2.0), ContractError);
  SinogramTransformer img(tiny(HeadKind::image_patch_decoder), 71);
  const auto recon = reconstruct_direct(img, masked, 2.0);
  CHECK(recon[0].rows() == 8);
}
