#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "smg/texture.hpp"
#include "support.hpp"

using namespace smg;
using namespace smg::oracle;
using namespace smg::texture;

TEST_CASE("Gram matrices equal the triple loop") {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n;
  for (auto [c, h, w] : {std::tuple{1, 1, 1}, {3, 4, 5}, {8, 7, 3}, {16, 9, 9}}) {
    Tensor<float> f({2, c, h, w});
    for (auto& v : f.values()) v = n(rng);
    const auto g = gram_matrix(f);
    REQUIRE(g.shape() == Shape{2, c, c});
    for (int s = 0; s < 2; ++s) {
      Volume vol(c, std::vector<std::vector<double>>(h, std::vector<double>(w)));
      for (int k = 0; k < c; ++k)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) vol[k][y][x] = f.at(s, k, y, x);
      const auto ref = gram_loops(vol);
      for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
          const float got = g[(static_cast<std::size_t>(s) * c + i) * c + j];
          CHECK(std::abs(got - ref[i][j]) <= 1e-5 * std::max(1.0, std::abs(ref[i][j])));
          CHECK(got == g[(static_cast<std::size_t>(s) * c + j) * c + i]);
        }
    }
  }
  CHECK_THROWS_AS(gram_matrix(Tensor<float>({2, 3})), ArgumentError);
}

TEST_CASE("style loss equals the scripted oracle") {
  std::mt19937_64 rng(5);
  const auto phi = tiny_extractor();
  CHECK(phi.taps() == std::vector<std::string>{"a", "b"});
  CHECK(phi.layer_weight() == 0.5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto gen = test::random_grid(8, 10, GridTag::output, rng);
    const auto style = test::random_grid(12, 6, GridTag::style, rng);
    const auto fg = tiny_features(phi, gen);
    const auto fs = tiny_features(phi, style);
    double expected = 0;
    for (std::size_t l = 0; l < fg.size(); ++l) {
      const auto a = gram_loops(fg[l]);
      const auto b = gram_loops(fs[l]);
      double sq = 0;
      for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j) sq += (a[i][j] - b[i][j]) * (a[i][j] - b[i][j]);
      expected += 0.5 * sq / double(a.size() * a.size());
    }
    const double got = style_loss(gen, style, phi);
    CHECK(std::abs(got - expected) <= 1e-5 * std::max(expected, 1e-12) + 1e-12);
    CHECK(style_loss(gen, gen, phi) == 0.0);
  }
}

TEST_CASE("style loss vanishes only for matching statistics") {
  using K = ExtractorLayer::Kind;
  FeatureExtractor phi({{K::conv, 4, "a"}}, 3, 1);
  std::mt19937_64 rng(9);
  auto a = test::random_grid(6, 6, GridTag::style, rng);
  CHECK(style_loss(a, a, phi) == 0.0);
  auto b = a;
  for (auto& v : b.values) v = std::clamp(v + 0.5f, -1.0f, 1.0f);
  CHECK(style_loss(a, b, phi) > 0.0);
}

TEST_CASE("the reference pyramid taps four levels and scales its widths") {
  const auto full = FeatureExtractor::vgg16(1, 0);
  CHECK(full.taps() == std::vector<std::string>{"relu1_1", "relu2_1", "relu3_1", "relu4_1"});
  CHECK(full.layer_weight() == 0.25);
  CHECK(full.params().get("conv0.w").value().shape() == Shape{64, 3, 3, 3});
  CHECK(full.params().get("conv7.w").value().shape() == Shape{512, 256, 3, 3});
  CHECK_FALSE(full.params().contains("conv8.w"));
  const auto slim = FeatureExtractor::vgg16(8, 0);
  CHECK(slim.params().get("conv7.w").value().shape() == Shape{64, 32, 3, 3});
  for (const auto& e : slim.params().entries()) CHECK_FALSE(e.var.requires_grad());

  std::mt19937_64 rng(1);
  const auto img = test::random_grid(16, 16, GridTag::style, rng);
  const auto feats = slim.features(ad::Var<float>(imageio::to_tensor<float>(img)));
  REQUIRE(feats.size() == 4);
  CHECK(feats[0].dim(2) == 16);
  CHECK(feats[3].dim(2) == 2);
  CHECK(feats[3].dim(1) == 64);
  CHECK_THROWS_AS(slim.features(ad::Var<float>(Tensor<float>({1, 1, 8, 8}))), ShapeError);
}

TEST_CASE("extractor weights load from a checkpoint and must be complete") {
  const auto phi0 = tiny_extractor();
  backbone::ParamStore store = phi0.params();
  store.get("conv0.w").mutable_value().fill(0.25f);
  test::TempDir dir;
  backbone::save_checkpoint(store, {}, dir / "w.smg1");
  auto phi = tiny_extractor();
  phi.load_weights(dir / "w.smg1");
  CHECK(phi.params().get("conv0.w").value() == store.get("conv0.w").value());

  backbone::ParamStore partial;
  partial.add("conv0.w", store.get("conv0.w").value());
  backbone::save_checkpoint(partial, {}, dir / "partial.smg1");
  CHECK_THROWS_AS(phi.load_weights(dir / "partial.smg1"), FormatError);

  backbone::ParamStore wrong;
  wrong.add("conv0.w", Tensor<float>({1, 3, 3, 3}));
  wrong.add("conv0.b", store.get("conv0.b").value());
  wrong.add("conv1.w", store.get("conv1.w").value());
  wrong.add("conv1.b", store.get("conv1.b").value());
  backbone::save_checkpoint(wrong, {}, dir / "wrong.smg1");
  CHECK_THROWS_AS(phi.load_weights(dir / "wrong.smg1"), ShapeError);
}

TEST_CASE("texture losses: the discriminator sees structure and image together") {
  TextureTrainConfig cfg;
  cfg.base_width = 4;
  cfg.n_resblocks = 1;
  backbone::Generator<float> g(cfg.generator_config(), 1);
  backbone::Discriminator<float> d({4, 2, 4}, 1);
  std::mt19937_64 rng(2);
  TextureBatch batch;
  batch.structure.push_back(test::block_glyph(16, 4, 4, 8, 8));
  batch.input.push_back(batch.structure.back());
  batch.style.push_back(test::random_grid(16, 16, GridTag::style, rng));
  const auto phi = tiny_extractor();
  const auto targets = style_targets(batch.style.back(), phi);

  const auto plain = texture_losses(g, d, batch, targets, &phi);
  CHECK_FALSE(plain.style.defined());
  batch.transferred = test::block_glyph(16, 2, 2, 4, 12);
  const auto full = texture_losses(g, d, batch, targets, &phi, {100, 1, 0.01});
  REQUIRE(full.style.defined());
  const auto rendered = imageio::from_tensor(g.infer(imageio::to_tensor<float>(*batch.transferred)), 0, GridTag::output);
  CHECK(full.style.item() == doctest::Approx(style_loss(rendered, batch.style.back(), phi)).epsilon(1e-4));
  CHECK(full.objective.item() ==
        doctest::Approx(100 * full.rec.item() + full.adv_g.item() + 0.01 * full.style.item()).epsilon(1e-5));
  CHECK_THROWS_AS(texture_losses(g, d, batch, targets, nullptr, {100, 1, 0.01}), ArgumentError);

  batch.style.back() = test::random_grid(12, 16, GridTag::style, rng);
  CHECK_THROWS_AS(texture_losses(g, d, batch, targets, &phi), ShapeError);
}

TEST_CASE("texture training records a style term and renders deterministically") {
  const auto structure = test::block_glyph(16, 4, 4, 8, 8);
  std::mt19937_64 rng(4);
  const auto style = imageio::StyleAsset::make("s", test::random_grid(16, 16, GridTag::style, rng), structure);
  glyph::GlyphTrainConfig gc;
  gc.base_width = 4;
  gc.n_resblocks = 1;
  const glyph::GlyphModule gm(backbone::Generator<float>(gc.generator_config(), 3), {{"noise_std", "0.2"}});
  const imageio::TextDataset text({test::block_glyph(16, 3, 3, 9, 5)}, 0);

  TextureTrainConfig cfg;
  cfg.steps = 2;
  cfg.crop_size = 16;
  cfg.base_width = 4;
  cfg.n_resblocks = 1;
  cfg.d_width = 4;
  cfg.d_layers = 2;
  cfg.extractor_width_divisor = 16;
  const auto a = train_texture(style, gm, text, cfg);
  const auto b = train_texture(style, gm, text, cfg);
  REQUIRE(a.history.size() == 2);
  CHECK_NOTHROW(a.history[0].term("style"));
  CHECK(a.module.net().params() == b.module.net().params());
  CHECK(a.module.meta().at("extractor") == "random/16");

  const auto out = render_texture(a.module, structure, 5);
  CHECK(out.channels == 3);
  CHECK(out.tag == GridTag::output);
  CHECK(out == render_texture(a.module, structure, 5));
  CHECK_FALSE(out == render_texture(a.module, structure, 6));
  CHECK_THROWS_AS(render_texture(TextureModule{}, structure, 1), StateError);

  cfg.weights.style = 0;
  const auto no_style = train_texture(style, glyph::GlyphModule{}, imageio::TextDataset({}, 0), cfg);
  CHECK_THROWS_AS(no_style.history[0].term("style"), LookupError);

  test::TempDir dir;
  a.module.save(dir / "t.smg1");
  CHECK(render_texture(TextureModule::load(dir / "t.smg1"), structure, 5) == out);
  CHECK_THROWS_AS(glyph::GlyphModule::load(dir / "t.smg1"), FormatError);
}
