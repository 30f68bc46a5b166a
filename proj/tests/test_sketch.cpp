#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "smg/sketch.hpp"
#include "support.hpp"

using namespace smg;
using namespace smg::oracle;
using namespace smg::sketch;

TEST_CASE("blur width grows linearly with the level") {
  CHECK(sigma_for_level(0.0) == 8.0);
  CHECK(sigma_for_level(1.0) == 24.0);
  CHECK(sigma_for_level(0.5) == 16.0);
  CHECK_THROWS_AS(sigma_for_level(-0.01), ArgumentError);
  CHECK_THROWS_AS(sigma_for_level(1.01), ArgumentError);
  CHECK_THROWS_AS(sigma_for_level(std::nan("")), ArgumentError);
  CHECK(sigma_for_level(1.0, 0.25) == 6.0);
  CHECK(sigma_for_level(0.0, 0.25) == 2.0);
  CHECK_THROWS_AS(sigma_for_level(0.5, 0.0), ArgumentError);
}

TEST_CASE("Gaussian kernels are normalised, symmetric and span two sigma") {
  for (double level : {0.0, 0.1, 0.25, 0.5, 0.77, 1.0}) {
    const auto k = gaussian_kernel(level);
    const double sigma = sigma_for_level(level);
    CHECK(k.size() == 2 * static_cast<std::size_t>(std::ceil(2 * sigma)) + 1);
    CHECK(std::abs(std::accumulate(k.begin(), k.end(), 0.0) - 1.0) < 1e-6);
    for (std::size_t i = 0; i < k.size(); ++i) CHECK(k[i] == k[k.size() - 1 - i]);
    CHECK(k[k.size() / 2] == *std::max_element(k.begin(), k.end()));
  }
}

TEST_CASE("separable smoothing equals the dense oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> level(0.0, 1.0);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const auto x = test::random_grid(16, 16, GridTag::text, rng);
    const double l = i == 0 ? 0.0 : i == 1 ? 1.0 : level(rng);
    const auto fast = smooth(x, l);
    const auto slow = dense_blur(x, sigma_for_level(l));
    for (std::size_t p = 0; p < fast.values.size(); ++p) worst = std::max(worst, double(std::abs(fast.values[p] - slow.values[p])));
  }
  MESSAGE("worst deviation " << worst);
  CHECK(worst <= 1e-5);
}

TEST_CASE("smoothing handles non-square and tiny grids") {
  std::mt19937_64 rng(2);
  for (auto [h, w] : {std::pair{1, 1}, {1, 7}, {5, 2}, {9, 13}}) {
    const auto x = test::random_grid(h, w, GridTag::structure, rng);
    const auto fast = smooth(x, 0.3);
    const auto slow = dense_blur(x, sigma_for_level(0.3));
    for (std::size_t p = 0; p < fast.values.size(); ++p) CHECK(std::abs(fast.values[p] - slow.values[p]) <= 1e-5);
  }
  CHECK_THROWS_AS(smooth(ImageGrid::filled(4, 4, GridTag::style), 0.5), ArgumentError);
}

TEST_CASE("constant images are fixed points of smoothing") {
  const auto x = ImageGrid::filled(10, 10, GridTag::text, 0.25f);
  const auto s = smooth(x, 0.6);
  for (float v : s.values) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));
}

TEST_CASE("naive sketch squashes the blur into [-1, 1] with the sign preserved") {
  const auto glyph = test::block_glyph(32, 8, 8, 16, 16);
  const auto s = smooth(glyph, 0.0);
  const auto n = naive_sketch(glyph, 0.0);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double expected = 2.0 / (1.0 + std::exp(-10.0 * s.values[i])) - 1.0;
    CHECK(n.values[i] == doctest::Approx(expected).epsilon(1e-6));
    CHECK((n.values[i] > 0) == (s.values[i] > 0));
  }
}

TEST_CASE("transformation input appends the level channel") {
  const std::vector<ImageGrid> grids{ImageGrid::filled(4, 4, GridTag::text, 0.5f)};
  const double levels[] = {0.75};
  const auto t = transform_input(grids, levels);
  CHECK(t.shape() == Shape{1, 2, 4, 4});
  CHECK(t.at(0, 0, 3, 3) == 0.5f);
  CHECK(t.at(0, 1, 2, 1) == 0.5f);  // 2 * 0.75 - 1
  const double two[] = {0.1, 0.2};
  CHECK_THROWS_AS(transform_input(grids, two), ShapeError);
}

TEST_CASE("sketch losses: reconstruction is the mean absolute error of the transform output") {
  SketchTrainConfig cfg;
  cfg.base_width = 4;
  cfg.n_resblocks = 1;
  backbone::Generator<float> g(cfg.generator_config(), 1);
  backbone::Discriminator<float> d({3, 2, 4}, 2);
  const std::vector<ImageGrid> text{test::block_glyph(16, 4, 4, 8, 6)};
  const double levels[] = {0.4};
  const auto losses = sketch_losses(g, d, text, levels, {100.0, 1.0});
  const auto& fake = losses.fake.value();
  double l1 = 0;
  for (std::size_t i = 0; i < fake.size(); ++i) l1 += std::abs(fake[i] - text[0].values[i]);
  CHECK(losses.rec.item() == doctest::Approx(l1 / fake.size()).epsilon(1e-5));
  CHECK(losses.objective.item() == doctest::Approx(100.0 * losses.rec.item() + losses.adv_g.item()).epsilon(1e-5));
  CHECK(d.params().entries()[0].var.value().dim(1) == 3);
}

TEST_CASE("an empty sketch module refuses to run") {
  SketchModule empty;
  CHECK_FALSE(empty.ready());
  CHECK_THROWS_AS(generate_sketchy_structure(empty, ImageGrid::filled(8, 8, GridTag::structure), 0.5), StateError);
  CHECK_THROWS_AS(SketchModule::load("/nonexistent/sketch.smg1"), StateError);
}

TEST_CASE("sketch training is reproducible and its checkpoint restores the same outputs") {
  imageio::TextDatasetOptions o;
  o.count = 3;
  o.size = 16;
  o.procedural = true;
  const auto ds = imageio::build_text_dataset(o);
  SketchTrainConfig cfg;
  cfg.steps = 3;
  cfg.base_width = 4;
  cfg.n_resblocks = 1;
  cfg.d_width = 4;
  cfg.d_layers = 2;
  cfg.seed = 5;
  int observed = 0;
  const auto a = train_sketch(ds, cfg, [&](const training::StepRecord& r) {
    CHECK(r.stage == "sketch");
    CHECK(r.level >= 0.0);
    CHECK(r.level <= 1.0);
    ++observed;
  });
  const auto b = train_sketch(ds, cfg);
  CHECK(observed == 3);
  REQUIRE(a.history.size() == 3);
  CHECK(a.module.transform().params() == b.module.transform().params());

  test::TempDir dir;
  a.module.save(dir / "sketch.smg1");
  const auto loaded = SketchModule::load(dir / "sketch.smg1");
  CHECK(loaded.meta().at("f_slope") == "16");
  CHECK(loaded.meta().at("f_intercept") == "8");
  CHECK(loaded.meta().at("net") == "sketch");
  CHECK(loaded.sigma_scale() == 1.0);
  for (double l : {0.0, 0.5, 1.0}) {
    CHECK(generate_sketchy_structure(loaded, ds[0], l) == generate_sketchy_structure(a.module, ds[0], l));
  }

  cfg.seed = 6;
  CHECK_FALSE(train_sketch(ds, cfg).module.transform().params() == a.module.transform().params());
}

TEST_CASE("sketch blur scale travels with the checkpoint") {
  imageio::TextDatasetOptions o;
  o.count = 2;
  o.size = 16;
  o.procedural = true;
  const auto ds = imageio::build_text_dataset(o);
  SketchTrainConfig cfg;
  cfg.steps = 1;
  cfg.base_width = 4;
  cfg.n_resblocks = 1;
  cfg.d_width = 4;
  cfg.d_layers = 2;
  cfg.sigma_scale = 0.25;
  const auto a = train_sketch(ds, cfg);
  CHECK(a.module.sigma_scale() == 0.25);

  test::TempDir dir;
  a.module.save(dir / "sketch.smg1");
  const auto loaded = SketchModule::load(dir / "sketch.smg1");
  CHECK(loaded.sigma_scale() == 0.25);
  CHECK(generate_sketchy_structure(loaded, ds[0], 0.4) == generate_sketchy_structure(a.module, ds[0], 0.4));

  auto meta = loaded.meta();
  meta["f_scale"] = "-1";
  CHECK_THROWS_AS(SketchModule(backbone::Generator<float>(cfg.generator_config(), 1), meta), FormatError);
}
