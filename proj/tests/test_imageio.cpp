#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "smg/image.hpp"
#include "support.hpp"

using namespace smg;
using namespace smg::imageio;

TEST_CASE("tags fix the channel count") {
  CHECK(ImageGrid::filled(3, 4, GridTag::style).channels == 3);
  CHECK(ImageGrid::filled(3, 4, GridTag::output).channels == 3);
  CHECK(ImageGrid::filled(3, 4, GridTag::text).channels == 1);
  CHECK(ImageGrid::filled(3, 4, GridTag::structure).channels == 1);
  CHECK_THROWS_AS(ImageGrid::filled(0, 4, GridTag::text), ArgumentError);

  ImageGrid g = ImageGrid::filled(2, 2, GridTag::text);
  CHECK_NOTHROW(g.validate());
  g.values[1] = 1.5f;
  CHECK_THROWS_AS(g.validate(), ArgumentError);
  g.values[1] = std::nanf("");
  CHECK_THROWS_AS(g.validate(), ArgumentError);
  g = ImageGrid::filled(2, 2, GridTag::text);
  g.tag = GridTag::style;
  CHECK_THROWS_AS(g.validate(), ArgumentError);
}

TEST_CASE("PNG round trip preserves 8-bit levels exactly") {
  std::mt19937_64 rng(1);
  for (GridTag tag : {GridTag::text, GridTag::style}) {
    ImageGrid g = ImageGrid::filled(7, 9, tag);
    std::uniform_int_distribution<int> byte(0, 255);
    for (auto& v : g.values) v = 2.0f * (static_cast<float>(byte(rng)) / 255.0f) - 1.0f;
    const auto back = decode_image(encode_png(g), tag);
    CHECK(back.height == 7);
    CHECK(back.width == 9);
    CHECK(back.values == g.values);
  }
}

TEST_CASE("colour channel order survives encoding") {
  ImageGrid g = ImageGrid::filled(1, 1, GridTag::style);
  g.at(0, 0, 0) = 1.0f;   // red
  g.at(1, 0, 0) = -1.0f;
  g.at(2, 0, 0) = -1.0f;
  const auto back = decode_image(encode_png(g), GridTag::style);
  CHECK(back.at(0, 0, 0) == 1.0f);
  CHECK(back.at(2, 0, 0) == -1.0f);
}

TEST_CASE("inversion flips dark-on-light text") {
  ImageGrid g = ImageGrid::filled(2, 2, GridTag::text, 1.0f);
  g.at(0, 0, 0) = -1.0f;
  const auto bytes = encode_png(g);
  const auto inv = decode_image(bytes, GridTag::text, true);
  CHECK(inv.at(0, 0, 0) == 1.0f);
  CHECK(inv.at(0, 1, 1) == -1.0f);
}

TEST_CASE("undecodable input is a format error and a missing file an I/O error") {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(decode_image(junk, GridTag::text), FormatError);
  CHECK_THROWS_AS(decode_image({}, GridTag::text), FormatError);
  CHECK_THROWS_AS(load_image("/nonexistent/none.png", GridTag::text), IoError);
  test::TempDir dir;
  std::ofstream(dir / "bad.png") << "not an image";
  CHECK_THROWS_AS(load_image(dir / "bad.png", GridTag::text), FormatError);
}

TEST_CASE("style assets require matching shapes") {
  const auto y = ImageGrid::filled(8, 8, GridTag::style);
  const auto x = ImageGrid::filled(8, 8, GridTag::structure);
  CHECK_NOTHROW(StyleAsset::make("s", y, x));
  CHECK_THROWS_AS(StyleAsset::make("s", y, ImageGrid::filled(8, 9, GridTag::structure)), ShapeError);
  CHECK_THROWS_AS(StyleAsset::make("s", x, x), ArgumentError);
  CHECK_THROWS_AS(StyleAsset::make("s", y, x, -1.0), ArgumentError);
}

TEST_CASE("paired crops are co-located, in bounds and cover every offset") {
  std::mt19937_64 seed_rng(3);
  const int h = 12, w = 10, size = 6;
  ImageGrid a = ImageGrid::filled(h, w, GridTag::style);
  ImageGrid b = ImageGrid::filled(h, w, GridTag::structure);
  // Encode the pixel position so each crop reveals its offset.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float code = static_cast<float>(y * w + x) / (h * w);
      for (int c = 0; c < 3; ++c) a.at(c, y, x) = code;
      b.at(0, y, x) = code;
    }
  Rng rng = make_rng(5, "crop");
  std::vector<int> seen((h - size + 1) * (w - size + 1), 0);
  for (int i = 0; i < 2000; ++i) {
    const auto [ca, cb] = random_crop_pair(a, b, size, rng);
    REQUIRE(ca.height == size);
    REQUIRE(cb.width == size);
    CHECK(ca.at(1, 0, 0) == cb.at(0, 0, 0));
    CHECK(ca.at(2, size - 1, size - 1) == cb.at(0, size - 1, size - 1));
    const int idx = static_cast<int>(std::lround(cb.at(0, 0, 0) * h * w));
    const int top = idx / w, left = idx % w;
    REQUIRE(top <= h - size);
    REQUIRE(left <= w - size);
    ++seen[top * (w - size + 1) + left];
  }
  for (int s : seen) CHECK(s > 0);
  CHECK_THROWS_AS(random_crop_pair(a, b, 11, rng), ArgumentError);
  CHECK_THROWS_AS(random_crop_pair(a, ImageGrid::filled(12, 11, GridTag::structure), 4, rng), ShapeError);
}

TEST_CASE("noise injection has the requested spread and stays in range") {
  const auto zero = ImageGrid::filled(128, 128, GridTag::structure, 0.0f);
  Rng rng = make_rng(9, "noise");
  const auto noisy = inject_noise(zero, 0.2, rng);
  double sum = 0, sq = 0;
  for (float v : noisy.values) {
    sum += v;
    sq += double(v) * v;
  }
  const double n = static_cast<double>(noisy.values.size());
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.005);
  CHECK(sd == doctest::Approx(0.2).epsilon(0.02));

  const auto edge = ImageGrid::filled(64, 64, GridTag::structure, 1.0f);
  const auto clipped = inject_noise(edge, 0.5, rng);
  CHECK_NOTHROW(clipped.validate());
  CHECK(inject_noise(edge, 0.0, rng) == edge);
  CHECK_THROWS_AS(inject_noise(edge, -0.1, rng), ArgumentError);
}

TEST_CASE("named random streams are independent and reproducible") {
  Rng a = make_rng(1, "x"), b = make_rng(1, "x"), c = make_rng(1, "y"), d = make_rng(2, "x");
  const auto first = a();
  CHECK(first == b());
  CHECK(first != c());
  CHECK(first != d());
}

TEST_CASE("rendered text datasets are deterministic two-class rasters") {
  TextDatasetOptions o;
  o.count = 6;
  o.size = 32;
  o.seed = 4;
  o.glyph_set = "ABC";
  const auto a = build_text_dataset(o);
  const auto b = build_text_dataset(o);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == b[i]);
    CHECK(has_both_classes(a[i]));
    CHECK(a[i].height == 32);
  }
  o.procedural = true;
  const auto strokes = build_text_dataset(o);
  CHECK(strokes.size() == 6);
  CHECK_FALSE(strokes[0] == a[0]);
  o.count = 0;
  CHECK_THROWS_AS(build_text_dataset(o), ArgumentError);
}

TEST_CASE("text directories load sorted, resized and filtered") {
  test::TempDir dir;
  save_png(test::block_glyph(16, 4, 4, 8, 8), dir / "b.png");
  save_png(ImageGrid::filled(16, 16, GridTag::text), dir / "blank.png");  // single class, skipped
  save_png(test::block_glyph(32, 0, 0, 16, 32), dir / "a.png");
  std::ofstream(dir / "notes.txt") << "ignored";
  const auto ds = load_text_dataset(dir.path(), 16, false);
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].height == 16);
  CHECK(ds[0].at(0, 0, 0) == 1.0f);   // a.png: top half is ink
  CHECK(ds[0].at(0, 15, 0) == -1.0f);
  CHECK_THROWS_AS(load_text_dataset(dir / "missing", 16, false), IoError);
  test::TempDir empty;
  CHECK_THROWS_AS(load_text_dataset(empty.path(), 16, false), ArgumentError);
}

TEST_CASE("tensor conversion round trips") {
  std::mt19937_64 rng(2);
  const auto g = test::random_grid(5, 6, GridTag::style, rng);
  const std::vector<ImageGrid> batch{g, g};
  const auto t = to_batch<float>(batch);
  CHECK(t.shape() == Shape{2, 3, 5, 6});
  CHECK(from_tensor(t, 1, GridTag::style) == g);
  CHECK_THROWS_AS(from_tensor(t, 2, GridTag::style), ShapeError);
  const std::vector<ImageGrid> mixed{g, ImageGrid::filled(5, 6, GridTag::text)};
  CHECK_THROWS_AS(to_batch<float>(mixed), ShapeError);
}
