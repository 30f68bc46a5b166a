#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bundle_fixture.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace smg;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SMG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("render --style a --text /dev/null --out x.png") == 2);          // --l missing
  CHECK(run("render --style a --text /nonexistent.png --l 0.5 --out x") == 2);  // text file missing
  test::TempDir dir;
  imageio::save_png(test::block_glyph(16, 2, 2, 8, 8), dir / "t.png");
  CHECK(run("render --style a --text " + (dir / "t.png").string() + " --l 1.5 --out x.png") == 2);
  CHECK(run("animate --style a --text " + (dir / "t.png").string() + " --seed-mode sideways --out-dir o") == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("missing models exit with 3") {
  test::TempDir dir;
  test::write_bundle(dir / "styles", "ink", 1);
  imageio::save_png(test::block_glyph(16, 2, 2, 8, 8), dir / "t.png");
  const std::string text = " --text " + (dir / "t.png").string();
  CHECK(run("render --style nope --l 0.5 --styles-dir " + (dir / "styles").string() + text +
            " --out " + (dir / "o.png").string()) == 3);
  CHECK(run("render --style ink --l 0.5 --styles-dir " + (dir / "absent").string() + text +
            " --out " + (dir / "o.png").string()) == 3);
  fs::create_directories(dir / "styles" / "hollow");
  CHECK(run("render --style hollow --l 0.5 --styles-dir " + (dir / "styles").string() + text +
            " --out " + (dir / "o.png").string()) == 3);
}

TEST_CASE("render, mashup and animate write the library outputs") {
  test::TempDir dir;
  const auto a = test::write_bundle(dir / "styles", "a", 1);
  const auto b = test::write_bundle(dir / "styles", "b", 9);
  const auto glyph = test::block_glyph(16, 3, 4, 9, 7);
  imageio::save_png(glyph, dir / "t.png");
  const auto text = imageio::load_image(dir / "t.png", GridTag::text);
  const std::string common = " --styles-dir " + (dir / "styles").string() + " --text " + (dir / "t.png").string();

  REQUIRE(run("render --style a --l 0.25 --seed 4 --out " + (dir / "r.png").string() + common) == 0);
  auto png = imageio::encode_png(pipeline::stylize(a, text, 0.25, 4));
  CHECK(slurp(dir / "r.png") == std::string(png.begin(), png.end()));

  REQUIRE(run("mashup --glyph-style a --texture-style b --l 0.75 --seed 2 --out " + (dir / "m.png").string() + common) == 0);
  png = imageio::encode_png(pipeline::mashup(a, b, text, 0.75, 2));
  CHECK(slurp(dir / "m.png") == std::string(png.begin(), png.end()));

  REQUIRE(run("animate --style b --frames 3 --seed 5 --seed-mode walk --out-dir " + (dir / "anim").string() + common) == 0);
  CHECK(fs::exists(dir / "anim" / "frame_00002.png"));
  CHECK(fs::exists(dir / "anim" / "index.tsv"));
  png = imageio::encode_png(pipeline::stylize(b, text, 1.0, 7));
  CHECK(slurp(dir / "anim" / "frame_00002.png") == std::string(png.begin(), png.end()));

  ::setenv("SMG_STYLES_DIR", (dir / "styles").string().c_str(), 1);
  CHECK(run("render --style a --l 0 --text " + (dir / "t.png").string() + " --out " + (dir / "e.png").string()) == 0);
  ::unsetenv("SMG_STYLES_DIR");
}

TEST_CASE("toy assets") {
  test::TempDir dir;
  REQUIRE(run("toy-assets --out-dir " + (dir / "toy").string() + " --size 32 --text-count 3") == 0);
  const auto style = imageio::load_image(dir / "toy" / "style.png", GridTag::style);
  CHECK(style.height == 32);
  CHECK(imageio::load_image(dir / "toy" / "structure.png", GridTag::structure).at(0, 16, 16) == 1.0f);
  CHECK(fs::exists(dir / "toy" / "text" / "text_002.png"));
  CHECK(fs::exists(dir / "toy" / "input.png"));
}
