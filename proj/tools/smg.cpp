// Command-line front end: training, rendering, animation and the HTTP service.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "smg/pipeline.hpp"
#include "smg/server.hpp"

namespace fs = std::filesystem;
using namespace smg;

namespace {

enum Exit { kOk = 0, kInternal = 1, kArgument = 2, kState = 3, kDivergence = 4 };

struct TextSource {
  std::string text_dir;
  bool text_invert = false;
  std::vector<std::string> font_dirs;
  bool procedural = false;
  int count = 500;
  int size = 256;
  std::uint64_t seed = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--text-dir", text_dir, "directory of text images (PNG/JPEG)");
    cmd->add_flag("--text-invert", text_invert, "text images are dark ink on a light ground");
    cmd->add_option("--font-dir", font_dirs, "directories searched for TrueType/OpenType fonts");
    cmd->add_flag("--procedural", procedural, "use random strokes instead of glyphs");
    cmd->add_option("--text-count", count, "number of rendered text samples")->check(CLI::PositiveNumber);
    cmd->add_option("--text-size", size, "side of rendered text samples")->check(CLI::PositiveNumber);
  }

  imageio::TextDataset load() const {
    if (!text_dir.empty()) return imageio::load_text_dataset(text_dir, size, text_invert, seed);
    imageio::TextDatasetOptions o;
    o.count = count;
    o.size = size;
    o.seed = seed;
    o.procedural = procedural;
    for (const auto& d : font_dirs) o.font_dirs.emplace_back(d);
    if (o.font_dirs.empty() && !procedural) o.font_dirs.emplace_back("/usr/share/fonts");
    return imageio::build_text_dataset(o);
  }
};

training::Observer progress(int every) {
  auto start = std::make_shared<std::chrono::steady_clock::time_point>(std::chrono::steady_clock::now());
  return [every, start](const training::StepRecord& r) {
    if (every <= 0 || (r.step + 1) % every != 0) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - *start).count();
    std::fprintf(stderr, "[%s] step %d level %.3f", r.stage.c_str(), r.step + 1, r.level);
    for (const auto& [name, value] : r.terms) std::fprintf(stderr, " %s=%.4f", name.c_str(), value);
    std::fprintf(stderr, " (%.0f s)\n", s);
  };
}

std::vector<int> parse_triple(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stoi(part));
  if (out.size() == 1) out = {out[0], out[0], out[0]};
  if (out.size() != 3) throw ArgumentError("expected one step count or three comma-separated counts");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale-controllable artistic text stylisation"};
  app.require_subcommand(1);
  int log_every = 100;
  app.add_option("--log-every", log_every, "training progress interval (0 silences)");

  // toy-assets
  auto* toy = app.add_subcommand("toy-assets", "write the synthetic toy style, structure and text images");
  std::string toy_dir;
  int toy_size = 64, toy_count = 16;
  std::uint64_t toy_seed = 7;
  toy->add_option("--out-dir", toy_dir)->required();
  toy->add_option("--size", toy_size)->check(CLI::PositiveNumber);
  toy->add_option("--text-count", toy_count)->check(CLI::PositiveNumber);
  toy->add_option("--seed", toy_seed);

  // train-sketch
  auto* tsk = app.add_subcommand("train-sketch", "train the style-independent sketch module");
  TextSource sk_text;
  sk_text.attach(tsk);
  std::string sk_out;
  bool sk_toy = false;
  std::optional<int> sk_steps, sk_width, sk_crop;
  std::optional<double> sk_sigma;
  std::uint64_t sk_seed = 0;
  tsk->add_option("--out", sk_out, "checkpoint path")->required();
  tsk->add_flag("--toy", sk_toy, "toy-scale networks (width 16, blur scaled to 64-pixel text)");
  tsk->add_option("--sigma-scale", sk_sigma, "blur width multiplier, text size / 256")->check(CLI::PositiveNumber);
  tsk->add_option("--steps", sk_steps);
  tsk->add_option("--width", sk_width);
  tsk->add_option("--crop", sk_crop, "training crop side, 0 for whole samples");
  tsk->add_option("--seed", sk_seed);

  // train-style
  auto* tst = app.add_subcommand("train-style", "train the glyph and texture networks of one style");
  TextSource st_text;
  st_text.attach(tst);
  std::string st_style, st_structure, st_name, st_out, st_sketch, st_glyph_steps;
  bool st_invert = false, st_toy = false;
  double st_gly = 0.0;
  std::optional<int> st_sketch_steps, st_texture_steps, st_width, st_crop;
  std::optional<double> st_sigma;
  std::uint64_t st_seed = 0;
  tst->add_option("--style", st_style, "style image Y")->required()->check(CLI::ExistingFile);
  tst->add_option("--structure", st_structure, "structure map X")->required()->check(CLI::ExistingFile);
  tst->add_flag("--structure-invert", st_invert, "structure map is dark-on-light");
  tst->add_option("--name", st_name)->required();
  tst->add_option("--gly-weight", st_gly, "legibility weight")->check(CLI::IsMember({0.0, 1.0}));
  tst->add_option("--out-dir", st_out, "styles directory")->required();
  tst->add_option("--sketch", st_sketch, "sketch checkpoint (default <out-dir>/sketch.smg1; trained when absent)");
  tst->add_flag("--toy", st_toy, "toy-scale networks (width 16, 32-pixel crops, blur scaled to 64-pixel text)");
  tst->add_option("--sigma-scale", st_sigma, "blur width multiplier when training the sketch module")
      ->check(CLI::PositiveNumber);
  tst->add_option("--sketch-steps", st_sketch_steps);
  tst->add_option("--glyph-steps", st_glyph_steps, "N or N1,N2,N3 per curriculum stage");
  tst->add_option("--texture-steps", st_texture_steps);
  tst->add_option("--width", st_width);
  tst->add_option("--crop", st_crop);
  tst->add_option("--seed", st_seed);

  // render / mashup / animate share these
  std::string styles_dir, text_path, out_path;
  bool text_invert = false;
  double level = 0.0;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* cmd, bool with_level) {
    cmd->add_option("--styles-dir", styles_dir, "styles directory (default $SMG_STYLES_DIR or ./styles)");
    cmd->add_option("--text", text_path, "text image")->required()->check(CLI::ExistingFile);
    cmd->add_flag("--invert", text_invert, "text image is dark ink on a light ground");
    cmd->add_option("--seed", seed);
    if (with_level) cmd->add_option("--l", level, "stylistic degree")->required()->check(CLI::Range(0.0, 1.0));
  };

  auto* ren = app.add_subcommand("render", "stylise one text image");
  std::string style_name;
  common(ren, true);
  ren->add_option("--style", style_name)->required();
  ren->add_option("--out", out_path)->required();

  auto* mash = app.add_subcommand("mashup", "structure of one style with the texture of another");
  std::string glyph_style, texture_style;
  common(mash, true);
  mash->add_option("--glyph-style", glyph_style)->required();
  mash->add_option("--texture-style", texture_style)->required();
  mash->add_option("--out", out_path)->required();

  auto* ani = app.add_subcommand("animate", "render a level ramp as numbered frames");
  double l_start = 0.0, l_end = 1.0;
  int frames = 10;
  std::string seed_mode = "fixed";
  common(ani, false);
  ani->add_option("--style", style_name)->required();
  ani->add_option("--l-start", l_start)->check(CLI::Range(0.0, 1.0));
  ani->add_option("--l-end", l_end)->check(CLI::Range(0.0, 1.0));
  ani->add_option("--frames", frames)->check(CLI::PositiveNumber);
  ani->add_option("--seed-mode", seed_mode)->check(CLI::IsMember({"fixed", "walk"}));
  ani->add_option("--out-dir", out_path)->required();

  auto* srv = app.add_subcommand("serve", "HTTP inference service");
  int port = 8080;
  std::string host = "0.0.0.0";
  srv->add_option("--port", port)->check(CLI::Range(0, 65535));
  srv->add_option("--host", host);
  srv->add_option("--styles-dir", styles_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kArgument;
  }

  try {
    if (*toy) {
      fs::create_directories(fs::path(toy_dir) / "text");
      const auto style = pipeline::make_toy_style(toy_size);
      imageio::save_png(style.style, fs::path(toy_dir) / "style.png");
      imageio::save_png(style.structure, fs::path(toy_dir) / "structure.png");
      const auto ds = imageio::build_text_dataset(pipeline::toy_text_options(toy_size, toy_count, toy_seed));
      for (std::size_t i = 0; i < ds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "text_%03zu.png", i);
        imageio::save_png(ds[i], fs::path(toy_dir) / "text" / name);
      }
      imageio::save_png(ds[0], fs::path(toy_dir) / "input.png");
      return kOk;
    }

    if (*tsk) {
      auto cfg = sk_toy ? pipeline::TrainStyleConfig::toy().sketch : sketch::SketchTrainConfig{};
      if (sk_toy && tsk->count("--text-size") == 0) sk_text.size = 64;
      if (sk_steps) cfg.steps = *sk_steps;
      if (sk_width) cfg.base_width = cfg.d_width = *sk_width;
      if (sk_crop) cfg.crop_size = *sk_crop;
      if (sk_sigma) cfg.sigma_scale = *sk_sigma;
      cfg.seed = sk_seed;
      sk_text.seed = sk_seed;
      const auto ds = sk_text.load();
      auto result = sketch::train_sketch(ds, cfg, progress(log_every));
      if (fs::path(sk_out).has_parent_path()) fs::create_directories(fs::path(sk_out).parent_path());
      result.module.save(sk_out);
      if (!result.history.empty()) {
        std::fprintf(stderr, "final rec (mean of last 100 steps): %.4f\n",
                     training::trailing_mean(result.history, "rec", 100));
      }
      return kOk;
    }

    if (*tst) {
      auto cfg = st_toy ? pipeline::TrainStyleConfig::toy(2000, st_seed) : pipeline::TrainStyleConfig{};
      if (st_toy && tst->count("--text-size") == 0) st_text.size = 64;
      cfg.sketch.seed = cfg.glyph.seed = cfg.texture.seed = st_seed;
      if (st_sketch_steps) cfg.sketch.steps = *st_sketch_steps;
      if (st_sigma) cfg.sketch.sigma_scale = *st_sigma;
      if (!st_glyph_steps.empty()) {
        const auto s = parse_triple(st_glyph_steps);
        cfg.glyph.stage_steps = {s[0], s[1], s[2]};
      }
      if (st_texture_steps) cfg.texture.steps = *st_texture_steps;
      if (st_width) {
        cfg.sketch.base_width = cfg.sketch.d_width = *st_width;
        cfg.glyph.base_width = cfg.glyph.d_width = *st_width;
        cfg.texture.base_width = cfg.texture.d_width = *st_width;
      }
      if (st_crop) cfg.glyph.crop_size = cfg.texture.crop_size = *st_crop;
      cfg.glyph.weights.gly = st_gly;
      st_text.seed = st_seed;

      const auto asset = imageio::StyleAsset::make(st_name, imageio::load_image(st_style, GridTag::style),
                                                   imageio::load_image(st_structure, GridTag::structure, st_invert),
                                                   st_gly);
      const fs::path sketch_path = st_sketch.empty() ? fs::path(st_out) / pipeline::kSketchFile : fs::path(st_sketch);
      const auto ds = st_text.load();
      pipeline::TrainStyleReport report;
      pipeline::train_style(asset, ds, cfg, st_out, sketch_path, &report, progress(log_every));
      std::fprintf(stderr, "bundle written to %s%s\n", pipeline::bundle_directory(st_out, st_name).c_str(),
                   report.sketch_trained ? " (sketch module trained)" : " (sketch module reused)");
      return kOk;
    }

    if (*srv) {
      server::Service service(server::resolve_styles_dir(styles_dir));
      server::HttpServer http(service);
      const int bound = http.bind(host, port);
      std::fprintf(stderr, "listening on %s:%d\n", host.c_str(), bound);
      http.listen();
      return kOk;
    }

    pipeline::StyleLibrary library(server::resolve_styles_dir(styles_dir));
    const ImageGrid text = imageio::load_image(text_path, GridTag::text, text_invert);

    if (*ren || *mash) {
      pipeline::RenderRequest req{text, level, seed, style_name, glyph_style, texture_style};
      const auto start = std::chrono::steady_clock::now();
      const ImageGrid out = library.render(req);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      imageio::save_png(out, out_path);
      std::fprintf(stderr, "rendered %dx%d in %.1f ms\n", out.width, out.height, ms);
      return kOk;
    }

    if (*ani) {
      const auto mode = seed_mode == "walk" ? pipeline::SeedMode::walk : pipeline::SeedMode::fixed;
      const auto files = pipeline::animate(*library.get(style_name), text,
                                           pipeline::make_schedule(l_start, l_end, frames, seed, mode), out_path);
      std::fprintf(stderr, "wrote %zu frames to %s\n", files.size(), out_path.c_str());
      return kOk;
    }
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDivergence;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kArgument;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kArgument;
  } catch (const Error& e) {
    // State, lookup, format and I/O failures all concern missing or unusable models and files.
    std::fprintf(stderr, "error: %s\n", e.what());
    return kState;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternal;
  }
  return kOk;
}
