#include "smg/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numbers>
#include <sstream>

namespace smg::pipeline {

namespace fs = std::filesystem;

namespace {

// Runs one training stage, rethrowing failures with the stage named but their type kept.
template <typename F>
auto in_stage(const std::string& stage, F&& body) -> decltype(body()) {
  auto tag = [&](const std::exception& e) { return stage + " stage: " + e.what(); };
  try {
    return body();
  } catch (const DivergenceError& e) {
    throw DivergenceError(tag(e));
  } catch (const StateError& e) {
    throw StateError(tag(e));
  } catch (const ArgumentError& e) {
    throw ArgumentError(tag(e));
  } catch (const ShapeError& e) {
    throw ShapeError(tag(e));
  } catch (const FormatError& e) {
    throw FormatError(tag(e));
  } catch (const IoError& e) {
    throw IoError(tag(e));
  } catch (const LookupError& e) {
    throw LookupError(tag(e));
  } catch (const Error& e) {
    throw Error(tag(e));
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string value_or(const Metadata& m, const std::string& key, const std::string& fallback = {}) {
  auto it = m.find(key);
  return it == m.end() ? fallback : it->second;
}

void require_level(double level) {
  if (!(level >= 0.0 && level <= 1.0)) throw ArgumentError("level must lie in [0, 1], got " + std::to_string(level));
}

}  // namespace

imageio::StyleAsset make_toy_style(int size, const std::string& name) {
  if (size < 8 || size % 4 != 0) throw ArgumentError("toy style size must be a multiple of 4 and at least 8");
  ImageGrid X = ImageGrid::filled(size, size, GridTag::structure, -1.0f);
  ImageGrid Y = ImageGrid::filled(size, size, GridTag::style, 0.0f);
  const double centre = (size - 1) / 2.0;
  // About two stroke widths of toy text. Much larger discs come back from the sketch module as rings.
  const double radius = 0.15 * size;
  const double period = size / 4.0;
  static constexpr float ground[] = {-0.8f, -0.75f, -0.7f};
  static constexpr float base[] = {0.55f, 0.15f, -0.25f};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool inside = std::hypot(x - centre, y - centre) <= radius;
      X.at(0, y, x) = inside ? 1.0f : -1.0f;
      for (int c = 0; c < 3; ++c) {
        const double phase = 2.0 * std::numbers::pi * ((x + y) / period + c / 3.0);
        Y.at(c, y, x) = inside ? std::clamp(base[c] + 0.3f * static_cast<float>(std::sin(phase)), -1.0f, 1.0f)
                               : ground[c];
      }
    }
  }
  return imageio::StyleAsset::make(name, std::move(Y), std::move(X));
}

imageio::TextDatasetOptions toy_text_options(int size, int count, std::uint64_t seed) {
  imageio::TextDatasetOptions o;
  o.size = size;
  o.count = count;
  o.seed = seed;
  o.font_dirs = {"/usr/share/fonts"};
  o.glyph_set = "ABCDEFGHKLMNOPRSTUVWXYZ";
  return o;
}

TrainStyleConfig TrainStyleConfig::toy(int steps, std::uint64_t seed) {
  TrainStyleConfig c;
  c.sketch.steps = steps;
  c.sketch.base_width = 16;
  c.sketch.d_width = 16;
  c.sketch.crop_size = 0;
  c.sketch.sigma_scale = 64.0 / 256.0;
  c.sketch.seed = seed;

  c.glyph.stage_steps = {steps, steps, steps};
  c.glyph.base_width = 16;
  c.glyph.d_width = 16;
  c.glyph.crop_size = 32;
  c.glyph.seed = seed;

  c.texture.steps = steps;
  c.texture.base_width = 16;
  c.texture.d_width = 16;
  c.texture.crop_size = 32;
  c.texture.extractor_width_divisor = 8;
  c.texture.seed = seed;
  return c;
}

fs::path bundle_directory(const fs::path& styles_dir, const std::string& name) {
  if (name.empty() || name == "." || name == ".." || name.find_first_of("/\\") != std::string::npos) {
    throw ArgumentError("invalid style name '" + name + "'");
  }
  return styles_dir / name;
}

Metadata read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw StateError("missing manifest " + path.string());
  Metadata m;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("malformed manifest line in " + path.string(), here);
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

void write_manifest(const Metadata& manifest, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& [k, v] : manifest) {
      if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
        throw ArgumentError("manifest entry '" + k + "' cannot be stored");
      }
      out << k << '=' << v << '\n';
    }
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void save_bundle(StyleModelBundle& bundle, const fs::path& styles_dir) {
  const fs::path dir = bundle_directory(styles_dir, bundle.name);
  fs::create_directories(dir);
  bundle.glyph.save(dir / kGlyphFile);
  bundle.texture.save(dir / kTextureFile);
  bundle.manifest["name"] = bundle.name;
  bundle.manifest["format"] = std::to_string(kBundleFormat);
  bundle.manifest["glyph_sha256"] = backbone::file_sha256(dir / kGlyphFile);
  bundle.manifest["texture_sha256"] = backbone::file_sha256(dir / kTextureFile);
  bundle.manifest["sketch_checkpoint"] = bundle.sketch_checkpoint.string();
  write_manifest(bundle.manifest, dir / kManifestFile);
}

StyleModelBundle load_bundle(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw StateError("no bundle directory " + dir.string());
  StyleModelBundle b;
  b.manifest = read_manifest(dir / kManifestFile);
  b.name = value_or(b.manifest, "name", dir.filename().string());
  b.glyph = glyph::GlyphModule::load(dir / kGlyphFile);
  b.texture = texture::TextureModule::load(dir / kTextureFile);
  b.sketch_checkpoint = value_or(b.manifest, "sketch_checkpoint");
  if (b.glyph.style() != b.name || b.texture.style() != b.name) {
    throw FormatError("bundle " + dir.string() + " mixes styles: manifest '" + b.name + "', glyph '" + b.glyph.style() +
                      "', texture '" + b.texture.style() + "'");
  }
  return b;
}

TrainingLock::TrainingLock(const fs::path& dir) : path_(dir / ".lock") {
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw StateError("bundle " + dir.string() + " is locked by another training run (" + path_.string() + ")");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

TrainingLock::~TrainingLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

StyleModelBundle train_style(const imageio::StyleAsset& style, const imageio::TextDataset& dataset,
                             const TrainStyleConfig& cfg, const fs::path& styles_dir, const fs::path& sketch_path,
                             TrainStyleReport* report, const training::Observer& observer) {
  const fs::path dir = bundle_directory(styles_dir, style.name);
  fs::create_directories(dir);
  TrainingLock lock(dir);
  TrainStyleReport local;
  TrainStyleReport& rep = report ? *report : local;

  sketch::SketchModule sketcher;
  std::error_code ec;
  if (fs::exists(sketch_path, ec)) {
    sketcher = in_stage("sketch", [&] { return sketch::SketchModule::load(sketch_path); });
  } else {
    auto trained = in_stage("sketch", [&] { return sketch::train_sketch(dataset, cfg.sketch, observer); });
    if (sketch_path.has_parent_path()) fs::create_directories(sketch_path.parent_path());
    trained.module.save(sketch_path);
    sketcher = std::move(trained.module);
    rep.sketch_trained = true;
    rep.sketch_history = std::move(trained.history);
  }

  auto g = in_stage("glyph", [&] { return glyph::train_glyph(sketcher, style, dataset, cfg.glyph, observer); });
  rep.glyph_history = std::move(g.history);
  auto t = in_stage("texture", [&] { return texture::train_texture(style, g.module, dataset, cfg.texture, observer); });
  rep.texture_history = std::move(t.history);

  StyleModelBundle bundle;
  bundle.name = style.name;
  bundle.glyph = std::move(g.module);
  bundle.texture = std::move(t.module);
  bundle.sketch_checkpoint = fs::absolute(sketch_path);
  const auto& gw = cfg.glyph.weights;
  const auto& tw = cfg.texture.weights;
  bundle.manifest = {
      {"trained_at", utc_timestamp()},
      {"sketch_sha256", backbone::file_sha256(sketch_path)},
      {"K", std::to_string(cfg.glyph.K)},
      {"lambda_glyph_rec", backbone::format_double(gw.rec)},
      {"lambda_glyph_adv", backbone::format_double(gw.adv)},
      {"lambda_gly", backbone::format_double(gw.gly)},
      {"lambda_texture_rec", backbone::format_double(tw.rec)},
      {"lambda_texture_adv", backbone::format_double(tw.adv)},
      {"lambda_style", backbone::format_double(tw.style)},
      {"crop_size", bundle.glyph.meta().count("crop_size") ? bundle.glyph.meta().at("crop_size") : ""},
      {"glyph_stage_steps", value_or(bundle.glyph.meta(), "stage_steps")},
      {"texture_steps", std::to_string(cfg.texture.steps)},
      {"noise_std", backbone::format_double(cfg.glyph.noise_std)},
  };
  save_bundle(bundle, styles_dir);
  return bundle;
}

ImageGrid stylize(const StyleModelBundle& bundle, const ImageGrid& text, double level, std::uint64_t seed) {
  return mashup(bundle, bundle, text, level, seed);
}

ImageGrid mashup(const StyleModelBundle& glyph_bundle, const StyleModelBundle& texture_bundle, const ImageGrid& text,
                 double level, std::uint64_t seed) {
  require_level(level);
  const ImageGrid shaped = glyph::transfer_structure(glyph_bundle.glyph, text, level, seed);
  if (shaped.height != text.height || shaped.width != text.width) throw ShapeError("structure stage changed dimensions");
  return texture::render_texture(texture_bundle.texture, shaped, seed);
}

std::vector<Frame> make_schedule(double level_start, double level_end, int frames, std::uint64_t seed, SeedMode mode) {
  if (frames < 1) throw ArgumentError("an animation needs at least one frame");
  require_level(level_start);
  require_level(level_end);
  std::vector<Frame> out;
  out.reserve(static_cast<std::size_t>(frames));
  for (int i = 0; i < frames; ++i) {
    const double t = frames == 1 ? 0.0 : static_cast<double>(i) / (frames - 1);
    const double level = std::clamp(level_start + (level_end - level_start) * t, 0.0, 1.0);
    out.push_back({level, mode == SeedMode::walk ? seed + static_cast<std::uint64_t>(i) : seed});
  }
  return out;
}

std::vector<fs::path> animate(const StyleModelBundle& bundle, const ImageGrid& text, const std::vector<Frame>& schedule,
                              const fs::path& out_dir) {
  if (schedule.empty()) throw ArgumentError("empty animation schedule");
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  std::ostringstream index;
  index << "frame\tlevel\tseed\tfile\n";
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05zu.png", i);
    const fs::path file = out_dir / name;
    imageio::save_png(stylize(bundle, text, schedule[i].level, schedule[i].seed), file);
    index << i << '\t' << backbone::format_double(schedule[i].level) << '\t' << schedule[i].seed << '\t' << name
          << '\n';
    files.push_back(file);
  }
  std::ofstream out(out_dir / "index.tsv", std::ios::trunc);
  out << index.str();
  if (!out) throw IoError("cannot write " + (out_dir / "index.tsv").string());
  return files;
}

std::vector<CatalogEntry> scan_catalog(const fs::path& styles_dir) {
  std::error_code ec;
  fs::directory_iterator it(styles_dir, ec);
  if (ec) throw IoError("cannot read styles directory " + styles_dir.string() + ": " + ec.message());
  std::vector<CatalogEntry> out;
  for (const auto& entry : it) {
    if (!entry.is_directory(ec)) continue;
    CatalogEntry c;
    c.name = entry.path().filename().string();
    try {
      const auto m = read_manifest(entry.path() / kManifestFile);
      c.trained_at = value_or(m, "trained_at");
      c.lambda_gly = m.count("lambda_gly") ? backbone::meta_double(m, "lambda_gly") : 0.0;
      c.glyph_sha256 = value_or(m, "glyph_sha256");
      c.texture_sha256 = value_or(m, "texture_sha256");
      c.sketch_sha256 = value_or(m, "sketch_sha256");
      if (value_or(m, "name", c.name) != c.name) c.warning = "manifest name does not match directory";
      for (const char* f : {kGlyphFile, kTextureFile}) {
        if (!fs::is_regular_file(entry.path() / f, ec)) c.warning = std::string("missing ") + f;
      }
    } catch (const Error& e) {
      c.warning = e.what();
    }
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

StyleLibrary::StyleLibrary(fs::path styles_dir) : root_(std::move(styles_dir)) { rescan(); }

std::vector<CatalogEntry> StyleLibrary::rescan() {
  auto fresh = scan_catalog(root_);
  std::lock_guard lock(mutex_);
  catalog_ = fresh;
  return fresh;
}

std::vector<CatalogEntry> StyleLibrary::catalog() const {
  std::lock_guard lock(mutex_);
  return catalog_;
}

std::size_t StyleLibrary::loaded_count() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& e : catalog_) n += e.ok() ? 1 : 0;
  return n;
}

std::shared_ptr<const StyleModelBundle> StyleLibrary::get(const std::string& name) {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(mutex_);
    auto it = std::find_if(catalog_.begin(), catalog_.end(), [&](const auto& e) { return e.name == name; });
    if (it == catalog_.end()) throw LookupError("unknown style '" + name + "'");
    if (!it->ok()) throw StateError("style '" + name + "' is unusable: " + it->warning);
    auto& s = slots_[name];
    if (!s) s = std::make_shared<Slot>();
    slot = s;
  }
  std::lock_guard lock(slot->mutex);
  if (!slot->bundle) {
    try {
      slot->bundle = std::make_shared<const StyleModelBundle>(load_bundle(bundle_directory(root_, name)));
    } catch (const Error& e) {
      throw StateError("style '" + name + "' could not be loaded: " + e.what());
    }
  }
  return slot->bundle;
}

ImageGrid StyleLibrary::render(const RenderRequest& request) {
  require_level(request.level);
  if (!request.glyph_style.empty() && !request.texture_style.empty()) {
    const auto a = get(request.glyph_style);
    const auto b = get(request.texture_style);
    return mashup(*a, *b, request.text, request.level, request.seed);
  }
  if (request.style.empty()) throw ArgumentError("no style named in the request");
  return stylize(*get(request.style), request.text, request.level, request.seed);
}

SilhouetteReference SilhouetteReference::from_style(const imageio::StyleAsset& style) {
  SilhouetteReference ref;
  std::array<double, 3> fg{}, bg{};
  std::size_t nf = 0, nb = 0;
  const ImageGrid& X = style.structure;
  const ImageGrid& Y = style.style;
  for (int y = 0; y < X.height; ++y) {
    for (int x = 0; x < X.width; ++x) {
      const bool inside = X.at(0, y, x) > 0.0f;
      auto& acc = inside ? fg : bg;
      for (int c = 0; c < 3; ++c) acc[c] += Y.at(c, y, x);
      ++(inside ? nf : nb);
    }
  }
  if (nf == 0 || nb == 0) throw ArgumentError("structure map must contain both classes");
  for (int c = 0; c < 3; ++c) {
    ref.foreground[c] = static_cast<float>(fg[c] / nf);
    ref.background[c] = static_cast<float>(bg[c] / nb);
  }
  return ref;
}

std::vector<bool> silhouette(const ImageGrid& rgb, const SilhouetteReference& ref) {
  if (rgb.channels != 3) throw ArgumentError("silhouette needs a 3-channel image");
  std::vector<bool> mask(rgb.pixels());
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x) {
      double df = 0.0, db = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double v = rgb.at(c, y, x);
        df += (v - ref.foreground[c]) * (v - ref.foreground[c]);
        db += (v - ref.background[c]) * (v - ref.background[c]);
      }
      mask[static_cast<std::size_t>(y) * rgb.width + x] = df < db;
    }
  }
  return mask;
}

std::vector<bool> binarize(const ImageGrid& mono) {
  if (mono.channels != 1) throw ArgumentError("binarize needs a single-channel grid");
  std::vector<bool> mask(mono.pixels());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = mono.values[i] > 0.0f;
  return mask;
}

double iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw ShapeError("masks differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mismatch_fraction(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw ShapeError("masks differ in size");
  if (a.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

int boundary_length(const std::vector<bool>& mask, int height, int width) {
  if (mask.size() != static_cast<std::size_t>(height) * width) throw ShapeError("mask size mismatch");
  auto at = [&](int y, int x) { return mask[static_cast<std::size_t>(y) * width + x]; };
  int n = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const bool c = at(y, x);
      n += (y > 0 && at(y - 1, x) != c) || (y + 1 < height && at(y + 1, x) != c) || (x > 0 && at(y, x - 1) != c) ||
           (x + 1 < width && at(y, x + 1) != c);
    }
  }
  return n;
}

}  // namespace smg::pipeline
