#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "smg/glyph.hpp"
#include "smg/sketch.hpp"
#include "smg/texture.hpp"

namespace smg::pipeline {

using backbone::Metadata;

inline constexpr const char* kSketchFile = "sketch.smg1";
inline constexpr const char* kGlyphFile = "glyph.smg1";
inline constexpr const char* kTextureFile = "texture.smg1";
inline constexpr const char* kManifestFile = "manifest";
inline constexpr int kBundleFormat = 1;

/// Synthetic style: a centred disc of radius 0.15 * size with a sinusoidal colour texture on a dark ground.
imageio::StyleAsset make_toy_style(int size = 64, const std::string& name = "toy");

/// Small rendered-glyph dataset used by the toy harness.
imageio::TextDatasetOptions toy_text_options(int size = 64, int count = 16, std::uint64_t seed = 7);

struct TrainStyleConfig {
  sketch::SketchTrainConfig sketch;
  glyph::GlyphTrainConfig glyph;
  texture::TextureTrainConfig texture;

  /// Width-16 networks, 32-pixel training crops of a 64x64 style, blur widths scaled to 64-pixel text,
  /// `steps` per stage.
  static TrainStyleConfig toy(int steps = 2000, std::uint64_t seed = 0);
};

struct StyleModelBundle {
  std::string name;
  glyph::GlyphModule glyph;
  texture::TextureModule texture;
  std::filesystem::path sketch_checkpoint;
  Metadata manifest;
};

std::filesystem::path bundle_directory(const std::filesystem::path& styles_dir, const std::string& name);

/// Writes glyph, texture and manifest under styles_dir/<name>/ (manifest last).
void save_bundle(StyleModelBundle& bundle, const std::filesystem::path& styles_dir);

/// StateError when the directory or a checkpoint is missing; FormatError when the parts disagree.
StyleModelBundle load_bundle(const std::filesystem::path& dir);

Metadata read_manifest(const std::filesystem::path& path);
void write_manifest(const Metadata& manifest, const std::filesystem::path& path);

/// Exclusive per-bundle training lock (a `.lock` file); StateError when already held.
class TrainingLock {
 public:
  explicit TrainingLock(const std::filesystem::path& dir);
  ~TrainingLock();
  TrainingLock(const TrainingLock&) = delete;
  TrainingLock& operator=(const TrainingLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct TrainStyleReport {
  bool sketch_trained = false;
  std::vector<training::StepRecord> sketch_history;
  std::vector<training::StepRecord> glyph_history;
  std::vector<training::StepRecord> texture_history;
};

/**
 * Sketch (only when `sketch_path` does not exist yet), glyph and texture
 * training, then a bundle under styles_dir/<name>/. Failures are rethrown with
 * the stage named in the message and their original error type.
 */
StyleModelBundle train_style(const imageio::StyleAsset& style, const imageio::TextDataset& dataset,
                             const TrainStyleConfig& cfg, const std::filesystem::path& styles_dir,
                             const std::filesystem::path& sketch_path, TrainStyleReport* report = nullptr,
                             const training::Observer& observer = {});

struct RenderRequest {
  ImageGrid text;
  double level = 0.0;
  std::uint64_t seed = 0;
  std::string style;
  std::string glyph_style;    ///< with texture_style: mash-up override
  std::string texture_style;
};

/// render_texture(transfer_structure(I, level, seed), seed).
ImageGrid stylize(const StyleModelBundle& bundle, const ImageGrid& text, double level, std::uint64_t seed);

/// Structure network of one bundle composed with the texture network of another.
ImageGrid mashup(const StyleModelBundle& glyph_bundle, const StyleModelBundle& texture_bundle, const ImageGrid& text,
                 double level, std::uint64_t seed);

struct Frame {
  double level = 0.0;
  std::uint64_t seed = 0;
};

enum class SeedMode { fixed, walk };

/// Linear level ramp; walk mode uses seed + i for frame i.
std::vector<Frame> make_schedule(double level_start, double level_end, int frames, std::uint64_t seed, SeedMode mode);

/// Renders each frame to frame_00000.png, ... and writes index.tsv (frame, level, seed, file).
std::vector<std::filesystem::path> animate(const StyleModelBundle& bundle, const ImageGrid& text,
                                           const std::vector<Frame>& schedule, const std::filesystem::path& out_dir);

struct CatalogEntry {
  std::string name;
  std::string trained_at;
  double lambda_gly = 0.0;
  std::string glyph_sha256;
  std::string texture_sha256;
  std::string sketch_sha256;
  std::string warning;  ///< non-empty for a malformed bundle

  bool ok() const noexcept { return warning.empty(); }
};

/// Lists every subdirectory of styles_dir; IoError when the directory cannot be read.
std::vector<CatalogEntry> scan_catalog(const std::filesystem::path& styles_dir);

/**
 * Read-only view of a styles directory. Bundles load lazily, once per name, and
 * are then shared between concurrent renders.
 */
class StyleLibrary {
 public:
  explicit StyleLibrary(std::filesystem::path styles_dir);

  const std::filesystem::path& root() const noexcept { return root_; }

  /// Re-reads the directory listing; already-loaded bundles stay cached.
  std::vector<CatalogEntry> rescan();
  std::vector<CatalogEntry> catalog() const;
  std::size_t loaded_count() const;

  /// LookupError for names not in the catalog; StateError when loading fails.
  std::shared_ptr<const StyleModelBundle> get(const std::string& name);

  /// stylize, or mashup when both override names are set.
  ImageGrid render(const RenderRequest& request);

 private:
  // Once-only load latch: the first caller loads under the slot mutex, later callers reuse.
  struct Slot {
    std::mutex mutex;
    std::shared_ptr<const StyleModelBundle> bundle;
  };

  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::vector<CatalogEntry> catalog_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
};

/// Pixels whose colour is closer to the foreground mean than to the background mean of the style.
struct SilhouetteReference {
  std::array<float, 3> background{};
  std::array<float, 3> foreground{};

  static SilhouetteReference from_style(const imageio::StyleAsset& style);
};

std::vector<bool> silhouette(const ImageGrid& rgb, const SilhouetteReference& ref);
std::vector<bool> binarize(const ImageGrid& mono);
double iou(const std::vector<bool>& a, const std::vector<bool>& b);
double mismatch_fraction(const std::vector<bool>& a, const std::vector<bool>& b);
/// Number of pixels with a 4-neighbour of the other class.
int boundary_length(const std::vector<bool>& mask, int height, int width);

}  // namespace smg::pipeline
