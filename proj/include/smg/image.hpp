#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smg/rng.hpp"
#include "smg/tensor.hpp"

namespace smg::imageio {

enum class GridTag { style, structure, text, output };

const char* tag_name(GridTag tag) noexcept;

/// Expected channel count: 3 for style/output rasters, 1 for structure/text.
int tag_channels(GridTag tag) noexcept;

/**
 * H x W x C raster with values in [-1, 1], stored channel-major (CHW).
 * Foreground (ink, style subject) is +1 and background -1 for single-channel grids.
 */
struct ImageGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  GridTag tag = GridTag::output;
  std::vector<float> values;

  static ImageGrid filled(int height, int width, GridTag tag, float value = -1.0f);

  float& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height) * width; }

  /// Throws ArgumentError when the range or channel invariants are violated.
  void validate() const;

  bool operator==(const ImageGrid&) const = default;
};

ImageGrid load_image(const std::filesystem::path& path, GridTag tag, bool invert = false);

/// Decodes an in-memory PNG/JPEG with the same conventions as load_image.
ImageGrid decode_image(std::span<const std::uint8_t> bytes, GridTag tag, bool invert = false);

/// 8-bit PNG, value v written as round(255 * (v + 1) / 2).
std::vector<std::uint8_t> encode_png(const ImageGrid& grid);
void save_png(const ImageGrid& grid, const std::filesystem::path& path);

struct StyleAsset {
  std::string name;
  ImageGrid style;
  ImageGrid structure;
  double legibility_weight = 0.0;

  /// Validates channel counts, matching dimensions and a nonnegative weight.
  static StyleAsset make(std::string name, ImageGrid style, ImageGrid structure, double legibility_weight = 0.0);
};

ImageGrid crop(const ImageGrid& grid, int top, int left, int height, int width);

/// Co-located size x size windows of a and b at one offset drawn uniformly.
std::pair<ImageGrid, ImageGrid> random_crop_pair(const ImageGrid& a, const ImageGrid& b, int size, Rng& rng);

inline constexpr int kDefaultCropSize = 256;
inline constexpr double kDefaultNoiseStd = 0.2;

/// x + N(0, std^2) elementwise, clamped to [-1, 1].
ImageGrid inject_noise(const ImageGrid& x, double std_dev, Rng& rng);

/// Single-channel text rasters used to train the sketch module and the legibility term.
class TextDataset {
 public:
  TextDataset(std::vector<ImageGrid> samples, std::uint64_t seed);

  const std::vector<ImageGrid>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  const ImageGrid& operator[](std::size_t i) const { return samples_.at(i); }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::vector<ImageGrid> samples_;
  std::uint64_t seed_;
};

/// True when the grid has at least one pixel > 0 and one pixel < 0.
bool has_both_classes(const ImageGrid& grid);

inline constexpr const char* kDefaultGlyphSet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

struct TextDatasetOptions {
  std::vector<std::filesystem::path> font_dirs;
  std::string glyph_set = kDefaultGlyphSet;
  int count = 0;
  std::uint64_t seed = 0;
  int size = 256;
  /// Random thick strokes instead of glyphs; also used when glyph_set is empty.
  bool procedural = false;
};

/**
 * Renders `count` glyph images. TrueType/OpenType fonts found under font_dirs
 * are used when present, otherwise OpenCV's built-in Hershey stroke fonts.
 */
TextDataset build_text_dataset(const TextDatasetOptions& options);

/// Loads every PNG/JPEG under dir as a text sample resized to size x size.
TextDataset load_text_dataset(const std::filesystem::path& dir, int size, bool invert, std::uint64_t seed = 0);

template <typename T>
Tensor<T> to_tensor(const ImageGrid& grid);

template <typename T>
Tensor<T> to_batch(std::span<const ImageGrid> grids);

/// Extracts sample `index` of an NCHW tensor, clamping into [-1, 1].
template <typename T>
ImageGrid from_tensor(const Tensor<T>& t, int index, GridTag tag);

}  // namespace smg::imageio

namespace smg {
using imageio::GridTag;
using imageio::ImageGrid;
}  // namespace smg
