#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smg/image.hpp"
#include "smg/networks.hpp"
#include "smg/sketch.hpp"
#include "smg/training.hpp"

namespace smg::glyph {

using backbone::Checkpoint;
using backbone::Metadata;

/// Per-pixel legibility weights in [0, 1]: 0 on the glyph contour, rising with distance up to `cap`.
struct DistanceWeightMap {
  int height = 0;
  int width = 0;
  double cap = 0.0;
  std::vector<float> weights;

  float at(int y, int x) const { return weights[static_cast<std::size_t>(y) * width + x]; }
};

inline constexpr double kDefaultCapFraction = 0.15;

/// Exact squared Euclidean distance of every pixel to the nearest seed (seeds flagged true).
/// Pixels are unreachable only when there is no seed at all; they then hold -1.
std::vector<std::int64_t> squared_distance_transform(const std::vector<bool>& seeds, int height, int width);

/**
 * Contour = pixels (binarised at 0) having a 4-neighbour of the other class.
 * weight = min(d / cap, 1) with d the distance to the nearest contour pixel.
 * A single-class image has no contour and gets weight 1 everywhere.
 */
DistanceWeightMap distance_weight_map(const ImageGrid& text, double cap);
DistanceWeightMap distance_weight_map(const ImageGrid& text);

struct GlyphLossWeights {
  double rec = 100.0;
  double adv = 0.1;
  double gly = 0.0;  ///< 1 for styles whose shapes drift far from text
};

struct GlyphLosses {
  ad::Var<float> rec;
  ad::Var<float> adv_g;
  ad::Var<float> adv_d;
  ad::Var<float> gly;  ///< undefined when the legibility term is disabled
  ad::Var<float> objective;
};

/**
 * Losses for one batch sharing a level. `sketchy` is the (noisy) generator input
 * and `structure` its target; the legibility term runs a separate noise-free pass
 * on `text` weighted by `maps`, and is skipped when its weight is zero or text is empty.
 */
GlyphLosses glyph_losses(const backbone::Generator<float>& net, const backbone::Discriminator<float>& critic,
                         std::span<const ImageGrid> structure, std::span<const ImageGrid> sketchy, double level,
                         std::span<const ImageGrid> text, std::span<const DistanceWeightMap> maps,
                         const GlyphLossWeights& weights = {});

struct GlyphTrainConfig {
  int K = 3;
  std::array<int, 3> stage_steps{10000, 10000, 10000};
  GlyphLossWeights weights;
  backbone::AdamOptions adam;
  double noise_std = imageio::kDefaultNoiseStd;
  int crop_size = imageio::kDefaultCropSize;
  int base_width = 64;
  int n_resblocks = 6;
  double dropout = 0.5;
  int d_layers = 3;
  int d_width = 64;
  double cap_fraction = kDefaultCapFraction;
  /// Generate each stage's sketchy maps once per level instead of every step (identical values).
  bool cache_sketches = true;
  std::uint64_t seed = 0;

  void validate() const;
  backbone::GeneratorConfig generator_config() const;
};

/// Level grid of a curriculum stage (1-based): {1}, {0, 1}, {i / K}.
std::vector<double> stage_levels(int stage, int K);

class GlyphModule {
 public:
  GlyphModule() = default;
  GlyphModule(backbone::Generator<float> net, Metadata meta);

  bool ready() const noexcept { return net_.has_value(); }
  const backbone::Generator<float>& net() const;
  backbone::Generator<float>& net();
  const Metadata& meta() const noexcept { return meta_; }
  std::string style() const;
  double noise_std() const;

  Checkpoint to_checkpoint() const;
  static GlyphModule from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  static GlyphModule load(const std::filesystem::path& path);

 private:
  std::optional<backbone::Generator<float>> net_;
  Metadata meta_;
};

struct GlyphTrainResult {
  GlyphModule module;
  std::vector<training::StepRecord> history;
};

/// Three-stage curriculum: level 1, branch copy then {0, 1}, then {i / K}.
GlyphTrainResult train_glyph(const sketch::SketchModule& sketcher, const imageio::StyleAsset& style,
                             const imageio::TextDataset& dataset, const GlyphTrainConfig& cfg,
                             const training::Observer& observer = {});

/// One evaluation pass on the seeded-noise input.
ImageGrid transfer_structure(const GlyphModule& module, const ImageGrid& text, double level, std::uint64_t seed);

}  // namespace smg::glyph
