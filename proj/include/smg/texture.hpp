#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smg/glyph.hpp"
#include "smg/image.hpp"
#include "smg/networks.hpp"
#include "smg/training.hpp"

namespace smg::texture {

using backbone::Checkpoint;
using backbone::Metadata;

/// One stage of the fixed pyramid: a 3x3 conv + ReLU, or a 2x2 max pool.
struct ExtractorLayer {
  enum class Kind { conv, pool };
  Kind kind = Kind::conv;
  int out_channels = 0;
  std::string tap;  ///< non-empty: the ReLU output is a style feature
};

/**
 * Frozen convolutional pyramid. Weights are either loaded (conv<i>.w / conv<i>.b
 * in an SMG1 file) or drawn from a seeded He-normal initialiser.
 */
class FeatureExtractor {
 public:
  FeatureExtractor(std::vector<ExtractorLayer> layers, int in_channels, std::uint64_t seed,
                   bool imagenet_input = false);

  /// 16-layer classification topology up to relu4_1, tapping relu1_1..relu4_1; widths divided by `width_divisor`.
  static FeatureExtractor vgg16(int width_divisor = 1, std::uint64_t seed = 0);

  /// Replaces every conv weight and bias from a checkpoint; shapes must match.
  void load_weights(const std::filesystem::path& path);

  /// Tapped activations in layer order.
  std::vector<ad::Var<float>> features(const ad::Var<float>& x) const;

  const std::vector<std::string>& taps() const noexcept { return taps_; }
  /// Equal weights 1/L over the taps.
  double layer_weight() const noexcept { return 1.0 / static_cast<double>(taps_.size()); }
  const backbone::ParamStore& params() const noexcept { return params_; }

 private:
  std::vector<ExtractorLayer> layers_;
  std::vector<std::string> taps_;
  int in_channels_;
  bool imagenet_input_;
  backbone::ParamStore params_;
};

/// G[i][j] = sum_hw F[i] F[j] / (C H W) for every sample of an NCHW tensor.
Tensor<float> gram_matrix(const Tensor<float>& features);

/// Target Grams of the style image, one per tap.
std::vector<Tensor<float>> style_targets(const ImageGrid& style, const FeatureExtractor& phi);

/// sum_l w_l * mean((Gram_l(gen) - target_l)^2).
ad::Var<float> style_loss(const ad::Var<float>& gen, std::span<const Tensor<float>> targets,
                          const FeatureExtractor& phi);
double style_loss(const ImageGrid& gen, const ImageGrid& style, const FeatureExtractor& phi);

struct TextureLossWeights {
  double rec = 100.0;
  double adv = 1.0;
  double style = 0.01;
};

struct TextureLosses {
  ad::Var<float> rec;
  ad::Var<float> adv_g;
  ad::Var<float> adv_d;
  ad::Var<float> style;  ///< undefined when the style term is disabled
  ad::Var<float> objective;
};

struct TextureBatch {
  std::vector<ImageGrid> input;      ///< noisy structure crops fed to the generator
  std::vector<ImageGrid> structure;  ///< clean structure crops conditioning the discriminator
  std::vector<ImageGrid> style;      ///< co-located style crops
  std::optional<ImageGrid> transferred;  ///< noisy structure-transfer output for the style term
};

TextureLosses texture_losses(const backbone::Generator<float>& net, const backbone::Discriminator<float>& critic,
                             const TextureBatch& batch, std::span<const Tensor<float>> targets,
                             const FeatureExtractor* phi, const TextureLossWeights& weights = {});

struct TextureTrainConfig {
  int steps = 20000;
  TextureLossWeights weights;
  backbone::AdamOptions adam;
  double noise_std = imageio::kDefaultNoiseStd;
  int crop_size = imageio::kDefaultCropSize;
  int base_width = 64;
  int n_resblocks = 6;
  double dropout = 0.5;
  int d_layers = 3;
  int d_width = 64;
  int K = 3;  ///< level grid for the style term
  int extractor_width_divisor = 1;
  std::filesystem::path extractor_weights;  ///< empty: seeded random pyramid
  std::uint64_t seed = 0;

  void validate() const;
  backbone::GeneratorConfig generator_config() const;
};

class TextureModule {
 public:
  TextureModule() = default;
  TextureModule(backbone::Generator<float> net, Metadata meta);

  bool ready() const noexcept { return net_.has_value(); }
  const backbone::Generator<float>& net() const;
  const Metadata& meta() const noexcept { return meta_; }
  std::string style() const;
  double noise_std() const;

  Checkpoint to_checkpoint() const;
  static TextureModule from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  static TextureModule load(const std::filesystem::path& path);

 private:
  std::optional<backbone::Generator<float>> net_;
  Metadata meta_;
};

struct TextureTrainResult {
  TextureModule module;
  std::vector<training::StepRecord> history;
};

/// The style term needs a ready glyph module and text samples; it is skipped when its weight is 0.
TextureTrainResult train_texture(const imageio::StyleAsset& style, const glyph::GlyphModule& glyph,
                                 const imageio::TextDataset& dataset, const TextureTrainConfig& cfg,
                                 const training::Observer& observer = {});

/// One evaluation pass on the seeded-noise input; 3-channel output.
ImageGrid render_texture(const TextureModule& module, const ImageGrid& structure, std::uint64_t seed);

}  // namespace smg::texture
