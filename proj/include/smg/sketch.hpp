#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "smg/image.hpp"
#include "smg/networks.hpp"
#include "smg/training.hpp"

namespace smg::sketch {

using backbone::Checkpoint;
using backbone::Metadata;

inline constexpr double kSigmaSlope = 16.0;
inline constexpr double kSigmaIntercept = 8.0;
inline constexpr double kNaiveSharpness = 10.0;

/// sigma = scale * (16 * level + 8); ArgumentError for a level outside [0, 1] or a nonpositive scale.
/// The constants are pixels at the 256-pixel text size; smaller images pass size / 256.
double sigma_for_level(double level, double scale = 1.0);

/// Normalised Gaussian taps over [-r, r] with r = ceil(2 sigma).
std::vector<double> gaussian_kernel(double level, double scale = 1.0);

/// Separable blur (horizontal pass, then vertical) with reflect padding.
ImageGrid smooth(const ImageGrid& x, double level, double scale = 1.0);

/// Sigmoid of the sharpened blur, rescaled to [-1, 1]. Diagnostic stand-in for the learned block.
ImageGrid naive_sketch(const ImageGrid& x, double level, double sharpness = kNaiveSharpness);

struct SketchLossWeights {
  double rec = 100.0;
  double adv = 1.0;
};

struct SketchLosses {
  ad::Var<float> rec;
  ad::Var<float> adv_g;
  ad::Var<float> adv_d;
  ad::Var<float> objective;  ///< adv * adv_g + rec * rec
  ad::Var<float> fake;
};

/// Transformation-block input: the smoothed samples with a level channel appended.
Tensor<float> transform_input(std::span<const ImageGrid> smoothed, std::span<const double> levels);

/**
 * Reconstruction and adversarial terms for one batch. The discriminator scores
 * (candidate, level channel, smoothed text); adv_d sees a detached fake.
 */
SketchLosses sketch_losses(const backbone::Generator<float>& transform, const backbone::Discriminator<float>& critic,
                           std::span<const ImageGrid> text, std::span<const double> levels,
                           const SketchLossWeights& weights = {}, double sigma_scale = 1.0);

/// Smoothness block followed by the learned transformation block.
class SketchModule {
 public:
  SketchModule() = default;
  /// Reads `f_scale` from the metadata when present.
  SketchModule(backbone::Generator<float> transform, Metadata meta = {});

  bool ready() const noexcept { return transform_.has_value(); }
  /// StateError when no network is loaded.
  const backbone::Generator<float>& transform() const;
  const Metadata& meta() const noexcept { return meta_; }
  double f_slope() const noexcept { return kSigmaSlope; }
  double f_intercept() const noexcept { return kSigmaIntercept; }
  double sigma_scale() const noexcept { return sigma_scale_; }

  Checkpoint to_checkpoint() const;
  static SketchModule from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  /// StateError when the file does not exist; FormatError when it is not a sketch checkpoint.
  static SketchModule load(const std::filesystem::path& path);

 private:
  std::optional<backbone::Generator<float>> transform_;
  Metadata meta_;
  double sigma_scale_ = 1.0;
};

/// transform(smooth(x, level, module.sigma_scale()), level), evaluation mode.
ImageGrid generate_sketchy_structure(const SketchModule& module, const ImageGrid& x, double level);

struct SketchTrainConfig {
  int steps = 20000;
  int batch_size = 1;
  int crop_size = 0;  ///< 0 trains on whole samples
  int base_width = 64;
  int n_resblocks = 6;
  double dropout = 0.5;
  int d_layers = 3;
  int d_width = 64;
  double sigma_scale = 1.0;  ///< blur widths relative to 256-pixel text
  backbone::AdamOptions adam;
  SketchLossWeights weights;
  std::uint64_t seed = 0;

  backbone::GeneratorConfig generator_config() const;
};

struct SketchTrainResult {
  SketchModule module;
  std::vector<training::StepRecord> history;
};

/// Adversarial training on text samples with levels drawn uniformly from [0, 1].
SketchTrainResult train_sketch(const imageio::TextDataset& dataset, const SketchTrainConfig& cfg,
                               const training::Observer& observer = {});

}  // namespace smg::sketch
