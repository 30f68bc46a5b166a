#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "smg/checkpoint.hpp"
#include "smg/params.hpp"
#include "smg/rng.hpp"

namespace smg::backbone {

struct GeneratorConfig {
  int in_channels = 1;
  int out_channels = 1;
  int base_width = 64;
  int n_resblocks = 6;
  bool controllable = false;
  double dropout_rate = 0.5;

  void validate() const;
  /// Architecture keys stored alongside checkpoints.
  void write_meta(Metadata& meta) const;
  static GeneratorConfig from_meta(const Metadata& meta);
};

struct DiscriminatorConfig {
  int in_channels = 1;
  int n_layers = 3;  ///< stride-2 convolutions
  int base_width = 64;

  void validate() const;
};

/// Two 3x3 convolutions with instance normalisation, ReLU between them.
template <typename T>
struct ResidualBranch {
  ad::Var<T> conv1;
  ad::Var<T> conv2;
};

template <typename T>
struct ControllableResBlockState {
  ResidualBranch<T> branch_max;  ///< F1, the only branch used at level 1
  ResidualBranch<T> branch_min;  ///< F0, the only branch used at level 0
};

/// Dropout is applied between the convolutions iff rng is non-null.
template <typename T>
ad::Var<T> residual_branch(const ad::Var<T>& x, const ResidualBranch<T>& branch, double dropout_rate, Rng* rng);

/// x + F(x).
template <typename T>
ad::Var<T> resblock_forward(const ad::Var<T>& x, const ResidualBranch<T>& branch, double dropout_rate, Rng* rng);

/**
 * x + level * F1(x) + (1 - level) * F0(x). A branch whose weight is zero is
 * skipped, so the endpoints reduce bit-exactly to the plain residual blocks.
 */
template <typename T>
ad::Var<T> controllable_resblock_forward(const ad::Var<T>& x, double level, const ControllableResBlockState<T>& state,
                                         double dropout_rate, Rng* rng);

/**
 * Encoder-decoder generator: 7x7 conv, two stride-2 3x3 convs, residual
 * blocks, two nearest-upsample + 3x3 conv stages and a 7x7 conv with tanh.
 * All generator convolutions use reflect padding.
 */
template <typename T>
class Generator {
 public:
  Generator(GeneratorConfig config, std::uint64_t init_seed);
  /// Adopts existing parameters, verifying every expected tensor and shape.
  Generator(GeneratorConfig config, const BasicParamStore<T>& params);

  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;

  const GeneratorConfig& config() const noexcept { return config_; }
  BasicParamStore<T>& params() noexcept { return params_; }
  const BasicParamStore<T>& params() const noexcept { return params_; }

  /// Training mode enables dropout driven by rng; the rng must outlive training.
  void set_training(Rng* rng) noexcept { dropout_rng_ = rng; }
  void set_eval() noexcept { dropout_rng_ = nullptr; }
  bool training() const noexcept { return dropout_rng_ != nullptr; }

  /// level is required iff the generator is controllable; spatial dims must be divisible by 4.
  ad::Var<T> forward(const ad::Var<T>& x, std::optional<double> level = std::nullopt) const;

  /// Evaluation-mode pass without graph recording. Safe to call concurrently.
  Tensor<T> infer(const Tensor<T>& x, std::optional<double> level = std::nullopt) const;

  /// Overwrites every F0 branch with its F1 counterpart.
  void copy_branch_params();

  ControllableResBlockState<T> block_state(int block) const;
  ResidualBranch<T> plain_block(int block) const;

  std::uint64_t forward_passes() const noexcept { return passes_->load(); }

 private:
  void declare(std::uint64_t seed);
  ad::Var<T> forward_impl(const ad::Var<T>& x, std::optional<double> level, Rng* rng) const;

  GeneratorConfig config_;
  BasicParamStore<T> params_;
  Rng* dropout_rng_ = nullptr;
  std::unique_ptr<std::atomic<std::uint64_t>> passes_ = std::make_unique<std::atomic<std::uint64_t>>(0);
};

/**
 * Patch discriminator: n_layers stride-2 4x4 convs, one stride-1 4x4 conv and a
 * final 4x4 conv to one channel, all with zero padding 1 and leaky ReLU (0.2).
 * Outputs raw scores per patch.
 */
template <typename T>
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig config, std::uint64_t init_seed);

  const DiscriminatorConfig& config() const noexcept { return config_; }
  BasicParamStore<T>& params() noexcept { return params_; }
  const BasicParamStore<T>& params() const noexcept { return params_; }

  ad::Var<T> forward(const ad::Var<T>& x) const;

  /// Score-map side length for a square input of the given size.
  static int output_size(int input_size, int n_layers);

 private:
  DiscriminatorConfig config_;
  BasicParamStore<T> params_;
};

/// Least-squares adversarial terms (targets 1 for real, 0 for fake).
template <typename T>
ad::Var<T> lsgan_generator_loss(const ad::Var<T>& fake_scores);

template <typename T>
ad::Var<T> lsgan_discriminator_loss(const ad::Var<T>& real_scores, const ad::Var<T>& fake_scores);

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline constexpr double kDefaultLearningRate = 2e-4;

/// Adam over every parameter of a store; parameters without a gradient are skipped.
template <typename T>
class Adam {
 public:
  Adam(BasicParamStore<T>& params, AdamOptions options = {});

  void zero_grad() { params_->zero_grad(); }
  void step();
  std::uint64_t steps() const noexcept { return t_; }

 private:
  BasicParamStore<T>* params_;
  AdamOptions options_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Constant NCHW tensor holding 2*level - 1 in every pixel (level conditioning channel).
template <typename T>
Tensor<T> level_channel(int batch, int height, int width, std::span<const double> levels);

}  // namespace smg::backbone
