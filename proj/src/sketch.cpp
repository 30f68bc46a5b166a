#include "smg/sketch.hpp"

#include <cmath>

namespace smg::sketch {

using ad::Var;
using backbone::Generator;

double sigma_for_level(double level, double scale) {
  if (!(level >= 0.0 && level <= 1.0)) throw ArgumentError("level must lie in [0, 1], got " + std::to_string(level));
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ArgumentError("sigma scale must be positive");
  return scale * (kSigmaSlope * level + kSigmaIntercept);
}

std::vector<double> gaussian_kernel(double level, double scale) {
  const double sigma = sigma_for_level(level, scale);
  const int r = static_cast<int>(std::ceil(2.0 * sigma));
  std::vector<double> k(2 * r + 1);
  for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-double(i) * i / (2.0 * sigma * sigma));
  double total = 0.0;
  // Sum from the tails inwards so that symmetric taps are added in the same order.
  for (int i = r; i > 0; --i) total += k[r - i] + k[r + i];
  total += k[r];
  for (auto& v : k) v /= total;
  return k;
}

ImageGrid smooth(const ImageGrid& x, double level, double scale) {
  if (x.channels != 1) throw ArgumentError("smooth expects a single-channel grid, got " + std::to_string(x.channels));
  const auto k = gaussian_kernel(level, scale);
  const int r = static_cast<int>(k.size() / 2);
  const int h = x.height, w = x.width;

  std::vector<double> tmp(x.pixels());
  for (int y = 0; y < h; ++y) {
    const float* row = &x.values[static_cast<std::size_t>(y) * w];
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * row[ad::reflect_index(c + i, w)];
      tmp[static_cast<std::size_t>(y) * w + c] = acc;
    }
  }

  ImageGrid out = x;
  for (int y = 0; y < h; ++y) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(ad::reflect_index(y + i, h)) * w + c];
      out.values[static_cast<std::size_t>(y) * w + c] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
    }
  }
  return out;
}

ImageGrid naive_sketch(const ImageGrid& x, double level, double sharpness) {
  ImageGrid out = smooth(x, level);
  for (auto& v : out.values) v = static_cast<float>(2.0 / (1.0 + std::exp(-sharpness * v)) - 1.0);
  return out;
}

Tensor<float> transform_input(std::span<const ImageGrid> smoothed, std::span<const double> levels) {
  if (smoothed.size() != levels.size()) {
    throw ShapeError("batch of " + std::to_string(smoothed.size()) + " grids with " + std::to_string(levels.size()) +
                     " levels");
  }
  const auto base = imageio::to_batch<float>(smoothed);
  const auto cond = backbone::level_channel<float>(base.dim(0), base.dim(2), base.dim(3), levels);
  return ad::concat_channels<float>({Var<float>(base), Var<float>(cond)}).value();
}

SketchLosses sketch_losses(const Generator<float>& transform, const backbone::Discriminator<float>& critic,
                           std::span<const ImageGrid> text, std::span<const double> levels,
                           const SketchLossWeights& weights, double sigma_scale) {
  if (text.empty()) throw ArgumentError("empty text batch");
  if (text.size() != levels.size()) {
    throw ShapeError("batch of " + std::to_string(text.size()) + " samples with " + std::to_string(levels.size()) +
                     " levels");
  }
  std::vector<ImageGrid> smoothed;
  smoothed.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) smoothed.push_back(smooth(text[i], levels[i], sigma_scale));

  const Var<float> input(transform_input(smoothed, levels));
  const Var<float> real(imageio::to_batch<float>(text));
  const Var<float> smooth_var(imageio::to_batch<float>(smoothed));
  const Var<float> cond(backbone::level_channel<float>(real.dim(0), real.dim(2), real.dim(3), levels));

  SketchLosses out;
  out.fake = transform.forward(input);
  out.rec = ad::mean_abs_diff(out.fake, real);
  out.adv_g = backbone::lsgan_generator_loss(critic.forward(ad::concat_channels<float>({out.fake, cond, smooth_var})));
  const auto real_scores = critic.forward(ad::concat_channels<float>({real, cond, smooth_var}));
  const auto fake_scores = critic.forward(ad::concat_channels<float>({ad::detach(out.fake), cond, smooth_var}));
  out.adv_d = backbone::lsgan_discriminator_loss(real_scores, fake_scores);
  out.objective = weights.adv * out.adv_g + weights.rec * out.rec;
  return out;
}

SketchModule::SketchModule(Generator<float> transform, Metadata meta)
    : transform_(std::move(transform)), meta_(std::move(meta)) {
  const auto& c = transform_->config();
  if (c.in_channels != 2 || c.out_channels != 1 || c.controllable) {
    throw ArgumentError("sketch transform must be a plain 2-in, 1-out generator");
  }
  if (const auto it = meta_.find("f_scale"); it != meta_.end()) {
    try {
      sigma_scale_ = std::stod(it->second);
    } catch (const std::exception&) {
      throw FormatError("sketch f_scale is not a number: " + it->second);
    }
    if (!(sigma_scale_ > 0.0) || !std::isfinite(sigma_scale_)) throw FormatError("sketch f_scale must be positive");
  }
}

const Generator<float>& SketchModule::transform() const {
  if (!transform_) throw StateError("sketch module has no trained transformation block");
  return *transform_;
}

Checkpoint SketchModule::to_checkpoint() const {
  Metadata meta = meta_;
  meta["f_slope"] = backbone::format_double(kSigmaSlope);
  meta["f_intercept"] = backbone::format_double(kSigmaIntercept);
  meta["f_scale"] = backbone::format_double(sigma_scale_);
  return training::pack_generator(transform(), std::move(meta), "sketch");
}

SketchModule SketchModule::from_checkpoint(const Checkpoint& ckpt) {
  return SketchModule(training::unpack_generator(ckpt, "sketch"), ckpt.meta);
}

void SketchModule::save(const std::filesystem::path& path) const {
  const auto ckpt = to_checkpoint();
  backbone::save_checkpoint(ckpt.params, ckpt.meta, path);
}

SketchModule SketchModule::load(const std::filesystem::path& path) {
  return from_checkpoint(training::read_network_checkpoint(path, "sketch"));
}

ImageGrid generate_sketchy_structure(const SketchModule& module, const ImageGrid& x, double level) {
  const auto& net = module.transform();
  if (x.channels != 1) throw ArgumentError("structure map must be single-channel");
  const ImageGrid s = smooth(x, level, module.sigma_scale());
  const double levels[] = {level};
  const auto out = net.infer(transform_input(std::span<const ImageGrid>(&s, 1), levels));
  return imageio::from_tensor(out, 0, GridTag::structure);
}

backbone::GeneratorConfig SketchTrainConfig::generator_config() const {
  backbone::GeneratorConfig g;
  g.in_channels = 2;
  g.out_channels = 1;
  g.base_width = base_width;
  g.n_resblocks = n_resblocks;
  g.controllable = false;
  g.dropout_rate = dropout;
  return g;
}

SketchTrainResult train_sketch(const imageio::TextDataset& dataset, const SketchTrainConfig& cfg,
                               const training::Observer& observer) {
  if (dataset.size() == 0) throw ArgumentError("sketch training needs a nonempty text dataset");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw ArgumentError("steps must be >= 0 and batch_size >= 1");

  Rng init = make_rng(cfg.seed, "sketch.init");
  Generator<float> gen(cfg.generator_config(), init());
  backbone::Discriminator<float> critic({3, cfg.d_layers, cfg.d_width}, init());
  backbone::Adam<float> gen_opt(gen.params(), cfg.adam);
  backbone::Adam<float> critic_opt(critic.params(), cfg.adam);

  Rng data_rng = make_rng(cfg.seed, "sketch.data");
  Rng dropout_rng = make_rng(cfg.seed, "sketch.dropout");
  gen.set_training(&dropout_rng);

  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_real_distribution<double> level_dist(0.0, 1.0);

  SketchTrainResult result;
  result.history.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<ImageGrid> batch;
    std::vector<double> levels;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const ImageGrid& sample = dataset[pick(data_rng)];
      if (cfg.crop_size > 0 && cfg.crop_size < std::min(sample.height, sample.width)) {
        batch.push_back(imageio::random_crop_pair(sample, sample, cfg.crop_size, data_rng).first);
      } else {
        batch.push_back(sample);
      }
      levels.push_back(level_dist(data_rng));
    }

    const auto losses = sketch_losses(gen, critic, batch, levels, cfg.weights, cfg.sigma_scale);
    training::StepRecord rec{"sketch", step, levels.front(),
                             {{"rec", losses.rec.item()}, {"adv_g", losses.adv_g.item()},
                              {"adv_d", losses.adv_d.item()}}};
    training::require_finite(rec);
    training::adversarial_update(losses.objective, losses.adv_d, gen_opt, critic_opt, critic.params());
    if (observer) observer(rec);
    result.history.push_back(std::move(rec));
  }
  gen.set_eval();

  Metadata meta{{"steps", std::to_string(cfg.steps)}, {"seed", std::to_string(cfg.seed)},
                {"lambda_rec", backbone::format_double(cfg.weights.rec)},
                {"lambda_adv", backbone::format_double(cfg.weights.adv)},
                {"f_scale", backbone::format_double(cfg.sigma_scale)}};
  result.module = SketchModule(std::move(gen), std::move(meta));
  return result;
}

}  // namespace smg::sketch
