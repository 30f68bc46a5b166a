#include "smg/texture.hpp"

#include <cmath>

namespace smg::texture {

using ad::Var;
using backbone::Generator;

FeatureExtractor::FeatureExtractor(std::vector<ExtractorLayer> layers, int in_channels, std::uint64_t seed,
                                   bool imagenet_input)
    : layers_(std::move(layers)), in_channels_(in_channels), imagenet_input_(imagenet_input) {
  if (in_channels < 1) throw ArgumentError("extractor needs at least one input channel");
  if (imagenet_input && in_channels != 3) throw ArgumentError("imagenet input scaling needs 3 channels");
  Rng rng = make_rng(seed, "texture.extractor");
  int channels = in_channels;
  int conv_index = 0;
  for (const auto& layer : layers_) {
    if (layer.kind == ExtractorLayer::Kind::pool) {
      if (!layer.tap.empty()) throw ArgumentError("pool layers cannot be tapped");
      continue;
    }
    if (layer.out_channels < 1) throw ArgumentError("conv layers need a positive width");
    Tensor<float> w({layer.out_channels, channels, 3, 3});
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / (channels * 9.0))));
    for (auto& v : w.values()) v = dist(rng);
    const std::string base = "conv" + std::to_string(conv_index++);
    params_.add(base + ".w", std::move(w));
    params_.add(base + ".b", Tensor<float>({layer.out_channels}));
    if (!layer.tap.empty()) taps_.push_back(layer.tap);
    channels = layer.out_channels;
  }
  if (taps_.empty()) throw ArgumentError("extractor has no tapped layers");
  params_.set_requires_grad(false);
}

FeatureExtractor FeatureExtractor::vgg16(int width_divisor, std::uint64_t seed) {
  if (width_divisor < 1) throw ArgumentError("width divisor must be positive");
  using K = ExtractorLayer::Kind;
  auto conv = [&](int width, std::string tap = {}) {
    return ExtractorLayer{K::conv, std::max(1, width / width_divisor), std::move(tap)};
  };
  const ExtractorLayer pool{K::pool, 0, {}};
  std::vector<ExtractorLayer> layers{conv(64, "relu1_1"), conv(64),  pool,      conv(128, "relu2_1"),
                                     conv(128),           pool,      conv(256, "relu3_1"), conv(256),
                                     conv(256),           pool,      conv(512, "relu4_1")};
  return FeatureExtractor(std::move(layers), 3, seed, true);
}

void FeatureExtractor::load_weights(const std::filesystem::path& path) {
  const auto ckpt = backbone::load_checkpoint(path);
  for (const auto& e : params_.entries()) {
    if (!ckpt.params.contains(e.name)) throw FormatError("extractor weights lack " + e.name);
  }
  for (const auto& e : ckpt.params.entries()) {
    if (params_.contains(e.name)) params_.assign(e.name, e.var.value());
  }
  params_.set_requires_grad(false);
}

std::vector<Var<float>> FeatureExtractor::features(const Var<float>& x) const {
  if (x.shape().size() != 4 || x.dim(1) != in_channels_) {
    throw ShapeError("extractor expects [N," + std::to_string(in_channels_) + ",H,W], got " + shape_string(x.shape()));
  }
  Var<float> h = x;
  if (imagenet_input_) {
    // [-1, 1] RGB to ImageNet-normalised [0, 1] RGB.
    static constexpr float mean[] = {0.485f, 0.456f, 0.406f};
    static constexpr float stdv[] = {0.229f, 0.224f, 0.225f};
    Tensor<float> gain(x.shape()), shift(x.shape());
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    for (int n = 0; n < x.dim(0); ++n) {
      for (int c = 0; c < 3; ++c) {
        float* g = gain.data() + (static_cast<std::size_t>(n) * 3 + c) * plane;
        float* s = shift.data() + (static_cast<std::size_t>(n) * 3 + c) * plane;
        std::fill(g, g + plane, 0.5f / stdv[c]);
        std::fill(s, s + plane, (0.5f - mean[c]) / stdv[c]);
      }
    }
    h = ad::mul_const(h, gain) + Var<float>(std::move(shift));
  }

  std::vector<Var<float>> out;
  int conv_index = 0;
  for (const auto& layer : layers_) {
    if (layer.kind == ExtractorLayer::Kind::pool) {
      h = ad::max_pool2x2(h);
      continue;
    }
    const std::string base = "conv" + std::to_string(conv_index++);
    h = ad::relu(ad::conv2d(h, params_.get(base + ".w"), params_.get(base + ".b"), {1, 1, ad::Padding::zero}));
    if (!layer.tap.empty()) out.push_back(h);
    if (out.size() == taps_.size()) break;
  }
  return out;
}

Tensor<float> gram_matrix(const Tensor<float>& features) {
  if (features.rank() != 4 || features.dim(2) * features.dim(3) < 1 || features.dim(1) < 1) {
    throw ArgumentError("gram_matrix needs a nonempty [N,C,H,W] map, got " + shape_string(features.shape()));
  }
  return ad::gram(Var<float>(features)).value();
}

std::vector<Tensor<float>> style_targets(const ImageGrid& style, const FeatureExtractor& phi) {
  if (style.channels != 3) throw ArgumentError("style targets need a 3-channel image");
  ad::NoGradGuard guard;
  std::vector<Tensor<float>> targets;
  for (const auto& f : phi.features(Var<float>(imageio::to_tensor<float>(style)))) {
    targets.push_back(ad::gram(f).value());
  }
  return targets;
}

Var<float> style_loss(const Var<float>& gen, std::span<const Tensor<float>> targets, const FeatureExtractor& phi) {
  if (gen.shape().size() != 4 || gen.dim(1) != 3) throw ArgumentError("style loss needs 3-channel images");
  const auto feats = phi.features(gen);
  if (feats.size() != targets.size()) throw ShapeError("one target Gram per tapped layer is required");
  Var<float> total;
  for (std::size_t l = 0; l < feats.size(); ++l) {
    const Var<float> g = ad::gram(feats[l]);
    const auto& t = targets[l];
    if (t.rank() != 3 || t.dim(1) != g.dim(1) || t.dim(2) != g.dim(2)) throw ShapeError("target Gram shape mismatch");
    // Targets of one image are broadcast over the batch.
    Tensor<float> tiled(g.shape());
    const std::size_t block = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
    for (int n = 0; n < g.dim(0); ++n) {
      const float* src = t.data() + (t.dim(0) == 1 ? 0 : static_cast<std::size_t>(n) * block);
      std::copy(src, src + block, tiled.data() + static_cast<std::size_t>(n) * block);
    }
    const Var<float> term = phi.layer_weight() * ad::mean_square_diff(g, Var<float>(std::move(tiled)));
    total = total.defined() ? total + term : term;
  }
  return total;
}

double style_loss(const ImageGrid& gen, const ImageGrid& style, const FeatureExtractor& phi) {
  if (gen.channels != 3 || style.channels != 3) throw ArgumentError("style loss needs 3-channel images");
  const auto targets = style_targets(style, phi);
  ad::NoGradGuard guard;
  return style_loss(Var<float>(imageio::to_tensor<float>(gen)), targets, phi).item();
}

TextureLosses texture_losses(const Generator<float>& net, const backbone::Discriminator<float>& critic,
                             const TextureBatch& batch, std::span<const Tensor<float>> targets,
                             const FeatureExtractor* phi, const TextureLossWeights& weights) {
  if (batch.input.empty()) throw ArgumentError("empty texture batch");
  if (batch.input.size() != batch.structure.size() || batch.input.size() != batch.style.size()) {
    throw ShapeError("texture batch parts differ in length");
  }
  for (std::size_t i = 0; i < batch.input.size(); ++i) {
    const auto& a = batch.input[i];
    const auto& b = batch.structure[i];
    const auto& c = batch.style[i];
    if (a.height != b.height || a.width != b.width || a.height != c.height || a.width != c.width) {
      throw ShapeError("texture crop " + std::to_string(i) + " is misaligned");
    }
  }

  TextureLosses out;
  const Var<float> x(imageio::to_batch<float>(batch.structure));
  const Var<float> y(imageio::to_batch<float>(batch.style));
  const Var<float> fake = net.forward(Var<float>(imageio::to_batch<float>(batch.input)));
  out.rec = ad::mean_abs_diff(fake, y);
  out.adv_g = backbone::lsgan_generator_loss(critic.forward(ad::concat_channels<float>({x, fake})));
  out.adv_d = backbone::lsgan_discriminator_loss(critic.forward(ad::concat_channels<float>({x, y})),
                                                 critic.forward(ad::concat_channels<float>({x, ad::detach(fake)})));
  out.objective = weights.adv * out.adv_g + weights.rec * out.rec;

  if (weights.style > 0.0 && batch.transferred) {
    if (phi == nullptr) throw ArgumentError("the style term needs a feature extractor");
    const Var<float> rendered = net.forward(Var<float>(imageio::to_tensor<float>(*batch.transferred)));
    out.style = style_loss(rendered, targets, *phi);
    out.objective = out.objective + weights.style * out.style;
  }
  return out;
}

void TextureTrainConfig::validate() const {
  if (steps < 0) throw ArgumentError("steps must be nonnegative");
  if (weights.rec < 0 || weights.adv < 0 || weights.style < 0) throw ArgumentError("loss weights must be nonnegative");
  if (noise_std < 0) throw ArgumentError("noise std must be nonnegative");
  if (crop_size < 4) throw ArgumentError("crop size must be at least 4");
  if (K < 1) throw ArgumentError("K must be at least 1");
}

backbone::GeneratorConfig TextureTrainConfig::generator_config() const {
  backbone::GeneratorConfig g;
  g.in_channels = 1;
  g.out_channels = 3;
  g.base_width = base_width;
  g.n_resblocks = n_resblocks;
  g.controllable = false;
  g.dropout_rate = dropout;
  return g;
}

TextureModule::TextureModule(Generator<float> net, Metadata meta) : net_(std::move(net)), meta_(std::move(meta)) {
  const auto& c = net_->config();
  if (c.controllable || c.in_channels != 1 || c.out_channels != 3) {
    throw ArgumentError("texture network must be a plain 1-in, 3-out generator");
  }
}

const Generator<float>& TextureModule::net() const {
  if (!net_) throw StateError("texture module has no trained network");
  return *net_;
}

std::string TextureModule::style() const {
  auto it = meta_.find("style");
  return it == meta_.end() ? std::string() : it->second;
}

double TextureModule::noise_std() const {
  return meta_.count("noise_std") ? backbone::meta_double(meta_, "noise_std") : imageio::kDefaultNoiseStd;
}

Checkpoint TextureModule::to_checkpoint() const { return training::pack_generator(net(), meta_, "texture"); }

TextureModule TextureModule::from_checkpoint(const Checkpoint& ckpt) {
  return TextureModule(training::unpack_generator(ckpt, "texture"), ckpt.meta);
}

void TextureModule::save(const std::filesystem::path& path) const {
  const auto ckpt = to_checkpoint();
  backbone::save_checkpoint(ckpt.params, ckpt.meta, path);
}

TextureModule TextureModule::load(const std::filesystem::path& path) {
  return from_checkpoint(training::read_network_checkpoint(path, "texture"));
}

TextureTrainResult train_texture(const imageio::StyleAsset& style, const glyph::GlyphModule& glyph,
                                 const imageio::TextDataset& dataset, const TextureTrainConfig& cfg,
                                 const training::Observer& observer) {
  cfg.validate();
  const ImageGrid& X = style.structure;
  const ImageGrid& Y = style.style;
  const bool with_style = cfg.weights.style > 0.0;
  if (with_style) {
    glyph.net();
    if (dataset.size() == 0) throw ArgumentError("the style term needs text samples");
  }
  const int crop = std::min(cfg.crop_size, std::min(X.height, X.width)) / 4 * 4;
  if (crop < 4) throw ShapeError("style image too small to crop");

  Rng init = make_rng(cfg.seed, "texture.init");
  Generator<float> gen(cfg.generator_config(), init());
  backbone::Discriminator<float> critic({4, cfg.d_layers, cfg.d_width}, init());
  backbone::Adam<float> gen_opt(gen.params(), cfg.adam);
  backbone::Adam<float> critic_opt(critic.params(), cfg.adam);

  std::optional<FeatureExtractor> phi;
  std::vector<Tensor<float>> targets;
  if (with_style) {
    phi.emplace(FeatureExtractor::vgg16(cfg.extractor_width_divisor, cfg.seed));
    if (!cfg.extractor_weights.empty()) phi->load_weights(cfg.extractor_weights);
    targets = style_targets(Y, *phi);
  }
  const auto levels = glyph::stage_levels(3, cfg.K);

  Rng data_rng = make_rng(cfg.seed, "texture.data");
  Rng noise_rng = make_rng(cfg.seed, "texture.noise");
  Rng dropout_rng = make_rng(cfg.seed, "texture.dropout");
  gen.set_training(&dropout_rng);

  TextureTrainResult result;
  result.history.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    auto [x, y] = imageio::random_crop_pair(X, Y, crop, data_rng);
    TextureBatch batch;
    batch.input.push_back(imageio::inject_noise(x, cfg.noise_std, noise_rng));
    batch.structure.push_back(std::move(x));
    batch.style.push_back(std::move(y));

    double level = 0.0;
    if (with_style) {
      const ImageGrid& t = dataset[std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(data_rng)];
      const int tc = std::min(crop, std::min(t.height, t.width)) / 4 * 4;
      const ImageGrid text = imageio::random_crop_pair(t, t, tc, data_rng).first;
      level = levels[std::uniform_int_distribution<std::size_t>(0, levels.size() - 1)(data_rng)];
      const ImageGrid shaped = glyph::transfer_structure(glyph, text, level, data_rng());
      batch.transferred = imageio::inject_noise(shaped, cfg.noise_std, noise_rng);
    }

    const auto losses = texture_losses(gen, critic, batch, targets, phi ? &*phi : nullptr, cfg.weights);
    training::StepRecord rec{"texture", step, level,
                             {{"rec", losses.rec.item()}, {"adv_g", losses.adv_g.item()},
                              {"adv_d", losses.adv_d.item()}}};
    if (losses.style.defined()) rec.terms.emplace_back("style", losses.style.item());
    training::require_finite(rec);
    training::adversarial_update(losses.objective, losses.adv_d, gen_opt, critic_opt, critic.params());
    if (observer) observer(rec);
    result.history.push_back(std::move(rec));
  }
  gen.set_eval();

  Metadata meta{{"style", style.name},
                {"lambda_rec", backbone::format_double(cfg.weights.rec)},
                {"lambda_adv", backbone::format_double(cfg.weights.adv)},
                {"lambda_style", backbone::format_double(cfg.weights.style)},
                {"noise_std", backbone::format_double(cfg.noise_std)},
                {"crop_size", std::to_string(crop)},
                {"steps", std::to_string(cfg.steps)},
                {"extractor", cfg.extractor_weights.empty()
                                  ? "random/" + std::to_string(cfg.extractor_width_divisor)
                                  : "file/" + std::to_string(cfg.extractor_width_divisor)},
                {"seed", std::to_string(cfg.seed)}};
  result.module = TextureModule(std::move(gen), std::move(meta));
  return result;
}

ImageGrid render_texture(const TextureModule& module, const ImageGrid& structure, std::uint64_t seed) {
  const auto& net = module.net();
  if (structure.channels != 1) throw ArgumentError("texture rendering expects a single-channel structure image");
  Rng rng = make_rng(seed, "texture.render");
  const ImageGrid noisy = imageio::inject_noise(structure, module.noise_std(), rng);
  return imageio::from_tensor(net.infer(imageio::to_tensor<float>(noisy)), 0, GridTag::output);
}

}  // namespace smg::texture
