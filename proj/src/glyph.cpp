#include "smg/glyph.hpp"

#include <cmath>
#include <map>

namespace smg::glyph {

using ad::Var;
using backbone::Generator;

namespace {

// Exact rational used for parabola intersections of the lower envelope.
struct Ratio {
  std::int64_t num;
  std::int64_t den;  // > 0
};

bool less_equal(const Ratio& a, const Ratio& b) { return a.num * b.den <= b.num * a.den; }

// One-dimensional pass of the Felzenszwalb-Huttenlocher transform over f, where
// negative entries mark "no site". Unreachable outputs stay negative.
void edt_1d(const std::int64_t* f, std::int64_t* d, int n, std::vector<int>& v, std::vector<Ratio>& z) {
  v.clear();
  z.clear();
  for (int q = 0; q < n; ++q) {
    if (f[q] < 0) continue;
    while (!v.empty()) {
      const int p = v.back();
      const Ratio s{(f[q] + std::int64_t(q) * q) - (f[p] + std::int64_t(p) * p), 2 * std::int64_t(q - p)};
      if (z.size() > 1 && less_equal(s, z.back())) {
        v.pop_back();
        z.pop_back();
        continue;
      }
      v.push_back(q);
      z.push_back(s);
      break;
    }
    if (v.empty()) {
      v.push_back(q);
      z.push_back({0, 0});  // stands for -infinity, never compared
    }
  }
  if (v.empty()) {
    for (int q = 0; q < n; ++q) d[q] = -1;
    return;
  }
  std::size_t k = 0;
  for (int q = 0; q < n; ++q) {
    while (k + 1 < v.size() && z[k + 1].num < std::int64_t(q) * z[k + 1].den) ++k;
    const std::int64_t dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

Tensor<float> weight_batch(std::span<const DistanceWeightMap> maps) {
  const auto& first = maps.front();
  Tensor<float> out({static_cast<int>(maps.size()), 1, first.height, first.width});
  std::size_t offset = 0;
  for (const auto& m : maps) {
    if (m.height != first.height || m.width != first.width) throw ShapeError("weight maps differ in size");
    std::copy(m.weights.begin(), m.weights.end(), out.data() + offset);
    offset += m.weights.size();
  }
  return out;
}

void require_matching(std::span<const ImageGrid> a, std::span<const ImageGrid> b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": batch sizes differ");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].height != b[i].height || a[i].width != b[i].width || a[i].channels != b[i].channels) {
      throw ShapeError(std::string(what) + ": grid " + std::to_string(i) + " dimensions differ");
    }
  }
}

}  // namespace

std::vector<std::int64_t> squared_distance_transform(const std::vector<bool>& seeds, int height, int width) {
  if (seeds.size() != static_cast<std::size_t>(height) * width) throw ShapeError("seed mask size mismatch");
  const int n = std::max(height, width);
  std::vector<std::int64_t> grid(seeds.size()), f(n), d(n);
  std::vector<int> v;
  std::vector<Ratio> z;
  v.reserve(n);
  z.reserve(n);

  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) f[y] = seeds[static_cast<std::size_t>(y) * width + x] ? 0 : -1;
    edt_1d(f.data(), d.data(), height, v, z);
    for (int y = 0; y < height; ++y) grid[static_cast<std::size_t>(y) * width + x] = d[y];
  }
  for (int y = 0; y < height; ++y) {
    std::int64_t* row = &grid[static_cast<std::size_t>(y) * width];
    std::copy(row, row + width, f.begin());
    edt_1d(f.data(), row, width, v, z);
  }
  return grid;
}

DistanceWeightMap distance_weight_map(const ImageGrid& text, double cap) {
  if (text.channels != 1) throw ArgumentError("distance weights need a single-channel grid");
  if (!(cap > 0.0)) throw ArgumentError("distance cap must be positive");
  const int h = text.height, w = text.width;
  auto fg = [&](int y, int x) { return text.values[static_cast<std::size_t>(y) * w + x] > 0.0f; };

  std::vector<bool> contour(text.pixels(), false);
  bool any = false;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool c = fg(y, x);
      const bool edge = (y > 0 && fg(y - 1, x) != c) || (y + 1 < h && fg(y + 1, x) != c) ||
                        (x > 0 && fg(y, x - 1) != c) || (x + 1 < w && fg(y, x + 1) != c);
      contour[static_cast<std::size_t>(y) * w + x] = edge;
      any = any || edge;
    }
  }

  DistanceWeightMap out{h, w, cap, std::vector<float>(text.pixels(), 1.0f)};
  if (!any) return out;
  const auto d2 = squared_distance_transform(contour, h, w);
  for (std::size_t i = 0; i < d2.size(); ++i) {
    out.weights[i] = static_cast<float>(std::min(std::sqrt(static_cast<double>(d2[i])) / cap, 1.0));
  }
  return out;
}

DistanceWeightMap distance_weight_map(const ImageGrid& text) {
  return distance_weight_map(text, kDefaultCapFraction * std::min(text.height, text.width));
}

GlyphLosses glyph_losses(const Generator<float>& net, const backbone::Discriminator<float>& critic,
                         std::span<const ImageGrid> structure, std::span<const ImageGrid> sketchy, double level,
                         std::span<const ImageGrid> text, std::span<const DistanceWeightMap> maps,
                         const GlyphLossWeights& weights) {
  if (structure.empty()) throw ArgumentError("empty structure batch");
  require_matching(structure, sketchy, "structure pairs");

  GlyphLosses out;
  const Var<float> real(imageio::to_batch<float>(structure));
  const Var<float> fake = net.forward(Var<float>(imageio::to_batch<float>(sketchy)), level);
  out.rec = ad::mean_abs_diff(fake, real);
  out.adv_g = backbone::lsgan_generator_loss(critic.forward(fake));
  out.adv_d = backbone::lsgan_discriminator_loss(critic.forward(real), critic.forward(ad::detach(fake)));
  out.objective = weights.adv * out.adv_g + weights.rec * out.rec;

  if (weights.gly > 0.0 && !text.empty()) {
    if (maps.size() != text.size()) throw ShapeError("one weight map per text sample is required");
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (maps[i].height != text[i].height || maps[i].width != text[i].width) {
        throw ShapeError("weight map " + std::to_string(i) + " does not match its text sample");
      }
    }
    const Var<float> t(imageio::to_batch<float>(text));
    out.gly = ad::weighted_mean_abs_diff(net.forward(t, level), t, weight_batch(maps));
    out.objective = out.objective + weights.gly * out.gly;
  }
  return out;
}

void GlyphTrainConfig::validate() const {
  if (K < 1) throw ArgumentError("K must be at least 1");
  for (int s : stage_steps) {
    if (s < 0) throw ArgumentError("stage step counts must be nonnegative");
  }
  if (weights.rec < 0 || weights.adv < 0 || weights.gly < 0) throw ArgumentError("loss weights must be nonnegative");
  if (noise_std < 0) throw ArgumentError("noise std must be nonnegative");
  if (crop_size < 4) throw ArgumentError("crop size must be at least 4");
  if (!(cap_fraction > 0)) throw ArgumentError("cap fraction must be positive");
}

backbone::GeneratorConfig GlyphTrainConfig::generator_config() const {
  backbone::GeneratorConfig g;
  g.in_channels = 1;
  g.out_channels = 1;
  g.base_width = base_width;
  g.n_resblocks = n_resblocks;
  g.controllable = true;
  g.dropout_rate = dropout;
  return g;
}

std::vector<double> stage_levels(int stage, int K) {
  if (K < 1) throw ArgumentError("K must be at least 1");
  switch (stage) {
    case 1:
      return {1.0};
    case 2:
      return {0.0, 1.0};
    case 3: {
      std::vector<double> grid;
      for (int i = 0; i <= K; ++i) grid.push_back(static_cast<double>(i) / K);
      return grid;
    }
    default:
      throw ArgumentError("curriculum stages are numbered 1 to 3");
  }
}

GlyphModule::GlyphModule(Generator<float> net, Metadata meta) : net_(std::move(net)), meta_(std::move(meta)) {
  const auto& c = net_->config();
  if (!c.controllable || c.in_channels != 1 || c.out_channels != 1) {
    throw ArgumentError("glyph network must be a controllable 1-in, 1-out generator");
  }
}

const Generator<float>& GlyphModule::net() const {
  if (!net_) throw StateError("glyph module has no trained network");
  return *net_;
}

Generator<float>& GlyphModule::net() {
  if (!net_) throw StateError("glyph module has no trained network");
  return *net_;
}

std::string GlyphModule::style() const {
  auto it = meta_.find("style");
  return it == meta_.end() ? std::string() : it->second;
}

double GlyphModule::noise_std() const {
  return meta_.count("noise_std") ? backbone::meta_double(meta_, "noise_std") : imageio::kDefaultNoiseStd;
}

Checkpoint GlyphModule::to_checkpoint() const { return training::pack_generator(net(), meta_, "glyph"); }

GlyphModule GlyphModule::from_checkpoint(const Checkpoint& ckpt) {
  return GlyphModule(training::unpack_generator(ckpt, "glyph"), ckpt.meta);
}

void GlyphModule::save(const std::filesystem::path& path) const {
  const auto ckpt = to_checkpoint();
  backbone::save_checkpoint(ckpt.params, ckpt.meta, path);
}

GlyphModule GlyphModule::load(const std::filesystem::path& path) {
  return from_checkpoint(training::read_network_checkpoint(path, "glyph"));
}

GlyphTrainResult train_glyph(const sketch::SketchModule& sketcher, const imageio::StyleAsset& style,
                             const imageio::TextDataset& dataset, const GlyphTrainConfig& cfg,
                             const training::Observer& observer) {
  cfg.validate();
  sketcher.transform();  // StateError before any work when the sketch module is missing
  const ImageGrid& X = style.structure;
  const bool legibility = cfg.weights.gly > 0.0;
  if (legibility && dataset.size() == 0) throw ArgumentError("the legibility term needs text samples");
  const int crop = std::min(cfg.crop_size, std::min(X.height, X.width)) / 4 * 4;
  if (crop < 4) throw ShapeError("structure map too small to crop");

  Rng init = make_rng(cfg.seed, "glyph.init");
  Generator<float> gen(cfg.generator_config(), init());
  backbone::Discriminator<float> critic({1, cfg.d_layers, cfg.d_width}, init());
  backbone::Adam<float> gen_opt(gen.params(), cfg.adam);
  backbone::Adam<float> critic_opt(critic.params(), cfg.adam);

  Rng data_rng = make_rng(cfg.seed, "glyph.data");
  Rng noise_rng = make_rng(cfg.seed, "glyph.noise");
  Rng dropout_rng = make_rng(cfg.seed, "glyph.dropout");
  gen.set_training(&dropout_rng);

  GlyphTrainResult result;
  for (int stage = 1; stage <= 3; ++stage) {
    if (stage == 2) gen.copy_branch_params();
    const auto levels = stage_levels(stage, cfg.K);
    std::map<double, ImageGrid> cache;
    if (cfg.cache_sketches) {
      for (double lv : levels) cache.emplace(lv, sketch::generate_sketchy_structure(sketcher, X, lv));
    }
    std::uniform_int_distribution<std::size_t> pick_level(0, levels.size() - 1);
    const std::string stage_name = "glyph-" + std::to_string(stage);

    for (int step = 0; step < cfg.stage_steps[stage - 1]; ++step) {
      const double level = levels[pick_level(data_rng)];
      const ImageGrid sketchy =
          cfg.cache_sketches ? cache.at(level) : sketch::generate_sketchy_structure(sketcher, X, level);
      auto [x, xs] = imageio::random_crop_pair(X, sketchy, crop, data_rng);
      const ImageGrid noisy = imageio::inject_noise(xs, cfg.noise_std, noise_rng);

      std::vector<ImageGrid> text;
      std::vector<DistanceWeightMap> maps;
      if (legibility) {
        const ImageGrid& t = dataset[std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(data_rng)];
        const int tc = std::min(crop, std::min(t.height, t.width)) / 4 * 4;
        text.push_back(imageio::random_crop_pair(t, t, tc, data_rng).first);
        maps.push_back(distance_weight_map(text.back(), cfg.cap_fraction * tc));
      }

      const auto losses = glyph_losses(gen, critic, std::span(&x, 1), std::span(&noisy, 1), level, text, maps,
                                       cfg.weights);
      training::StepRecord rec{stage_name, step, level,
                               {{"rec", losses.rec.item()}, {"adv_g", losses.adv_g.item()},
                                {"adv_d", losses.adv_d.item()}}};
      if (losses.gly.defined()) rec.terms.emplace_back("gly", losses.gly.item());
      training::require_finite(rec);
      training::adversarial_update(losses.objective, losses.adv_d, gen_opt, critic_opt, critic.params());
      if (observer) observer(rec);
      result.history.push_back(std::move(rec));
    }
  }
  gen.set_eval();

  Metadata meta{{"style", style.name},
                {"K", std::to_string(cfg.K)},
                {"lambda_rec", backbone::format_double(cfg.weights.rec)},
                {"lambda_adv", backbone::format_double(cfg.weights.adv)},
                {"lambda_gly", backbone::format_double(cfg.weights.gly)},
                {"noise_std", backbone::format_double(cfg.noise_std)},
                {"crop_size", std::to_string(crop)},
                {"stage_steps", std::to_string(cfg.stage_steps[0]) + "," + std::to_string(cfg.stage_steps[1]) + "," +
                                    std::to_string(cfg.stage_steps[2])},
                {"seed", std::to_string(cfg.seed)}};
  result.module = GlyphModule(std::move(gen), std::move(meta));
  return result;
}

ImageGrid transfer_structure(const GlyphModule& module, const ImageGrid& text, double level, std::uint64_t seed) {
  const auto& net = module.net();
  if (!(level >= 0.0 && level <= 1.0)) throw ArgumentError("level must lie in [0, 1], got " + std::to_string(level));
  if (text.channels != 1) throw ArgumentError("structure transfer expects a single-channel text image");
  Rng rng = make_rng(seed, "glyph.transfer");
  const ImageGrid noisy = imageio::inject_noise(text, module.noise_std(), rng);
  return imageio::from_tensor(net.infer(imageio::to_tensor<float>(noisy), level), 0, GridTag::structure);
}

}  // namespace smg::glyph
