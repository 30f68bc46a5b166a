#include "smg/networks.hpp"

#include <cmath>

namespace smg::backbone {
namespace {

using ad::Var;

constexpr double kInitStd = 0.02;
constexpr double kLeakySlope = 0.2;

template <typename T>
Tensor<T> normal_init(Shape shape, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, kInitStd);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

ad::ConvOptions reflect(int pad, int stride = 1) { return {stride, pad, ad::Padding::reflect}; }
ad::ConvOptions zero_pad(int pad, int stride) { return {stride, pad, ad::Padding::zero}; }

template <typename T>
Var<T> conv_norm_relu(const Var<T>& x, const Var<T>& w, ad::ConvOptions opt) {
  return ad::relu(ad::instance_norm(ad::conv2d(x, w, Var<T>(), opt)));
}

void check_level(double level) {
  if (!(level >= 0.0 && level <= 1.0)) throw ArgumentError("level must lie in [0, 1], got " + std::to_string(level));
}

std::string block_prefix(int i) { return "res" + std::to_string(i); }

}  // namespace

void GeneratorConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ArgumentError("generator channel counts must be positive");
  if (base_width < 1) throw ArgumentError("generator base width must be positive");
  if (n_resblocks < 1) throw ArgumentError("generator needs at least one residual block");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ArgumentError("dropout rate must lie in [0, 1)");
}

void GeneratorConfig::write_meta(Metadata& meta) const {
  meta["in_channels"] = std::to_string(in_channels);
  meta["out_channels"] = std::to_string(out_channels);
  meta["base_width"] = std::to_string(base_width);
  meta["n_resblocks"] = std::to_string(n_resblocks);
  meta["controllable"] = controllable ? "1" : "0";
  meta["dropout_rate"] = format_double(dropout_rate);
}

GeneratorConfig GeneratorConfig::from_meta(const Metadata& meta) {
  GeneratorConfig c;
  c.in_channels = meta_int(meta, "in_channels");
  c.out_channels = meta_int(meta, "out_channels");
  c.base_width = meta_int(meta, "base_width");
  c.n_resblocks = meta_int(meta, "n_resblocks");
  c.controllable = meta_int(meta, "controllable") != 0;
  c.dropout_rate = meta_double(meta, "dropout_rate");
  c.validate();
  return c;
}

void DiscriminatorConfig::validate() const {
  if (in_channels < 1 || base_width < 1) throw ArgumentError("discriminator channel counts must be positive");
  if (n_layers < 1) throw ArgumentError("discriminator needs at least one strided layer");
}

template <typename T>
Var<T> residual_branch(const Var<T>& x, const ResidualBranch<T>& branch, double dropout_rate, Rng* rng) {
  Var<T> h = conv_norm_relu(x, branch.conv1, reflect(1));
  if (rng != nullptr) h = ad::dropout(h, dropout_rate, *rng);
  return ad::instance_norm(ad::conv2d(h, branch.conv2, Var<T>(), reflect(1)));
}

template <typename T>
Var<T> resblock_forward(const Var<T>& x, const ResidualBranch<T>& branch, double dropout_rate, Rng* rng) {
  return ad::add(x, residual_branch(x, branch, dropout_rate, rng));
}

template <typename T>
Var<T> controllable_resblock_forward(const Var<T>& x, double level, const ControllableResBlockState<T>& state,
                                     double dropout_rate, Rng* rng) {
  check_level(level);
  if (level == 1.0) return resblock_forward(x, state.branch_max, dropout_rate, rng);
  if (level == 0.0) return resblock_forward(x, state.branch_min, dropout_rate, rng);
  const Var<T> f1 = residual_branch(x, state.branch_max, dropout_rate, rng);
  const Var<T> f0 = residual_branch(x, state.branch_min, dropout_rate, rng);
  return ad::add(x, ad::add(ad::scale(f1, level), ad::scale(f0, 1.0 - level)));
}

template <typename T>
Generator<T>::Generator(GeneratorConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  declare(init_seed);
}

template <typename T>
Generator<T>::Generator(GeneratorConfig config, const BasicParamStore<T>& params) : config_(config) {
  config_.validate();
  declare(0);
  if (params.size() != params_.size()) {
    throw FormatError("generator expects " + std::to_string(params_.size()) + " tensors, checkpoint has " +
                      std::to_string(params.size()));
  }
  for (const auto& e : params_.entries()) {
    if (!params.contains(e.name)) throw FormatError("checkpoint lacks tensor " + e.name);
    params_.assign(e.name, params.get(e.name).value());
  }
}

template <typename T>
void Generator<T>::declare(std::uint64_t seed) {
  Rng rng = make_rng(seed, "generator-init");
  const int w = config_.base_width;
  params_.add("enc0.w", normal_init<T>({w, config_.in_channels, 7, 7}, rng));
  params_.add("enc1.w", normal_init<T>({2 * w, w, 3, 3}, rng));
  params_.add("enc2.w", normal_init<T>({4 * w, 2 * w, 3, 3}, rng));
  for (int i = 0; i < config_.n_resblocks; ++i) {
    const std::vector<std::string> branches =
        config_.controllable ? std::vector<std::string>{".max", ".min"} : std::vector<std::string>{""};
    for (const auto& b : branches) {
      params_.add(block_prefix(i) + b + ".conv1.w", normal_init<T>({4 * w, 4 * w, 3, 3}, rng));
      params_.add(block_prefix(i) + b + ".conv2.w", normal_init<T>({4 * w, 4 * w, 3, 3}, rng));
    }
  }
  params_.add("dec0.w", normal_init<T>({2 * w, 4 * w, 3, 3}, rng));
  params_.add("dec1.w", normal_init<T>({w, 2 * w, 3, 3}, rng));
  params_.add("out.w", normal_init<T>({config_.out_channels, w, 7, 7}, rng));
  params_.add("out.b", Tensor<T>({config_.out_channels}));
}

template <typename T>
ControllableResBlockState<T> Generator<T>::block_state(int block) const {
  if (!config_.controllable) throw ArgumentError("generator has no controllable blocks");
  const auto p = block_prefix(block);
  return {{params_.get(p + ".max.conv1.w"), params_.get(p + ".max.conv2.w")},
          {params_.get(p + ".min.conv1.w"), params_.get(p + ".min.conv2.w")}};
}

template <typename T>
ResidualBranch<T> Generator<T>::plain_block(int block) const {
  if (config_.controllable) throw ArgumentError("generator blocks are controllable");
  const auto p = block_prefix(block);
  return {params_.get(p + ".conv1.w"), params_.get(p + ".conv2.w")};
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& x, std::optional<double> level) const {
  return forward_impl(x, level, dropout_rng_);
}

template <typename T>
Tensor<T> Generator<T>::infer(const Tensor<T>& x, std::optional<double> level) const {
  ad::NoGradGuard guard;
  return forward_impl(Var<T>(x), level, nullptr).value();
}

template <typename T>
Var<T> Generator<T>::forward_impl(const Var<T>& x, std::optional<double> level, Rng* rng) const {
  if (x.shape().size() != 4 || x.dim(1) != config_.in_channels) {
    throw ShapeError("generator expects [N," + std::to_string(config_.in_channels) + ",H,W] input, got " +
                     shape_string(x.shape()));
  }
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0 || x.dim(2) == 0 || x.dim(3) == 0) {
    throw ShapeError("generator input " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                     " is not divisible by 4");
  }
  if (config_.controllable != level.has_value()) {
    throw ArgumentError(config_.controllable ? "controllable generator requires a level"
                                             : "plain generator does not take a level");
  }
  if (level) check_level(*level);
  passes_->fetch_add(1);

  Var<T> h = conv_norm_relu(x, params_.get("enc0.w"), reflect(3));
  h = conv_norm_relu(h, params_.get("enc1.w"), reflect(1, 2));
  h = conv_norm_relu(h, params_.get("enc2.w"), reflect(1, 2));
  for (int i = 0; i < config_.n_resblocks; ++i) {
    h = config_.controllable ? controllable_resblock_forward(h, *level, block_state(i), config_.dropout_rate, rng)
                             : resblock_forward(h, plain_block(i), config_.dropout_rate, rng);
  }
  h = conv_norm_relu(ad::upsample_nearest2x(h), params_.get("dec0.w"), reflect(1));
  h = conv_norm_relu(ad::upsample_nearest2x(h), params_.get("dec1.w"), reflect(1));
  return ad::tanh(ad::conv2d(h, params_.get("out.w"), params_.get("out.b"), reflect(3)));
}

template <typename T>
void Generator<T>::copy_branch_params() {
  if (!config_.controllable) throw ArgumentError("copy_branch_params requires a controllable generator");
  for (int i = 0; i < config_.n_resblocks; ++i) {
    const auto p = block_prefix(i);
    for (const char* conv : {".conv1.w", ".conv2.w"}) {
      params_.assign(p + ".min" + conv, params_.get(p + ".max" + conv).value());
    }
  }
}

template <typename T>
Discriminator<T>::Discriminator(DiscriminatorConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng = make_rng(init_seed, "discriminator-init");
  const int w = config_.base_width;
  int prev = config_.in_channels;
  for (int i = 0; i <= config_.n_layers; ++i) {
    const int width = w * std::min(1 << i, 8);
    params_.add("conv" + std::to_string(i) + ".w", normal_init<T>({width, prev, 4, 4}, rng));
    if (i == 0) params_.add("conv0.b", Tensor<T>({width}));
    prev = width;
  }
  params_.add("score.w", normal_init<T>({1, prev, 4, 4}, rng));
  params_.add("score.b", Tensor<T>({1}));
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& x) const {
  if (x.shape().size() != 4 || x.dim(1) != config_.in_channels) {
    throw ShapeError("discriminator expects " + std::to_string(config_.in_channels) + " channels, got " +
                     shape_string(x.shape()));
  }
  Var<T> h = ad::leaky_relu(ad::conv2d(x, params_.get("conv0.w"), params_.get("conv0.b"), zero_pad(1, 2)), kLeakySlope);
  for (int i = 1; i <= config_.n_layers; ++i) {
    const int stride = i < config_.n_layers ? 2 : 1;
    h = ad::conv2d(h, params_.get("conv" + std::to_string(i) + ".w"), Var<T>(), zero_pad(1, stride));
    h = ad::leaky_relu(ad::instance_norm(h), kLeakySlope);
  }
  return ad::conv2d(h, params_.get("score.w"), params_.get("score.b"), zero_pad(1, 1));
}

template <typename T>
int Discriminator<T>::output_size(int input_size, int n_layers) {
  int s = input_size;
  for (int i = 0; i < n_layers; ++i) s = (s + 2 - 4) / 2 + 1;
  s = s + 2 - 4 + 1;
  return s + 2 - 4 + 1;
}

template <typename T>
Var<T> lsgan_generator_loss(const Var<T>& fake_scores) {
  return ad::mean_square_to(fake_scores, 1.0);
}

template <typename T>
Var<T> lsgan_discriminator_loss(const Var<T>& real_scores, const Var<T>& fake_scores) {
  return ad::scale(ad::add(ad::mean_square_to(real_scores, 1.0), ad::mean_square_to(fake_scores, 0.0)), 0.5);
}

template <typename T>
Adam<T>::Adam(BasicParamStore<T>& params, AdamOptions options) : params_(&params), options_(options) {
  if (!(options_.lr > 0.0)) throw ArgumentError("learning rate must be positive");
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.var.shape());
    v_.emplace_back(e.var.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
  const T step_size = static_cast<T>(options_.lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2), eps = static_cast<T>(options_.eps);
  for (std::size_t k = 0; k < params_->size(); ++k) {
    auto& var = params_->at(k);
    const Tensor<T>& g = var.grad();
    if (g.size() == 0) continue;
    Tensor<T>& p = var.mutable_value();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[k][i] = b1 * m_[k][i] + (T{1} - b1) * g[i];
      v_[k][i] = b2 * v_[k][i] + (T{1} - b2) * g[i] * g[i];
      p[i] -= step_size * m_[k][i] / (std::sqrt(v_[k][i] * inv_bc2) + eps);
    }
  }
}

template <typename T>
Tensor<T> level_channel(int batch, int height, int width, std::span<const double> levels) {
  if (static_cast<int>(levels.size()) != batch) throw ShapeError("one level per batch sample required");
  Tensor<T> t({batch, 1, height, width});
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int b = 0; b < batch; ++b) {
    check_level(levels[b]);
    std::fill(t.data() + b * plane, t.data() + (b + 1) * plane, static_cast<T>(2.0 * levels[b] - 1.0));
  }
  return t;
}

#define SMG_INSTANTIATE_NETWORKS(T)                                                                            \
  template Var<T> residual_branch(const Var<T>&, const ResidualBranch<T>&, double, Rng*);                     \
  template Var<T> resblock_forward(const Var<T>&, const ResidualBranch<T>&, double, Rng*);                    \
  template Var<T> controllable_resblock_forward(const Var<T>&, double, const ControllableResBlockState<T>&,   \
                                                double, Rng*);                                                \
  template class Generator<T>;                                                                                \
  template class Discriminator<T>;                                                                            \
  template class Adam<T>;                                                                                     \
  template Var<T> lsgan_generator_loss(const Var<T>&);                                                        \
  template Var<T> lsgan_discriminator_loss(const Var<T>&, const Var<T>&);                                     \
  template Tensor<T> level_channel(int, int, int, std::span<const double>);

SMG_INSTANTIATE_NETWORKS(float)
SMG_INSTANTIATE_NETWORKS(double)

}  // namespace smg::backbone
