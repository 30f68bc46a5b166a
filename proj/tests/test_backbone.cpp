#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "smg/checkpoint.hpp"
#include "smg/networks.hpp"
#include "smg/training.hpp"

using namespace smg;
using namespace smg::oracle;
using backbone::ControllableResBlockState;
using backbone::Discriminator;
using backbone::DiscriminatorConfig;
using backbone::Generator;
using backbone::GeneratorConfig;

TEST_CASE("controllable block reduces to its plain branches at the level endpoints") {
  std::mt19937_64 rng(11);
  Generator<float> g(tiny_generator(true), 3);
  const int width = 4 * g.config().base_width;
  for (int trial = 0; trial < 5; ++trial) {
    const ad::Var<float> x(random_tensor<float>({2, width, 4, 4}, rng));
    const auto state = g.block_state(0);
    const auto at1 = backbone::controllable_resblock_forward(x, 1.0, state, 0.5, nullptr).value();
    const auto at0 = backbone::controllable_resblock_forward(x, 0.0, state, 0.5, nullptr).value();
    CHECK(at1 == backbone::resblock_forward(x, state.branch_max, 0.5, nullptr).value());
    CHECK(at0 == backbone::resblock_forward(x, state.branch_min, 0.5, nullptr).value());

    for (double level : {0.1, 0.37, 0.5, 0.9}) {
      const auto mid = backbone::controllable_resblock_forward(x, level, state, 0.5, nullptr).value();
      double err = 0, ref = 0;
      for (std::size_t i = 0; i < mid.size(); ++i) {
        const double expected = at0[i] + level * (static_cast<double>(at1[i]) - at0[i]);
        err = std::max(err, std::abs(mid[i] - expected));
        ref = std::max(ref, std::abs(expected));
      }
      CHECK(err <= 1e-5 * ref);
    }
  }
}

TEST_CASE("a plain generator rejects a level and a controllable one requires it") {
  Generator<float> plain(tiny_generator(false), 1);
  Generator<float> ctrl(tiny_generator(true), 1);
  const ad::Var<float> x(Tensor<float>({1, 1, 8, 8}));
  CHECK_THROWS_AS(plain.forward(x, 0.5), ArgumentError);
  CHECK_THROWS_AS(ctrl.forward(x), ArgumentError);
  CHECK_THROWS_AS(ctrl.forward(x, 1.5), ArgumentError);
  CHECK_THROWS_AS(ctrl.forward(ad::Var<float>(Tensor<float>({1, 1, 6, 8})), 0.5), ShapeError);
  CHECK_THROWS_AS(ctrl.forward(ad::Var<float>(Tensor<float>({1, 2, 8, 8})), 0.5), ShapeError);
}

TEST_CASE("branch copy makes the generator level-independent") {
  std::mt19937_64 rng(5);
  Generator<float> g(tiny_generator(true), 8);
  const Tensor<float> probe = random_tensor<float>({1, 1, 8, 8}, rng);
  CHECK_FALSE(g.infer(probe, 0.0) == g.infer(probe, 1.0));
  g.copy_branch_params();
  for (int i = 0; i < 10; ++i) {
    const Tensor<float> x = random_tensor<float>({1, 1, 12, 16}, rng);
    CHECK(g.infer(x, 0.0) == g.infer(x, 1.0));
  }
}

TEST_CASE("generator gradients match finite differences in double precision") {
  std::mt19937_64 rng(21);
  Generator<double> g(tiny_generator(true), 4);
  const ad::Var<double> x(random_tensor<double>({2, 1, 8, 8}, rng));
  const Tensor<double> w = random_tensor<double>({2, 1, 8, 8}, rng);
  const double err = worst_relative_error(g, [&] { return g.forward(x, 0.3); }, w, 12, rng);
  MESSAGE("generator worst relative error " << err);
  CHECK(err < 1e-3);
}

TEST_CASE("discriminator gradients match finite differences in double precision") {
  std::mt19937_64 rng(22);
  Discriminator<double> d(DiscriminatorConfig{2, 2, 4}, 9);
  const ad::Var<double> x(random_tensor<double>({2, 2, 16, 16}, rng));
  const int side = Discriminator<double>::output_size(16, 2);
  const Tensor<double> w = random_tensor<double>({2, 1, side, side}, rng);
  const double err = worst_relative_error(d, [&] { return d.forward(x); }, w, 25, rng);
  MESSAGE("discriminator worst relative error " << err);
  CHECK(err < 1e-3);
}

TEST_CASE("discriminator output size follows the layer arithmetic") {
  for (int size : {16, 32, 64, 256}) {
    for (int layers : {1, 2, 3}) {
      Discriminator<float> d(DiscriminatorConfig{1, layers, 2}, 0);
      const ad::Var<float> x(Tensor<float>({1, 1, size, size}));
      if (Discriminator<float>::output_size(size, layers) < 1) {
        CHECK_THROWS_AS(d.forward(x), ShapeError);
        continue;
      }
      const auto out = d.forward(x);
      CHECK(out.dim(2) == Discriminator<float>::output_size(size, layers));
      CHECK(out.dim(3) == Discriminator<float>::output_size(size, layers));
    }
  }
}

TEST_CASE("least-squares adversarial terms") {
  const ad::Var<double> real(Tensor<double>({1, 1, 1, 2}, std::vector<double>{1.0, 0.5}));
  const ad::Var<double> fake(Tensor<double>({1, 1, 1, 2}, std::vector<double>{0.0, 2.0}));
  // mean((s - 1)^2) over fake scores: (1 + 1) / 2
  CHECK(backbone::lsgan_generator_loss(fake).item() == doctest::Approx(1.0));
  // 0.5 * (mean((r - 1)^2) + mean(f^2)) = 0.5 * (0.125 + 2)
  CHECK(backbone::lsgan_discriminator_loss(real, fake).item() == doctest::Approx(1.0625));
}

TEST_CASE("Adam first step moves each parameter by the learning rate against its gradient") {
  backbone::BasicParamStore<double> store;
  store.add("p", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5}));
  backbone::Adam<double> opt(store, {0.01, 0.5, 0.999, 1e-12});
  const Tensor<double> w({3}, std::vector<double>{3.0, -0.25, 1e-3});
  ad::weighted_sum(store.get("p"), w).backward();
  opt.step();
  const auto& p = store.get("p").value();
  CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(-1.99).epsilon(1e-9));
  CHECK(p[2] == doctest::Approx(0.49).epsilon(1e-9));
  CHECK(opt.steps() == 1);
}

TEST_CASE("adversarial update leaves the discriminator unaffected by the generator objective") {
  std::mt19937_64 rng(2);
  Generator<float> g(tiny_generator(false), 1);
  Discriminator<float> d(DiscriminatorConfig{1, 2, 4}, 2);
  backbone::Adam<float> gopt(g.params()), dopt(d.params());
  const ad::Var<float> x(random_tensor<float>({1, 1, 16, 16}, rng));
  const auto fake = g.forward(x);
  const auto g_obj = backbone::lsgan_generator_loss(d.forward(fake));
  const auto d_obj = backbone::lsgan_discriminator_loss(d.forward(x), d.forward(ad::detach(fake)));

  // Reference discriminator gradient from its own objective only.
  d.params().zero_grad();
  d_obj.backward();
  std::vector<Tensor<float>> expected;
  for (const auto& e : d.params().entries()) expected.push_back(e.var.grad());

  const auto d_before = d.params();
  training::adversarial_update(g_obj, d_obj, gopt, dopt, d.params());
  std::size_t i = 0;
  for (const auto& e : d.params().entries()) CHECK(e.var.grad() == expected[i++]);
  for (const auto& e : g.params().entries()) CHECK(e.var.grad().size() == e.var.value().size());
  CHECK_FALSE(d.params() == d_before);
  for (const auto& e : d.params().entries()) CHECK(e.var.requires_grad());
}

TEST_CASE("divergence is reported with the stage and step") {
  training::StepRecord r{"glyph-2", 41, 0.5, {{"rec", 0.3}, {"adv_g", std::nan("")}}};
  try {
    training::require_finite(r);
    FAIL("expected a divergence error");
  } catch (const DivergenceError& e) {
    const std::string what = e.what();
    CHECK(what.find("glyph-2") != std::string::npos);
    CHECK(what.find("41") != std::string::npos);
    CHECK(what.find("adv_g") != std::string::npos);
  }
  r.terms[1].second = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(training::require_finite(r), DivergenceError);
  r.terms[1].second = 1.0;
  CHECK_NOTHROW(training::require_finite(r));
  CHECK(r.term("rec") == 0.3);
  CHECK_THROWS_AS(r.term("gly"), LookupError);
}

TEST_CASE("history windows") {
  std::vector<training::StepRecord> h;
  for (int i = 0; i < 10; ++i) h.push_back({i < 4 ? "a" : "b", i, 1.0, {{"rec", double(i)}}});
  CHECK(training::trailing_mean(h, "rec", 3) == doctest::Approx(8.0));
  CHECK(training::leading_mean(h, "rec", 2) == doctest::Approx(0.5));
  CHECK(training::leading_mean(h, "rec", 2, "b") == doctest::Approx(4.5));
  CHECK(training::trailing_mean(h, "rec", 100, "a") == doctest::Approx(1.5));
}

TEST_CASE("level channel holds 2l - 1") {
  const std::vector<double> levels{0.0, 0.25, 1.0};
  const auto t = backbone::level_channel<float>(3, 2, 2, levels);
  CHECK(t.at(0, 0, 1, 1) == -1.0f);
  CHECK(t.at(1, 0, 0, 0) == -0.5f);
  CHECK(t.at(2, 0, 1, 0) == 1.0f);
  const std::vector<double> bad{1.5};
  CHECK_THROWS_AS(backbone::level_channel<float>(1, 2, 2, bad), ArgumentError);
}

TEST_CASE("parameter store copies are deep") {
  backbone::ParamStore a;
  a.add("w", Tensor<float>({2}, std::vector<float>{1, 2}));
  backbone::ParamStore b = a;
  b.get("w").mutable_value()[0] = 7;
  CHECK(a.get("w").value()[0] == 1);
  CHECK_THROWS_AS(a.add("w", Tensor<float>({1})), ArgumentError);
  CHECK_THROWS_AS(a.assign("w", Tensor<float>({3})), ShapeError);
  CHECK_THROWS_AS(a.get("missing"), LookupError);
}

namespace {

bool bitwise_equal(const backbone::ParamStore& a, const backbone::ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.var.shape() != y.var.shape()) return false;
    if (std::memcmp(x.var.value().data(), y.var.value().data(), x.var.value().size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> small(0, 5);
  std::uniform_int_distribution<std::uint32_t> bits;
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789._/-";
  auto word = [&](int len) {
    std::string s;
    for (int i = 0; i < len; ++i) s += alphabet[bits(rng) % alphabet.size()];
    return s;
  };

  for (int trial = 0; trial < 25; ++trial) {
    backbone::ParamStore store;
    const int tensors = small(rng) + 1;
    for (int t = 0; t < tensors; ++t) {
      Shape shape;
      const int rank = small(rng) % 5;
      for (int r = 0; r < rank; ++r) shape.push_back(small(rng));
      Tensor<float> v(shape);
      // Arbitrary bit patterns, including NaNs, infinities and subnormals.
      for (auto& x : v.values()) {
        const std::uint32_t b = bits(rng);
        std::memcpy(&x, &b, sizeof b);
      }
      store.add("t" + std::to_string(t) + "." + word(1 + small(rng)), v);
    }
    backbone::Metadata meta;
    for (int k = 0; k < small(rng); ++k) meta[word(3 + small(rng))] = word(small(rng) * 3) + " =x";
    meta["f"] = backbone::format_double(std::uniform_real_distribution<double>(-1e6, 1e6)(rng));

    const auto bytes = backbone::serialize_checkpoint(store, meta);
    const auto back = backbone::parse_checkpoint(bytes);
    CHECK(bitwise_equal(store, back.params));
    CHECK(back.meta == meta);
    CHECK(backbone::serialize_checkpoint(back.params, back.meta) == bytes);
    CHECK(std::stod(back.meta.at("f")) == std::stod(meta.at("f")));
  }
}

TEST_CASE("double metadata survives its text form exactly") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    const backbone::Metadata m{{"v", backbone::format_double(v)}};
    CHECK(backbone::meta_double(m, "v") == v);
  }
}

TEST_CASE("malformed checkpoints are rejected with an offset") {
  backbone::ParamStore store;
  store.add("w", Tensor<float>({2, 3}, 1.5f));
  const auto good = backbone::serialize_checkpoint(store, {{"net", "glyph"}});
  for (std::size_t cut = 0; cut < good.size(); ++cut) {
    const std::vector<std::uint8_t> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(backbone::parse_checkpoint(truncated), FormatError);
  }
  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(backbone::parse_checkpoint(trailing), FormatError);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  try {
    backbone::parse_checkpoint(bad_magic);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
  CHECK_THROWS_AS(backbone::serialize_checkpoint(store, {{"bad\nkey", "v"}}), ArgumentError);
  CHECK_THROWS_AS(backbone::meta_int({{"k", "1.5"}}, "k"), FormatError);
  CHECK_THROWS_AS(backbone::meta_get({}, "k"), FormatError);
}

TEST_CASE("generator survives a checkpoint round trip") {
  std::mt19937_64 rng(4);
  Generator<float> g(tiny_generator(true), 12);
  const auto ckpt = training::pack_generator(g, {{"style", "x"}}, "glyph");
  const auto restored = training::unpack_generator(backbone::parse_checkpoint(backbone::serialize_checkpoint(ckpt.params, ckpt.meta)), "glyph");
  const Tensor<float> x = random_tensor<float>({1, 1, 8, 8}, rng);
  CHECK(restored.infer(x, 0.4) == g.infer(x, 0.4));
  CHECK_THROWS_AS(training::unpack_generator(ckpt, "texture"), FormatError);
}

TEST_CASE("forward passes are counted") {
  Generator<float> g(tiny_generator(false), 1);
  const Tensor<float> x({1, 1, 8, 8});
  CHECK(g.forward_passes() == 0);
  g.infer(x);
  g.forward(ad::Var<float>(x));
  CHECK(g.forward_passes() == 2);
}
