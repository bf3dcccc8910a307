#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "gradcheck.hpp"
#include "tacvit/models.hpp"

using namespace tacvit;
using tacvit::testing::random_tensor;

namespace {

VitConfig tiny_vit() {
  VitConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.channels = 1;
  cfg.embed_dim = 16;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.mlp_hidden = 32;
  cfg.head_layers = 2;
  cfg.head_hidden = {8};
  cfg.lora_rank = 2;
  cfg.lora_alpha = 4.0;
  return cfg;
}

std::vector<Tensor<float>> random_images(Rng& rng, int n, const VitConfig& cfg) {
  std::vector<Tensor<float>> imgs;
  for (int i = 0; i < n; ++i)
    imgs.push_back(random_tensor<float>(rng, {cfg.channels, cfg.image_size, cfg.image_size}, false));
  return imgs;
}

template <typename T>
ModelParams<double> shadow_params(const ModelParams<T>& p) {
  ModelParams<double> out;
  for (const auto& [name, t] : p) {
    std::vector<double> v(t.value().begin(), t.value().end());
    out.add(name, Tensor<double>(t.shape(), std::move(v), false));
  }
  return out;
}

// Full-model check: analytic grads at T, difference quotients on a double copy.
template <typename T>
double vit_model_max_rel_err(uint64_t seed) {
  VitConfig cfg = tiny_vit();
  Rng rng(seed);
  auto p = init_vit_params<T>(cfg, rng);
  std::vector<Tensor<T>> imgs;
  for (int i = 0; i < 2; ++i)
    imgs.push_back(random_tensor<T>(rng, {cfg.channels, cfg.image_size, cfg.image_size}, false));
  auto target = random_tensor<T>(rng, {2, cfg.output_dim}, false);

  Tape<T> tape;
  auto loss = mse_loss(tape, vit_forward(tape, imgs, p, cfg, false), target);
  tape.backward(loss);

  auto pd = shadow_params(p);
  std::vector<Tensor<double>> imgsd;
  for (const auto& im : imgs) {
    std::vector<double> v(im.value().begin(), im.value().end());
    imgsd.emplace_back(im.shape(), std::move(v), false);
  }
  Tensor<double> targetd(target.shape(),
                         std::vector<double>(target.value().begin(), target.value().end()), false);
  auto eval = [&]() {
    Tape<double> t;
    return mse_loss(t, vit_forward(t, imgsd, pd, cfg, false), targetd).item();
  };

  std::vector<std::string> names;
  for (const auto& [name, t] : p) names.push_back(name);
  rng.shuffle(names);
  names.resize(5);

  const double base_h = sizeof(T) == 4 ? 1e-3 : 1e-6;
  const double floor = sizeof(T) == 4 ? 1e-2 : 1e-4;
  double worst = 0;
  for (const auto& name : names) {
    auto& t = p.at(name);
    auto& td = pd.at(name);
    for (int s = 0; s < 3; ++s) {
      const int64_t j = int64_t(rng.next_below(uint64_t(t.numel())));
      double& x = td.mutable_value()[size_t(j)];
      const double orig = x;
      const double h = base_h * std::max(1.0, std::abs(orig));
      x = orig + h;
      const double fp = eval();
      x = orig - h;
      const double fm = eval();
      x = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = t.has_grad() ? double(t.grad()[size_t(j)]) : 0.0;
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor}));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("patchify counts at reference and desk geometry") {
  Rng rng(1);
  auto big = random_tensor<float>(rng, {3, 224, 224}, false);
  auto patches = patchify(big, 16);
  CHECK(patches.shape() == Shape{196, 16 * 16 * 3});

  auto small = random_tensor<float>(rng, {1, 64, 64}, false);
  CHECK(patchify(small, 8).shape() == Shape{64, 64});

  CHECK_THROWS_AS(patchify(random_tensor<float>(rng, {1, 10, 10}, false), 3), ConfigError);
}

TEST_CASE("patchify round-trip is exact") {
  Rng rng(2);
  auto img = random_tensor<float>(rng, {2, 24, 24}, false);
  auto back = unpatchify(patchify(img, 8), 8, 2, 24, 24);
  CHECK(back.value() == img.value());
}

TEST_CASE("vit config validation") {
  VitConfig cfg = tiny_vit();
  cfg.patch_size = 7;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_vit();
  cfg.num_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_vit();
  cfg.lora_rank = 8;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_vit();
  cfg.pool = "sum";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("vit forward: batch of 16 maps to 16x6 and is a pure function") {
  VitConfig cfg = tiny_vit();
  Rng rng(3);
  auto p = init_vit_params<float>(cfg, rng);
  auto imgs = random_images(rng, 16, cfg);
  Tape<float> t1, t2;
  auto y1 = vit_forward(t1, imgs, p, cfg, false);
  CHECK(y1.shape() == Shape{16, 6});
  auto y2 = vit_forward(t2, imgs, p, cfg, false);
  CHECK(y1.value() == y2.value());
}

TEST_CASE("vit forward: permuting patches together with position rows keeps output") {
  VitConfig cfg = tiny_vit();
  Rng rng(4);
  auto p = init_vit_params<float>(cfg, rng);
  auto img = random_images(rng, 1, cfg)[0];

  const int64_t np = cfg.num_patches(), plen = cfg.patch_len(), d = cfg.embed_dim;
  std::vector<int64_t> perm(np);
  for (int64_t i = 0; i < np; ++i) perm[i] = i;
  rng.shuffle(perm);

  auto patches = patchify(img, cfg.patch_size);
  Tensor<float> shuffled = Tensor<float>::zeros(patches.shape());
  for (int64_t i = 0; i < np; ++i)
    std::copy_n(patches.value().begin() + perm[i] * plen, plen,
                shuffled.mutable_value().begin() + i * plen);
  auto img2 = unpatchify(shuffled, cfg.patch_size, cfg.channels, cfg.image_size, cfg.image_size);

  Rng rng2(4);
  auto p2 = init_vit_params<float>(cfg, rng2);  // same seed, identical values
  auto& pos = p.at("vit.pos");
  auto& pos2 = p2.at("vit.pos");
  for (int64_t i = 0; i < np; ++i)  // row 0 is the cls slot and stays put
    std::copy_n(pos.value().begin() + (1 + perm[i]) * d, d,
                pos2.mutable_value().begin() + (1 + i) * d);

  Tape<float> t1, t2;
  auto y1 = vit_forward(t1, {img}, p, cfg, false);
  auto y2 = vit_forward(t2, {img2}, p2, cfg, false);
  for (int j = 0; j < 6; ++j)
    CHECK(y2.value()[j] == doctest::Approx(y1.value()[j]).epsilon(1e-4));
}

TEST_CASE("zero adapters reproduce the base model exactly") {
  VitConfig cfg = tiny_vit();
  Rng rng(5);
  auto p = init_vit_params<float>(cfg, rng);
  add_lora_params(p, cfg, rng);  // W_B zero-initialized
  auto imgs = random_images(rng, 3, cfg);
  Tape<float> t1, t2;
  auto with = vit_forward(t1, imgs, p, cfg, true);
  auto without = vit_forward(t2, imgs, p, cfg, false);
  CHECK(with.value() == without.value());
}

TEST_CASE("lora adapter form matches merged weights on 20 random inputs") {
  Rng rng(6);
  const int64_t d = 16;
  for (int it = 0; it < 20; ++it) {
    LoraAdapter<float> ad;
    ad.rank = 4;
    ad.alpha = 8.0;
    ad.target = "q";
    ad.wa = random_tensor<float>(rng, {d, 4}, false);
    ad.wb = random_tensor<float>(rng, {4, d}, false);
    auto w = random_tensor<float>(rng, {d, d}, false);
    auto x = random_tensor<float>(rng, {5, d}, false);
    Tape<float> tape;
    auto fused = lora_apply(tape, w, ad, x);
    auto merged = matmul(tape, x, lora_merge_weights(w, ad));
    for (int64_t i = 0; i < fused.numel(); ++i) {
      // mixed tolerance: relative above 1, absolute below (inputs are O(1))
      const float denom = std::max(1.0f, std::abs(merged.value()[i]));
      CHECK(std::abs(fused.value()[i] - merged.value()[i]) / denom < 1e-5f);
    }
  }
}

TEST_CASE("lora: zero W_A gives the base projection; frozen base gets no grad") {
  Rng rng(7);
  const int64_t d = 8;
  LoraAdapter<float> ad;
  ad.rank = 2;
  ad.alpha = 4.0;
  ad.wa = Tensor<float>::zeros({d, 2}, true);
  ad.wb = random_tensor<float>(rng, {2, d});
  auto w = random_tensor<float>(rng, {d, d}, false);  // frozen base
  auto x = random_tensor<float>(rng, {3, d}, false);
  Tape<float> tape;
  auto y = lora_apply(tape, w, ad, x);
  auto base = matmul(tape, x, w);
  CHECK(y.value() == base.value());

  auto loss = sum_all(tape, y);
  tape.backward(loss);
  CHECK(ad.wa.has_grad());
  CHECK(ad.wb.has_grad());
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("attention: single token returns v; identical keys average the values") {
  Tape<float> tape;
  Rng rng(8);
  auto v1 = random_tensor<float>(rng, {1, 1, 1, 4}, false);
  auto q1 = random_tensor<float>(rng, {1, 1, 1, 4}, false);
  auto k1 = random_tensor<float>(rng, {1, 1, 1, 4}, false);
  auto o1 = attention(tape, q1, k1, v1);
  CHECK(o1.value() == v1.value());

  auto q = random_tensor<float>(rng, {1, 1, 3, 4}, false);
  auto k = Tensor<float>::full({1, 1, 3, 4}, 0.7f);
  auto v = random_tensor<float>(rng, {1, 1, 3, 4}, false);
  auto o = attention(tape, q, k, v);
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 4; ++j) {
      float mean = (v.value()[j] + v.value()[4 + j] + v.value()[8 + j]) / 3.0f;
      CHECK(o.value()[t * 4 + j] == doctest::Approx(mean).epsilon(1e-5));
    }
}

TEST_CASE("attention gradient on 2x1x3x4") {
  Rng rng(9);
  for (int it = 0; it < 20; ++it) {
    auto q = random_tensor<float>(rng, {2, 1, 3, 4});
    auto k = random_tensor<float>(rng, {2, 1, 3, 4});
    auto v = random_tensor<float>(rng, {2, 1, 3, 4});
    auto w = random_tensor<float>(rng, {2, 1, 3, 4}, false);
    auto res = tacvit::testing::check_gradients<float>(
        [](auto& t, const auto& in) {
          auto o = attention(t, in[0], in[1], in[2]);
          return sum_all(t, mul(t, reshape(t, o, {2 * 3, 4}), reshape(t, in[3], {2 * 3, 4})));
        },
        {q, k, v, w}, rng, 4);
    CHECK(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("cnn forward shape and zero-weight behavior") {
  CnnConfig cfg;
  cfg.image_size = 16;
  cfg.conv_layers = 2;
  cfg.kernels_per_layer = 4;
  cfg.fc_hidden = 8;
  Rng rng(10);
  auto p = init_cnn_params<float>(cfg, rng);
  std::vector<Tensor<float>> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(random_tensor<float>(rng, {1, 16, 16}, false));
  Tape<float> tape;
  auto y = cnn_forward(tape, imgs, p, cfg);
  CHECK(y.shape() == Shape{3, 6});

  for (auto& [name, t] : p)
    for (auto& v : t.mutable_value()) v = 0;
  Tape<float> t2;
  auto y0 = cnn_forward(t2, imgs, p, cfg);
  for (float v : y0.value()) CHECK(v == 0.0f);

  CnnConfig bad = cfg;
  bad.conv_layers = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cnn gradient on a 2-layer micro config") {
  CnnConfig cfg;
  cfg.image_size = 8;
  cfg.conv_layers = 2;
  cfg.kernels_per_layer = 2;
  cfg.fc_hidden = 4;
  Rng rng(11);
  auto p = init_cnn_params<float>(cfg, rng);
  auto img = random_tensor<float>(rng, {1, 8, 8}, false);
  auto target = random_tensor<float>(rng, {1, 6}, false);

  Tape<float> tape;
  auto loss = mse_loss(tape, cnn_forward(tape, {img}, p, cfg), target);
  tape.backward(loss);

  auto pd = shadow_params(p);
  Tensor<double> imgd(img.shape(), std::vector<double>(img.value().begin(), img.value().end()), false);
  Tensor<double> td(target.shape(), std::vector<double>(target.value().begin(), target.value().end()), false);
  double worst = 0;
  for (auto& [name, t] : p) {
    auto& sh = pd.at(name);
    for (int s = 0; s < 3; ++s) {
      const int64_t j = int64_t(rng.next_below(uint64_t(t.numel())));
      double& x = sh.mutable_value()[size_t(j)];
      const double orig = x;
      const double h = 1e-3 * std::max(1.0, std::abs(orig));
      auto eval = [&]() {
        Tape<double> tp;
        return mse_loss(tp, cnn_forward(tp, {imgd}, pd, cfg), td).item();
      };
      x = orig + h;
      const double fp = eval();
      x = orig - h;
      const double fm = eval();
      x = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = t.has_grad() ? double(t.grad()[size_t(j)]) : 0.0;
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-2}));
    }
  }
  CHECK(worst < 1e-2);
}

TEST_CASE("full vit model gradients vs finite differences") {
  CHECK(vit_model_max_rel_err<float>(20) < 1e-2);
  CHECK(vit_model_max_rel_err<double>(21) < 1e-5);
}

TEST_CASE("freeze schedule") {
  VitConfig cfg = tiny_vit();
  Rng rng(12);
  auto p = init_vit_params<float>(cfg, rng);
  add_lora_params(p, cfg, rng);
  std::vector<UnfreezeStep> sched = {{3, {"vit.block1."}}, {5, {"vit.block0.", "vit.ln."}}};

  auto trainable = [&]() {
    std::set<std::string> s;
    for (auto& [name, t] : p)
      if (t.requires_grad()) s.insert(name);
    return s;
  };

  SUBCASE("epoch 0: only head and adapters") {
    freeze_schedule(p, 0, sched);
    for (const auto& name : trainable())
      CHECK((name.rfind("head.", 0) == 0 || name.find(".lora.") != std::string::npos));
    CHECK(trainable().count("head.fc0.w") == 1);
    CHECK(trainable().count("vit.block0.attn.q.lora.a") == 1);
  }

  SUBCASE("empty schedule keeps the frozen set constant") {
    freeze_schedule(p, 0, {});
    auto s0 = trainable();
    freeze_schedule(p, 50, {});
    CHECK(trainable() == s0);
  }

  SUBCASE("after the final trigger the set is head + lora + scheduled prefixes") {
    freeze_schedule(p, 7, sched);
    for (auto& [name, t] : p) {
      bool expect = name.rfind("head.", 0) == 0 || name.find(".lora.") != std::string::npos ||
                    name.rfind("vit.block0.", 0) == 0 || name.rfind("vit.block1.", 0) == 0 ||
                    name.rfind("vit.ln.", 0) == 0;
      CHECK(t.requires_grad() == expect);
    }
  }

  SUBCASE("unknown prefix is a config error") {
    CHECK_THROWS_AS(freeze_schedule(p, 0, {{1, {"vit.block9."}}}), ConfigError);
  }

  SUBCASE("partial trigger at epoch 3") {
    freeze_schedule(p, 3, sched);
    CHECK(p.at("vit.block1.mlp.w1").requires_grad());
    CHECK_FALSE(p.at("vit.block0.mlp.w1").requires_grad());
  }
}

TEST_CASE("parameter count at the reference configuration") {
  VitConfig cfg;
  cfg.image_size = 224;
  cfg.patch_size = 16;
  cfg.channels = 3;
  cfg.embed_dim = 768;
  cfg.num_layers = 12;
  cfg.num_heads = 12;
  cfg.mlp_hidden = 3072;
  cfg.head_layers = 4;
  cfg.head_hidden = {512, 256, 64};
  Rng rng(13);
  auto p = init_vit_params<float>(cfg, rng);
  // hand-summed: embed 768*768+768, pos 197*768, cls 768,
  // 12 blocks of (4*768^2 + 4*768 + 2*2*768 + 768*3072 + 3072 + 3072*768 + 768),
  // final norm 2*768, head 768->512->256->64->6 with biases
  CHECK(p.total_count() == 86340550);
}
