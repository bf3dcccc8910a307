#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "gradcheck.hpp"
#include "tacvit/training.hpp"

using namespace tacvit;
namespace fs = std::filesystem;

namespace {

std::vector<DatasetManifest> fake_manifests(int sensors, int per_sensor) {
  std::vector<DatasetManifest> ms(static_cast<size_t>(sensors));
  for (int s = 0; s < sensors; ++s) {
    ms[size_t(s)].sensor_id = s + 1;
    ms[size_t(s)].count = per_sensor;
    for (int i = 0; i < per_sensor; ++i) ms[size_t(s)].entries.push_back({"img", ContactLabel{}});
  }
  return ms;
}

// tiny linear-friendly cnn: 1x1 identity conv then a single fc layer
Model linear_model() {
  CnnConfig cfg;
  cfg.image_size = 2;
  cfg.conv_layers = 1;
  cfg.kernels_per_layer = 1;
  cfg.kernel_size = 1;
  cfg.pool = "none";
  cfg.fc_layers = 1;
  Model m = make_cnn_model(cfg, 1);
  // identity conv, frozen: the trainable part is exactly one linear layer
  m.params.at("cnn.conv0.k").mutable_value() = {1.0f};
  m.params.at("cnn.conv0.k").set_requires_grad(false);
  m.params.at("cnn.conv0.b").set_requires_grad(false);
  return m;
}

std::vector<Sample> linear_samples(int n, uint64_t seed) {
  // noiseless targets from a fixed linear map of the 4 pixels
  const float w_true[4][6] = {{0.2f, -0.1f, 0.3f, 0.05f, -0.2f, 0.1f},
                              {-0.3f, 0.2f, 0.1f, -0.15f, 0.25f, -0.05f},
                              {0.1f, 0.3f, -0.2f, 0.2f, 0.1f, 0.15f},
                              {0.05f, -0.25f, 0.15f, 0.1f, -0.1f, 0.2f}};
  Rng rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.image = Tensor<float>::zeros({1, 2, 2});
    for (auto& v : s.image.mutable_value()) v = float(rng.uniform(0.1, 1.0));
    for (int j = 0; j < 6; ++j) {
      float acc = 0;
      for (int k = 0; k < 4; ++k) acc += s.image.value()[size_t(k)] * w_true[k][j];
      s.target[size_t(j)] = acc;
    }
    out.push_back(std::move(s));
  }
  return out;
}

VitConfig micro_vit() {
  VitConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
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

std::vector<Sample> vit_samples(int n, const VitConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.image = tacvit::testing::random_tensor<float>(rng, {cfg.channels, cfg.image_size, cfg.image_size}, false);
    for (auto& t : s.target) t = float(rng.uniform(-1, 1));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("label normalizer round-trips and hits the range corners") {
  ContactLabel l;
  l.z = 3.1; l.rx = -12.0; l.ry = 7.5; l.fx = 1.2; l.fy = -2.8; l.fz = 9.0;
  auto n = LabelNormalizer::normalize(l);
  auto back = LabelNormalizer::denormalize(n);
  auto t = LabelNormalizer::targets(l);
  for (int i = 0; i < 6; ++i)
    CHECK(std::abs(back[size_t(i)] - t[size_t(i)]) <= 1e-6 * std::max(1.0, std::abs(t[size_t(i)])));

  ContactLabel lo;  // z=0, fz=0, rest 0
  auto nlo = LabelNormalizer::normalize(lo);
  CHECK(nlo[0] == doctest::Approx(-1.0));
  CHECK(nlo[5] == doctest::Approx(-1.0));
  ContactLabel hi;
  hi.z = 4; hi.rx = 20; hi.ry = 20; hi.fx = 3; hi.fy = 3; hi.fz = 10;
  auto nhi = LabelNormalizer::normalize(hi);
  for (double v : nhi) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("split: 3000 at 0.8 gives 2400/600, stratified per sensor, deterministic") {
  auto ms = fake_manifests(5, 3000);
  auto [train, val] = split_dataset(ms, 0.8, 7);
  CHECK(train.size() == 5 * 2400);
  CHECK(val.size() == 5 * 600);

  std::map<int, int> tr_per, va_per;
  for (const auto& r : train) ++tr_per[r.manifest->sensor_id];
  for (const auto& r : val) ++va_per[r.manifest->sensor_id];
  for (int s = 1; s <= 5; ++s) {
    CHECK(tr_per[s] == 2400);
    CHECK(va_per[s] == 600);
  }

  // disjoint and exhaustive per sensor
  std::set<std::pair<int, int>> seen;
  for (const auto& r : train) seen.insert({r.manifest->sensor_id, r.index});
  for (const auto& r : val) seen.insert({r.manifest->sensor_id, r.index});
  CHECK(seen.size() == 15000);

  auto [train2, val2] = split_dataset(ms, 0.8, 7);
  for (size_t i = 0; i < train.size(); ++i) {
    CHECK(train[i].manifest->sensor_id == train2[i].manifest->sensor_id);
    CHECK(train[i].index == train2[i].index);
  }

  CHECK_THROWS_AS(split_dataset({}, 0.8, 1), UsageError);
  CHECK_THROWS_AS(split_dataset(ms, 1.5, 1), ConfigError);
}

TEST_CASE("prepare_image: resize, centering, channel replication") {
  Tensor<float> g = Tensor<float>::zeros({1, 4, 4});
  for (int i = 0; i < 16; ++i) g.mutable_value()[size_t(i)] = i / 15.0f;

  auto same = prepare_image(g, 4, 1, "none");
  CHECK(same.value() == g.value());

  auto centered = prepare_image(g, 4, 1, "center");
  for (int i = 0; i < 16; ++i)
    CHECK(centered.value()[size_t(i)] == doctest::Approx(g.value()[size_t(i)] * 2 - 1));

  auto up = prepare_image(g, 8, 3, "none");
  CHECK(up.shape() == Shape{3, 8, 8});
  for (int64_t i = 0; i < 64; ++i) {
    CHECK(up.value()[size_t(i)] == up.value()[size_t(64 + i)]);
    CHECK(up.value()[size_t(i)] == up.value()[size_t(128 + i)]);
  }
  for (float v : up.value()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  CHECK_THROWS_AS(prepare_image(g, 4, 1, "scale"), ConfigError);
}

TEST_CASE("a linear task reaches MSE < 1e-3 within 200 optimizer steps") {
  Model m = linear_model();
  auto samples = linear_samples(16, 11);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 200;  // one step per epoch on a single full batch
  cfg.lr = 0.05;
  cfg.weight_decay = 0;
  cfg.seed = 11;
  auto hist = train(m, samples, {}, cfg);
  CHECK(hist.epochs.size() == 200);
  CHECK(hist.epochs.back().train_mse < 1e-3);
}

TEST_CASE("one epoch on one batch is exactly one optimizer step") {
  Model trained = linear_model();
  auto samples = linear_samples(16, 13);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0;
  cfg.seed = 13;
  train(trained, samples, {}, cfg);

  // replay the identical single step by hand
  Model manual = linear_model();
  Rng shuffler(Rng::mix(cfg.seed, 0x7261696eull));
  std::vector<size_t> order(16);
  for (size_t i = 0; i < 16; ++i) order[i] = i;
  shuffler.shuffle(order);
  std::vector<Tensor<float>> imgs;
  std::vector<float> tv;
  for (size_t i : order) {
    imgs.push_back(samples[i].image);
    for (float v : samples[i].target) tv.push_back(v);
  }
  Tape<float> tape;
  auto loss = mse_loss(tape, manual.forward(tape, imgs), Tensor<float>({16, 6}, std::move(tv)));
  tape.backward(loss);
  AdamHyper hp;
  hp.lr = cfg.lr;
  hp.weight_decay = 0;
  for (auto& [name, t] : manual.params) {
    if (!t.has_grad()) continue;
    AdamState<float> st(hp);
    adam_step(t, st);
  }
  for (auto& [name, t] : manual.params)
    CHECK(trained.params.at(name).value() == t.value());
}

TEST_CASE("frozen base stays bit-identical through fine-tuning") {
  VitConfig cfg = micro_vit();
  Model m = make_vit_model(cfg, 17, true);
  auto before = [&]() {
    std::map<std::string, std::vector<float>> s;
    for (auto& [k, v] : m.params)
      if (k.find(".lora.") == std::string::npos && k.rfind("head.", 0) != 0) s[k] = v.value();
    return s;
  }();

  auto tr = vit_samples(8, cfg, 5);
  auto va = vit_samples(4, cfg, 6);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 3;  // below the unfreeze epoch
  tc.lr = 1e-3;
  tc.lora_mode = true;
  tc.unfreeze_epoch = 5;
  tc.seed = 17;
  auto hist = train(m, tr, va, tc);
  CHECK(hist.epochs.size() == 3);

  for (const auto& [k, v] : before) CHECK(m.params.at(k).value() == v);
  CHECK(hist.best_epoch >= 0);
}

TEST_CASE("unfreezing actually changes encoder weights after the trigger") {
  VitConfig cfg = micro_vit();
  Model m = make_vit_model(cfg, 19, true);
  auto w0 = m.params.at("vit.block1.mlp.w1").value();
  auto tr = vit_samples(8, cfg, 7);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 3;
  tc.lr = 1e-3;
  tc.lora_mode = true;
  tc.unfreeze_epoch = 1;
  tc.unfreeze_blocks = 2;
  tc.seed = 19;
  train(m, tr, {}, tc);
  CHECK(m.params.at("vit.block1.mlp.w1").value() != w0);
}

TEST_CASE("training history is deterministic for a fixed seed") {
  auto run = []() {
    Model m = linear_model();
    auto s = linear_samples(32, 23);
    auto va = linear_samples(8, 24);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 5;
    cfg.lr = 0.01;
    cfg.seed = 23;
    return train(m, s, va, cfg).to_csv();
  };
  CHECK(run() == run());
}

TEST_CASE("evaluate_mae: constant-center predictor and exact oracle") {
  // all-zero weights make the cnn output the zero vector (the range centers)
  CnnConfig cfg;
  cfg.image_size = 8;
  cfg.conv_layers = 1;
  cfg.kernels_per_layer = 2;
  cfg.fc_hidden = 4;
  Model m = make_cnn_model(cfg, 31);
  for (auto& [k, v] : m.params)
    for (auto& x : v.mutable_value()) x = 0;

  auto profile = default_profiles()[0];
  auto labels = sample_labels(200, 41, profile);
  std::vector<Sample> samples;
  for (const auto& l : labels) {
    Sample s;
    s.image = Tensor<float>::zeros({1, 8, 8});
    auto n = LabelNormalizer::normalize(l);
    for (int j = 0; j < 6; ++j) s.target[size_t(j)] = float(n[size_t(j)]);
    s.label = l;
    samples.push_back(std::move(s));
  }
  auto res = evaluate_mae(m, samples);
  CHECK(res.pairs.size() == 200);

  double expect_z = 0;
  for (const auto& l : labels) expect_z += std::abs(2.0 - l.z);
  expect_z /= 200.0;
  CHECK(res.mae[0] == doctest::Approx(expect_z).epsilon(1e-4));

  // perfect predictions: feed the model's own output back as targets
  for (auto& s : samples)
    for (auto& t : s.target) t = 0;
  auto perfect = evaluate_mae(m, samples);
  for (double v : perfect.mae) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("model checkpoint round-trip preserves evaluation exactly") {
  VitConfig cfg = micro_vit();
  Model m = make_vit_model(cfg, 37, true);
  auto tr = vit_samples(8, cfg, 9);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 1;
  tc.lr = 1e-3;
  tc.lora_mode = true;
  tc.seed = 37;
  train(m, tr, {}, tc);

  const std::string path = (fs::temp_directory_path() / "tacvit_model.tvt1").string();
  save_model(m, path);
  Model back = load_model(path);
  CHECK(back.family == "tacvit");
  CHECK(back.use_lora);
  for (auto& [k, v] : m.params) CHECK(back.params.at(k).value() == v.value());

  auto a = evaluate_mae(m, tr);
  auto b = evaluate_mae(back, tr);
  for (int j = 0; j < 6; ++j) CHECK(a.mae[size_t(j)] == b.mae[size_t(j)]);
  fs::remove(path);
  fs::remove(path + ".cfg");
}

TEST_CASE("nan loss aborts with a diagnostic that names epoch and batch") {
  Model m = linear_model();
  m.params.at("cnn.fc0.w").mutable_value()[0] = 1e30f;  // provoke overflow
  auto samples = linear_samples(16, 43);
  for (auto& s : samples) s.image.mutable_value()[0] = 1e10f;
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.seed = 43;
  try {
    train(m, samples, {}, cfg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
    CHECK(msg.find("lr=") != std::string::npos);
  }
}
