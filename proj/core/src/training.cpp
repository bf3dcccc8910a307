#include "tacvit/training.hpp"

#include <algorithm>
#include <cstdio>

#include "tacvit/rng.hpp"

namespace tacvit {

namespace {
// offset/scale per target: physical = norm * scale + offset
constexpr double kOffset[6] = {2.0, 0.0, 0.0, 0.0, 0.0, 5.0};
constexpr double kScale[6] = {2.0, 20.0, 20.0, 3.0, 3.0, 5.0};
constexpr const char* kNames[6] = {"z", "rx", "ry", "fx", "fy", "fz"};
}  // namespace

std::array<double, 6> LabelNormalizer::normalize(const ContactLabel& l) {
  auto t = targets(l);
  std::array<double, 6> out;
  for (int i = 0; i < 6; ++i) out[i] = (t[i] - kOffset[i]) / kScale[i];
  return out;
}

std::array<double, 6> LabelNormalizer::denormalize(const std::array<double, 6>& n) {
  std::array<double, 6> out;
  for (int i = 0; i < 6; ++i) out[i] = n[i] * kScale[i] + kOffset[i];
  return out;
}

const char* LabelNormalizer::target_name(int i) { return kNames[i]; }

std::pair<std::vector<DataRef>, std::vector<DataRef>> split_dataset(
    const std::vector<DatasetManifest>& manifests, double fraction, uint64_t seed) {
  if (fraction <= 0 || fraction >= 1) throw ConfigError("split_dataset: fraction must be in (0,1)");
  std::vector<DataRef> train, val;
  bool any = false;
  for (const auto& m : manifests) {
    if (m.entries.empty()) continue;
    any = true;
    std::vector<int> idx(m.entries.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(m.sensor_id)));
    rng.shuffle(idx);
    const size_t cut = static_cast<size_t>(fraction * double(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i)
      (i < cut ? train : val).push_back({&m, idx[i]});
  }
  if (!any) throw UsageError("split_dataset: empty dataset");
  return {std::move(train), std::move(val)};
}

Tensor<float> prepare_image(const Tensor<float>& gray, int64_t image_size, int64_t channels,
                            const std::string& pixel_norm) {
  if (gray.rank() != 3 || gray.dim(0) != 1)
    throw ShapeError("prepare_image: expects [1,H,W], got " + shape_str(gray.shape()));
  const int64_t h = gray.dim(1), w = gray.dim(2), s = image_size;
  Tensor<float> one = Tensor<float>::zeros({1, s, s});
  if (h == s && w == s) {
    one.mutable_value() = gray.value();
  } else {
    for (int64_t y = 0; y < s; ++y)
      for (int64_t x = 0; x < s; ++x) {
        const double sy = (y + 0.5) * double(h) / double(s) - 0.5;
        const double sx = (x + 0.5) * double(w) / double(s) - 0.5;
        const int64_t y0 = std::clamp<int64_t>(int64_t(std::floor(sy)), 0, h - 1);
        const int64_t x0 = std::clamp<int64_t>(int64_t(std::floor(sx)), 0, w - 1);
        const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        const double fy = std::clamp(sy - double(y0), 0.0, 1.0);
        const double fx = std::clamp(sx - double(x0), 0.0, 1.0);
        const auto& g = gray.value();
        const double v = (1 - fy) * ((1 - fx) * g[y0 * w + x0] + fx * g[y0 * w + x1]) +
                         fy * ((1 - fx) * g[y1 * w + x0] + fx * g[y1 * w + x1]);
        one.mutable_value()[y * s + x] = float(v);
      }
  }
  if (pixel_norm == "center")
    for (auto& v : one.mutable_value()) v = v * 2.0f - 1.0f;
  else if (pixel_norm != "none")
    throw ConfigError("data.pixel_norm must be none or center, got " + pixel_norm);
  if (channels == 1) return one;
  Tensor<float> out = Tensor<float>::zeros({channels, s, s});
  for (int64_t c = 0; c < channels; ++c)
    std::copy(one.value().begin(), one.value().end(),
              out.mutable_value().begin() + c * s * s);
  return out;
}

std::vector<Sample> load_samples(const std::vector<DataRef>& refs, int64_t image_size,
                                 int64_t channels, const std::string& pixel_norm) {
  std::vector<Sample> out;
  out.reserve(refs.size());
  for (const auto& r : refs) {
    const auto& e = r.manifest->entries.at(static_cast<size_t>(r.index));
    Sample s;
    s.image = prepare_image(load_pgm(r.manifest->dir + "/" + e.file), image_size, channels, pixel_norm);
    auto n = LabelNormalizer::normalize(e.label);
    for (int i = 0; i < 6; ++i) s.target[static_cast<size_t>(i)] = float(n[static_cast<size_t>(i)]);
    s.label = e.label;
    s.sensor_id = r.manifest->sensor_id;
    out.push_back(std::move(s));
  }
  return out;
}

KvConfig Model::arch_config() const {
  KvConfig c = family == "tacvit" ? vit.to_config() : cnn.to_config();
  c.set("model.family", family);
  c.set("model.use_lora", std::string(use_lora ? "true" : "false"));
  return c;
}

Model make_vit_model(const VitConfig& cfg, uint64_t seed, bool with_lora) {
  Model m;
  m.family = "tacvit";
  m.vit = cfg;
  Rng rng(seed);
  m.params = init_vit_params<float>(cfg, rng);
  if (with_lora) {
    add_lora_params(m.params, cfg, rng);
    m.use_lora = true;
  }
  return m;
}

Model make_cnn_model(const CnnConfig& cfg, uint64_t seed) {
  Model m;
  m.family = "cnn";
  m.cnn = cfg;
  Rng rng(seed);
  m.params = init_cnn_params<float>(cfg, rng);
  return m;
}

void save_model(const Model& model, const std::string& path) {
  save_tvt1(path, model.params.to_named());
  model.arch_config().save_file(path + ".cfg");
}

Model load_model(const std::string& path) {
  KvConfig c = KvConfig::load_file(path + ".cfg");
  const std::string family = c.get_str("model.family", "");
  Model m;
  if (family == "tacvit")
    m = make_vit_model(VitConfig::from_config(c), 0, c.get_bool("model.use_lora", false));
  else if (family == "cnn")
    m = make_cnn_model(CnnConfig::from_config(c), 0);
  else
    throw ConfigError("checkpoint sidecar " + path + ".cfg has unknown model.family");
  m.params.load_named(load_tvt1(path));
  return m;
}

std::string TrainHistory::to_csv() const {
  std::string out =
      "epoch,train_mse,val_mse,val_mae_z,val_mae_rx,val_mae_ry,val_mae_fx,val_mae_fy,val_mae_fz\n";
  char buf[320];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%lld,%.8f,%.8f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(e.epoch), e.train_mse, e.val_mse, e.val_mae[0],
                  e.val_mae[1], e.val_mae[2], e.val_mae[3], e.val_mae[4], e.val_mae[5]);
    out += buf;
  }
  return out;
}

namespace {

Tensor<float> targets_tensor(const std::vector<Sample>& set, const std::vector<size_t>& order,
                             size_t begin, size_t end) {
  std::vector<float> vals;
  vals.reserve((end - begin) * 6);
  for (size_t i = begin; i < end; ++i)
    for (float v : set[order[i]].target) vals.push_back(v);
  return Tensor<float>({static_cast<int64_t>(end - begin), 6}, std::move(vals));
}

struct ValStats {
  double mse;
  std::array<double, 6> mae;
};

ValStats validate(const Model& model, const std::vector<Sample>& val_set) {
  ValStats st{0.0, {}};
  if (val_set.empty()) return st;
  const size_t bs = 32;
  double se = 0;
  std::array<double, 6> ae{};
  for (size_t b = 0; b < val_set.size(); b += bs) {
    const size_t e = std::min(b + bs, val_set.size());
    std::vector<Tensor<float>> imgs;
    std::vector<size_t> order(e - b);
    for (size_t i = b; i < e; ++i) {
      imgs.push_back(val_set[i].image);
      order[i - b] = i;
    }
    Tape<float> tape;  // discarded; evaluation takes no gradient steps
    Tensor<float> pred = model.forward(tape, imgs);
    for (size_t i = b; i < e; ++i)
      for (int j = 0; j < 6; ++j) {
        const double p = pred.value()[(i - b) * 6 + static_cast<size_t>(j)];
        const double t = val_set[i].target[static_cast<size_t>(j)];
        se += (p - t) * (p - t);
        ae[static_cast<size_t>(j)] += std::abs(p - t) * kScale[j];
      }
  }
  st.mse = se / (double(val_set.size()) * 6.0);
  for (int j = 0; j < 6; ++j) st.mae[static_cast<size_t>(j)] = ae[static_cast<size_t>(j)] / double(val_set.size());
  return st;
}

std::map<std::string, std::vector<float>> snapshot(const ModelParams<float>& p) {
  std::map<std::string, std::vector<float>> s;
  for (const auto& [k, v] : p) s[k] = v.value();
  return s;
}

}  // namespace

TrainHistory train(Model& model, const std::vector<Sample>& train_set,
                   const std::vector<Sample>& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw UsageError("train: empty training set");

  std::vector<UnfreezeStep> schedule;
  if (cfg.lora_mode && model.family == "tacvit") {
    UnfreezeStep step;
    step.epoch = cfg.unfreeze_epoch;
    const int64_t first = std::max<int64_t>(0, model.vit.num_layers - cfg.unfreeze_blocks);
    for (int64_t i = first; i < model.vit.num_layers; ++i)
      step.prefixes.push_back("vit.block" + std::to_string(i) + ".");
    schedule.push_back(std::move(step));
  }

  AdamHyper hp;
  hp.lr = cfg.lr;
  hp.weight_decay = cfg.weight_decay;
  hp.decoupled_wd = cfg.decoupled_wd;
  std::map<std::string, AdamState<float>> opt;

  TrainHistory hist;
  Rng shuffler(Rng::mix(cfg.seed, 0x7261696eull));
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  double best_val = 0;
  std::map<std::string, std::vector<float>> best_params;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.lora_mode && model.family == "tacvit") freeze_schedule(model.params, epoch, schedule);
    shuffler.shuffle(order);
    double train_se = 0;
    int64_t train_n = 0;
    for (size_t b = 0; b < train_set.size(); b += static_cast<size_t>(cfg.batch_size)) {
      const size_t e = std::min(b + static_cast<size_t>(cfg.batch_size), train_set.size());
      std::vector<Tensor<float>> imgs;
      imgs.reserve(e - b);
      for (size_t i = b; i < e; ++i) imgs.push_back(train_set[order[i]].image);
      try {
        Tape<float> tape;
        Tensor<float> pred = model.forward(tape, imgs);
        Tensor<float> truth = targets_tensor(train_set, order, b, e);
        Tensor<float> loss = mse_loss(tape, pred, truth);
        tape.backward(loss);
        train_se += double(loss.item()) * double(e - b);
        train_n += static_cast<int64_t>(e - b);
        for (auto& [name, t] : model.params) {
          if (!t.requires_grad() || !t.has_grad()) continue;
          auto [it, fresh] = opt.try_emplace(name, AdamState<float>(hp));
          adam_step(t, it->second);
        }
      } catch (const NumericError& err) {
        throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b / static_cast<size_t>(cfg.batch_size)) +
                           ", lr=" + std::to_string(cfg.lr) + ": " + err.what());
      }
    }

    ValStats vs = validate(model, val_set);
    EpochStats es;
    es.epoch = epoch;
    es.train_mse = train_n ? train_se / double(train_n) : 0.0;
    es.val_mse = vs.mse;
    es.val_mae = vs.mae;
    hist.epochs.push_back(es);

    const double crit = val_set.empty() ? es.train_mse : vs.mse;
    if (hist.best_epoch < 0 || crit < best_val) {
      best_val = crit;
      hist.best_epoch = epoch;
      best_params = snapshot(model.params);
    }
  }

  // keep the best-validation-epoch weights
  for (auto& [k, v] : model.params)
    if (auto it = best_params.find(k); it != best_params.end()) v.mutable_value() = it->second;
  return hist;
}

EvalResult evaluate_mae(const Model& model, const std::vector<Sample>& samples) {
  EvalResult res;
  if (samples.empty()) return res;
  const size_t bs = 32;
  std::array<double, 6> ae{};
  for (size_t b = 0; b < samples.size(); b += bs) {
    const size_t e = std::min(b + bs, samples.size());
    std::vector<Tensor<float>> imgs;
    for (size_t i = b; i < e; ++i) imgs.push_back(samples[i].image);
    Tape<float> tape;
    Tensor<float> pred = model.forward(tape, imgs);
    for (size_t i = b; i < e; ++i) {
      std::array<double, 6> pn, tn;
      for (int j = 0; j < 6; ++j) {
        pn[static_cast<size_t>(j)] = pred.value()[(i - b) * 6 + static_cast<size_t>(j)];
        tn[static_cast<size_t>(j)] = samples[i].target[static_cast<size_t>(j)];
      }
      auto pd = LabelNormalizer::denormalize(pn);
      auto td = LabelNormalizer::denormalize(tn);
      std::array<double, 12> pair;
      for (int j = 0; j < 6; ++j) {
        ae[static_cast<size_t>(j)] += std::abs(pd[static_cast<size_t>(j)] - td[static_cast<size_t>(j)]);
        pair[static_cast<size_t>(j)] = pd[static_cast<size_t>(j)];
        pair[static_cast<size_t>(j) + 6] = td[static_cast<size_t>(j)];
      }
      res.pairs.push_back(pair);
    }
  }
  for (int j = 0; j < 6; ++j) res.mae[static_cast<size_t>(j)] = ae[static_cast<size_t>(j)] / double(samples.size());
  return res;
}

}  // namespace tacvit
