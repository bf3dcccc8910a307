// tacvit command line: dataset generation, encoder pretraining, the three
// cross-sensor experiment protocols, and report emission.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "tacvit/experiments.hpp"
#include "tacvit/rng.hpp"
#include "tacvit/simulator.hpp"
#include "tacvit/training.hpp"

namespace fs = std::filesystem;
using namespace tacvit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitEmpty = 5;

constexpr const char* kVersion = "tacvit 0.1.0";

// Built-in desk-scale defaults; a 'paper' profile swaps in the full-scale
// reference values. Precedence: defaults < config file < flags.
KvConfig desk_defaults() {
  KvConfig c;
  c.set("vit.image_size", int64_t{64});
  c.set("vit.patch_size", int64_t{8});
  c.set("vit.channels", int64_t{1});
  c.set("vit.embed_dim", int64_t{64});
  c.set("vit.num_layers", int64_t{4});
  c.set("vit.num_heads", int64_t{4});
  c.set("vit.mlp_hidden", int64_t{128});
  c.set("vit.head_layers", int64_t{4});
  c.set("vit.head_hidden", std::string("512,256,64"));
  c.set("vit.dropout", 0.0);
  c.set("vit.pool", std::string("cls"));
  c.set("vit.lora_rank", int64_t{4});
  c.set("vit.lora_alpha", 8.0);
  c.set("cnn.image_size", int64_t{64});
  c.set("cnn.channels", int64_t{1});
  c.set("cnn.conv_layers", int64_t{4});
  c.set("cnn.kernels_per_layer", int64_t{32});
  c.set("cnn.kernel_size", int64_t{3});
  c.set("cnn.pool", std::string("max"));
  c.set("cnn.fc_layers", int64_t{2});
  c.set("cnn.fc_hidden", int64_t{512});
  c.set("cnn.dropout", 0.0);
  c.set("train.batch_size", int64_t{16});
  c.set("train.epochs", int64_t{15});
  c.set("train.pretrain_epochs", int64_t{40});
  c.set("train.lr", 1e-3);
  c.set("train.cnn_lr", 1e-3);
  c.set("train.weight_decay", 1e-5);
  c.set("train.cnn_weight_decay", 1e-6);
  c.set("optimizer.decoupled_wd", std::string("true"));
  c.set("train.split_fraction", 0.8);
  c.set("train.unfreeze_epoch", int64_t{5});
  c.set("train.unfreeze_blocks", int64_t{4});
  c.set("data.pixel_norm", std::string("center"));
  c.set("data.resize_mode", std::string("bilinear"));
  c.set("data.image_size", int64_t{64});
  c.set("data.per_sensor", int64_t{500});
  return c;
}

void apply_paper_profile(KvConfig& c) {
  c.set("vit.image_size", int64_t{224});
  c.set("vit.patch_size", int64_t{16});
  c.set("vit.channels", int64_t{3});
  c.set("vit.embed_dim", int64_t{768});
  c.set("vit.num_layers", int64_t{12});
  c.set("vit.num_heads", int64_t{12});
  c.set("vit.mlp_hidden", int64_t{3072});
  c.set("cnn.image_size", int64_t{224});
  c.set("cnn.channels", int64_t{3});
  c.set("cnn.kernels_per_layer", int64_t{480});
  c.set("train.epochs", int64_t{30});
  c.set("train.lr", 1e-4);
  c.set("data.image_size", int64_t{128});
  c.set("data.per_sensor", int64_t{3000});
}

uint64_t base_seed_from(uint64_t flag_seed, bool seed_given) {
  if (const char* env = std::getenv("TACVIT_SEED"); env && !seed_given) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("TACVIT_SEED is not an integer: ") + env);
    }
  }
  return flag_seed;
}

TrainConfig train_config_from(const KvConfig& c, const std::string& family, uint64_t seed) {
  TrainConfig t;
  t.batch_size = c.get_int("train.batch_size", 16);
  t.epochs = c.get_int("train.epochs", 10);
  if (family == "cnn") {
    t.lr = c.get_real("train.cnn_lr", 1e-3);
    t.weight_decay = c.get_real("train.cnn_weight_decay", 1e-6);
  } else {
    t.lr = c.get_real("train.lr", 1e-4);
    t.weight_decay = c.get_real("train.weight_decay", 1e-5);
  }
  t.decoupled_wd = c.get_bool("optimizer.decoupled_wd", true);
  t.seed = seed;
  t.split_fraction = c.get_real("train.split_fraction", 0.8);
  t.unfreeze_epoch = c.get_int("train.unfreeze_epoch", 5);
  t.unfreeze_blocks = c.get_int("train.unfreeze_blocks", 4);
  t.pixel_norm = c.get_str("data.pixel_norm", "center");
  return t;
}

void write_run_manifest(const std::string& dir, const std::string& cmdline, const KvConfig& cfg,
                        uint64_t seed) {
  const std::string path = dir + "/run_manifest.txt";
  if (fs::exists(path)) return;  // a resumed run keeps its original manifest
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char ts[64];
  std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  f << "version=" << kVersion << "\n"
    << "command=" << cmdline << "\n"
    << "seed=" << seed << "\n"
    << "timestamp=" << ts << "\n"
    << "--- config snapshot ---\n"
    << cfg.serialize();
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(tok);
  return out;
}

int cmd_generate(int sensors, int per_sensor, uint64_t seed, const std::string& out,
                 int image_size, bool randomized) {
  if (per_sensor < 1) throw ConfigError("--per-sensor must be >= 1");
  if (sensors < 1) throw ConfigError("--sensors must be >= 1");
  std::vector<SensorProfile> profiles;
  if (randomized) {
    for (int i = 1; i <= sensors; ++i) profiles.push_back(random_profile(i, Rng::mix(seed, 0xc0a5)));
  } else {
    profiles = default_profiles();
    if (sensors > static_cast<int>(profiles.size()))
      throw ConfigError("only " + std::to_string(profiles.size()) +
                        " fixture sensors exist; use --randomized for more");
    profiles.resize(static_cast<size_t>(sensors));
  }
  for (const auto& p : profiles) {
    const std::string dir = out + "/sensor" + std::to_string(p.sensor_id);
    generate_dataset(p, per_sensor, Rng::mix(seed, static_cast<uint64_t>(p.sensor_id)), dir,
                     image_size);
    std::cout << "wrote " << per_sensor << " images to " << dir << "\n";
  }
  return kExitOk;
}

int cmd_pretrain(const KvConfig& cfg, const std::string& data_dir, const std::string& out,
                 uint64_t seed) {
  if (!fs::exists(data_dir)) throw IoError("data directory does not exist: " + data_dir);
  std::vector<DatasetManifest> all;
  for (int s = 1; s < 100; ++s) {
    const std::string d = data_dir + "/sensor" + std::to_string(s);
    if (fs::exists(d + "/manifest.txt")) all.push_back(load_manifest(d));
  }
  if (all.empty()) throw IoError("no sensor datasets under " + data_dir);

  VitConfig vc = VitConfig::from_config(cfg);
  Model model = make_vit_model(vc, seed, false);
  TrainConfig tc = train_config_from(cfg, "tacvit", seed);
  tc.epochs = cfg.get_int("train.pretrain_epochs", 10);
  tc.lora_mode = false;  // every parameter trains during pretraining

  auto [train_refs, val_refs] = split_dataset(all, tc.split_fraction, seed);
  auto train_set = load_samples(train_refs, vc.image_size, vc.channels, tc.pixel_norm);
  auto val_set = load_samples(val_refs, vc.image_size, vc.channels, tc.pixel_norm);
  TrainHistory hist = train(model, train_set, val_set, tc);
  save_model(model, out);
  {
    std::ofstream f(out + ".history.csv", std::ios::binary);
    f << hist.to_csv();
  }
  std::cout << "pretrained encoder saved to " << out << " (best epoch " << hist.best_epoch << ")\n";
  return kExitOk;
}

int cmd_experiment(const KvConfig& cfg, const std::string& protocols_arg,
                   const std::string& families_arg, const std::string& data_dir,
                   const std::string& base_ckpt, const std::string& out, uint64_t seed, int jobs,
                   bool resume, const std::string& cmdline) {
  if (!fs::exists(data_dir)) throw IoError("data directory does not exist: " + data_dir);

  std::vector<int> sensors;
  for (int s = 1; s < 100; ++s)
    if (fs::exists(data_dir + "/sensor" + std::to_string(s) + "/manifest.txt")) sensors.push_back(s);
  if (sensors.empty()) throw IoError("no sensor datasets under " + data_dir);

  std::vector<ExperimentSpec> plan;
  for (const auto& pname : split_csv_list(protocols_arg)) {
    Protocol proto = protocol_from_name(pname);
    for (const auto& family : split_csv_list(families_arg)) {
      if (family == "cnn" && !base_ckpt.empty())
        std::cerr << "warning: --base is ignored for the cnn family (trains from scratch)\n";
      if (family == "tacvit" && base_ckpt.empty())
        throw ConfigError("tacvit experiments need --base (a pretrained encoder checkpoint)");
      TrainConfig tc = train_config_from(cfg, family, seed);
      auto runs = plan_runs(proto, sensors, {family}, tc, cfg, data_dir, base_ckpt, seed);
      plan.insert(plan.end(), runs.begin(), runs.end());
    }
  }

  write_run_manifest(out, cmdline, cfg, seed);

  if (!resume)
    for (const auto& spec : plan)
      if (fs::exists(run_dir_for(out, spec) + "/done"))
        throw UsageError("run directory already complete: " + run_dir_for(out, spec) +
                         " (pass --resume to skip finished runs)");

  std::atomic<size_t> next{0};
  std::atomic<int> failures{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= plan.size()) return;
      const auto& spec = plan[i];
      try {
        RunRow row = run_experiment(spec, out);
        std::ostringstream os;
        os << "done " << row.protocol << "/" << row.family << "/sensor" << row.sensor
           << " z_mae=" << row.mae[0] << "\n";
        std::cout << os.str() << std::flush;
      } catch (const std::exception& e) {
        std::ostringstream os;
        os << "FAILED " << protocol_name(spec.protocol) << "/" << spec.family << "/sensor"
           << spec.target_sensor_id << ": " << e.what() << "\n";
        std::cerr << os.str() << std::flush;
        failures.fetch_add(1);
      }
    }
  };
  const int nthreads = std::max(1, jobs);
  std::vector<std::thread> pool;
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  return failures.load() == 0 ? kExitOk : kExitNumeric;
}

int cmd_report(const std::string& results_dir) {
  auto rows = gather_rows(results_dir);
  if (rows.empty()) {
    std::cerr << "no completed runs under " << results_dir << "\n";
    return kExitEmpty;
  }
  MetricsReport rep = aggregate(rows);
  write_report(rep, results_dir);
  std::ifstream f(results_dir + "/summary.txt");
  std::cout << f.rdbuf();
  std::cout << "report written: table3.csv table4.csv strip.csv summary.txt\n";
  return kExitOk;
}

constexpr const char* kConfigKeysHelp =
    "Config keys (defaults are the desk-scale profile; --profile paper selects\n"
    "the full-scale reference values shown in [brackets]):\n"
    "  vit.image_size=64 [224]     input resolution\n"
    "  vit.patch_size=8 [16]       patch edge, image_size must divide evenly\n"
    "  vit.channels=1 [3]          input channels (gray replicated when 3)\n"
    "  vit.embed_dim=64 [768]      token embedding dimension\n"
    "  vit.num_layers=4 [12]       transformer encoder layers\n"
    "  vit.num_heads=4 [12]        attention heads\n"
    "  vit.mlp_hidden=128 [3072]   encoder MLP hidden width\n"
    "  vit.head_layers=4           regression head depth\n"
    "  vit.head_hidden=512,256,64  regression head hidden widths\n"
    "  vit.pool=cls                cls | mean pooled representation\n"
    "  vit.lora_rank=4             adapter rank on q/v projections\n"
    "  vit.lora_alpha=8            adapter scaling\n"
    "  cnn.conv_layers=4           convolutional hidden layers\n"
    "  cnn.kernels_per_layer=32 [480]\n"
    "  cnn.kernel_size=3           square kernel edge\n"
    "  cnn.pool=max                max | avg | none after each conv\n"
    "  cnn.fc_layers=2             fully connected layers\n"
    "  cnn.fc_hidden=512           dense hidden layer units\n"
    "  train.batch_size=16\n"
    "  train.epochs=15 [30]\n"
    "  train.pretrain_epochs=40\n"
    "  train.lr=1e-3 [1e-4]        tacvit learning rate\n"
    "  train.cnn_lr=1e-3           cnn learning rate\n"
    "  train.weight_decay=1e-5     tacvit weight decay\n"
    "  train.cnn_weight_decay=1e-6 cnn (Adam) decay\n"
    "  optimizer.decoupled_wd=true subtract lr*wd*theta vs fold into gradient\n"
    "  train.split_fraction=0.8    per-sensor train share\n"
    "  train.unfreeze_epoch=5      epoch that unfreezes encoder blocks\n"
    "  train.unfreeze_blocks=4     how many final blocks unfreeze\n"
    "  data.pixel_norm=center      none | center ([0,1] -> [-1,1])\n"
    "  data.resize_mode=bilinear   resize of stored images to model input\n"
    "  data.image_size=64 [128]    stored dataset resolution\n"
    "  data.per_sensor=500 [3000]  samples per sensor\n"
    "Environment: TACVIT_SEED overrides the base seed when --seed is not given.\n";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(kVersion) +
               " -- cross-sensor tactile regression: synthetic TacTip-style data, a "
               "transformer regressor with low-rank adapters, a CNN baseline, and the "
               "tr1te1/tr5te1/tr4teu evaluation protocols"};
  app.footer(kConfigKeysHelp);
  app.require_subcommand(1);

  std::string cmdline;
  for (int i = 0; i < argc; ++i) cmdline += std::string(i ? " " : "") + argv[i];

  std::string config_file, profile = "desk";
  uint64_t seed = 1234;
  bool seed_given = false;
  app.add_option("--config", config_file, "key=value config file")->configurable(false);
  app.add_option("--profile", profile, "desk | paper preset")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", seed, "base seed")->each([&](const std::string&) { seed_given = true; });

  auto* gen = app.add_subcommand("generate", "render labeled multi-sensor datasets");
  int g_sensors = 5, g_per = -1, g_size = -1;
  bool g_random = false;
  std::string g_out;
  gen->add_option("--sensors", g_sensors, "number of sensor profiles");
  gen->add_option("--per-sensor", g_per, "images per sensor (default data.per_sensor)");
  gen->add_option("--out", g_out, "output directory")->required();
  gen->add_option("--image-size", g_size, "stored resolution (default data.image_size)");
  gen->add_flag("--randomized", g_random, "sample random profiles instead of the fixtures");

  auto* pre = app.add_subcommand("pretrain", "train the encoder on a synthetic corpus");
  std::string p_data, p_out;
  pre->add_option("--data", p_data, "dataset root (sensor<k>/ dirs)")->required();
  pre->add_option("--out", p_out, "checkpoint path to write")->required();

  auto* exp = app.add_subcommand("experiment", "run a protocol across all sensor permutations");
  std::string e_protocol, e_family, e_data, e_base, e_out;
  int e_jobs = 1;
  bool e_resume = false;
  exp->add_option("--protocol", e_protocol, "tr1te1 | tr5te1 | tr4teu (comma list ok)")->required();
  exp->add_option("--family", e_family, "cnn | tacvit (comma list ok)")->required();
  exp->add_option("--data", e_data, "dataset root")->required();
  exp->add_option("--base", e_base, "pretrained encoder checkpoint (tacvit)");
  exp->add_option("--out", e_out, "results root")->required();
  exp->add_option("--jobs", e_jobs, "parallel runs (each run stays single-threaded)");
  exp->add_flag("--resume", e_resume, "skip runs with a done sentinel");

  auto* rep = app.add_subcommand("report", "aggregate completed runs into tables");
  std::string r_results;
  rep->add_option("--results", r_results, "results root")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    KvConfig cfg = desk_defaults();
    if (profile == "paper") apply_paper_profile(cfg);
    if (!config_file.empty()) cfg.merge(KvConfig::load_file(config_file));
    const uint64_t base_seed = base_seed_from(seed, seed_given);

    if (*gen) {
      const int per = g_per > 0 ? g_per : (g_per == 0 ? 0 : int(cfg.get_int("data.per_sensor", 500)));
      const int size = g_size > 0 ? g_size : int(cfg.get_int("data.image_size", 64));
      return cmd_generate(g_sensors, per, base_seed, g_out, size, g_random);
    }
    if (*pre) return cmd_pretrain(cfg, p_data, p_out, base_seed);
    if (*exp)
      return cmd_experiment(cfg, e_protocol, e_family, e_data, e_base, e_out, base_seed, e_jobs,
                            e_resume, cmdline);
    if (*rep) return cmd_report(r_results);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
