#include "tacvit/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tacvit/rng.hpp"

namespace fs = std::filesystem;

namespace tacvit {

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Tr1Te1: return "tr1te1";
    case Protocol::Tr5Te1: return "tr5te1";
    case Protocol::Tr4TeU: return "tr4teu";
  }
  throw UsageError("bad protocol value");
}

Protocol protocol_from_name(const std::string& name) {
  if (name == "tr1te1") return Protocol::Tr1Te1;
  if (name == "tr5te1") return Protocol::Tr5Te1;
  if (name == "tr4teu") return Protocol::Tr4TeU;
  throw ConfigError("unknown protocol: " + name + " (expected tr1te1, tr5te1 or tr4teu)");
}

std::vector<ExperimentSpec> plan_runs(Protocol protocol, const std::vector<int>& sensors,
                                      const std::vector<std::string>& families,
                                      const TrainConfig& base_cfg, const KvConfig& model_cfg,
                                      const std::string& dataset_root,
                                      const std::string& base_checkpoint, uint64_t base_seed) {
  if (protocol == Protocol::Tr4TeU && sensors.size() < 2)
    throw ConfigError("tr4teu needs at least 2 sensors");
  if (sensors.empty()) throw ConfigError("plan_runs: no sensors");
  std::vector<ExperimentSpec> plan;
  uint64_t run_index = 0;
  for (const auto& family : families) {
    if (family != "cnn" && family != "tacvit")
      throw ConfigError("unknown model family: " + family);
    for (int s : sensors) {
      ExperimentSpec spec;
      spec.protocol = protocol;
      spec.target_sensor_id = s;
      spec.family = family;
      spec.train_cfg = base_cfg;
      spec.train_cfg.lora_mode = family == "tacvit";
      spec.model_cfg = model_cfg;
      spec.dataset_root = dataset_root;
      spec.base_checkpoint = family == "tacvit" ? base_checkpoint : "";
      spec.run_seed = Rng::mix(base_seed, 0x100 * run_index + static_cast<uint64_t>(protocol));
      spec.train_cfg.seed = spec.run_seed;
      plan.push_back(std::move(spec));
      ++run_index;
    }
  }
  return plan;
}

std::string run_dir_for(const std::string& results_root, const ExperimentSpec& spec) {
  return results_root + "/" + protocol_name(spec.protocol) + "/" + spec.family + "/sensor" +
         std::to_string(spec.target_sensor_id);
}

namespace {

std::vector<int> sensors_in_root(const std::string& root) {
  std::vector<int> ids;
  for (int s = 1; s < 100; ++s) {
    if (fs::exists(root + "/sensor" + std::to_string(s) + "/manifest.txt")) ids.push_back(s);
  }
  if (ids.empty()) throw IoError("no sensor datasets under " + root);
  return ids;
}

std::string metrics_csv(const RunRow& r) {
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "protocol,family,sensor,mae_z,mae_rx,mae_ry,mae_fx,mae_fy,mae_fz\n"
                "%s,%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                r.protocol.c_str(), r.family.c_str(), r.sensor, r.mae[0], r.mae[1], r.mae[2],
                r.mae[3], r.mae[4], r.mae[5]);
  return buf;
}

RunRow parse_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string header, line;
  std::getline(f, header);
  std::getline(f, line);
  RunRow r;
  char proto[32], fam[32];
  if (std::sscanf(line.c_str(), "%31[^,],%31[^,],%d,%lf,%lf,%lf,%lf,%lf,%lf", proto, fam, &r.sensor,
                  &r.mae[0], &r.mae[1], &r.mae[2], &r.mae[3], &r.mae[4], &r.mae[5]) != 9)
    throw IoError("bad metrics row in " + path);
  r.protocol = proto;
  r.family = fam;
  return r;
}

void assert_no_target_leak(const std::vector<DataRef>& refs, int target) {
  for (const auto& r : refs)
    if (r.manifest->sensor_id == target)
      throw UsageError("tr4teu: training set contains test sensor " + std::to_string(target));
}

}  // namespace

RunRow run_experiment(const ExperimentSpec& spec, const std::string& results_root) {
  const std::string dir = run_dir_for(results_root, spec);
  if (fs::exists(dir + "/done")) return parse_metrics_csv(dir + "/metrics.csv");

  // load every sensor dataset under the root once
  std::vector<DatasetManifest> all;
  for (int s : sensors_in_root(spec.dataset_root))
    all.push_back(load_manifest(spec.dataset_root + "/sensor" + std::to_string(s)));

  const auto target_it =
      std::find_if(all.begin(), all.end(),
                   [&](const DatasetManifest& m) { return m.sensor_id == spec.target_sensor_id; });
  if (target_it == all.end())
    throw ConfigError("target sensor " + std::to_string(spec.target_sensor_id) + " not in " +
                      spec.dataset_root);

  std::vector<DataRef> train_refs, val_refs, test_refs;
  std::vector<DatasetManifest> single;  // keeps Tr1Te1's manifest alive for the DataRefs
  switch (spec.protocol) {
    case Protocol::Tr1Te1: {
      single.push_back(*target_it);
      auto [tr, va] = split_dataset(single, spec.train_cfg.split_fraction, spec.run_seed);
      train_refs = tr;
      val_refs = va;
      test_refs = va;  // the same sensor's held-out 20%
      break;
    }
    case Protocol::Tr5Te1: {
      auto [tr, va] = split_dataset(all, spec.train_cfg.split_fraction, spec.run_seed);
      train_refs = tr;
      val_refs = va;
      for (const auto& r : va)
        if (r.manifest->sensor_id == spec.target_sensor_id) test_refs.push_back(r);
      break;
    }
    case Protocol::Tr4TeU: {
      // other sensors' full datasets train; the target sensor is entirely test
      for (auto& m : all) {
        if (m.sensor_id == spec.target_sensor_id) {
          for (int i = 0; i < static_cast<int>(m.entries.size()); ++i) test_refs.push_back({&m, i});
        } else {
          for (int i = 0; i < static_cast<int>(m.entries.size()); ++i) train_refs.push_back({&m, i});
        }
      }
      assert_no_target_leak(train_refs, spec.target_sensor_id);
      break;
    }
  }

  Model model;
  if (spec.family == "cnn") {
    model = make_cnn_model(CnnConfig::from_config(spec.model_cfg), spec.run_seed);
  } else {
    VitConfig vc = VitConfig::from_config(spec.model_cfg);
    model = make_vit_model(vc, spec.run_seed, true);
    if (spec.base_checkpoint.empty())
      throw ConfigError("tacvit run needs a pretrained base checkpoint");
    model.params.load_named(load_tvt1(spec.base_checkpoint));
  }

  const auto train_set =
      load_samples(train_refs, model.image_size(), model.channels(), spec.train_cfg.pixel_norm);
  const auto val_set =
      load_samples(val_refs, model.image_size(), model.channels(), spec.train_cfg.pixel_norm);
  const auto test_set =
      load_samples(test_refs, model.image_size(), model.channels(), spec.train_cfg.pixel_norm);

  TrainHistory hist = train(model, train_set, val_set, spec.train_cfg);
  EvalResult ev = evaluate_mae(model, test_set);

  RunRow row;
  row.protocol = protocol_name(spec.protocol);
  row.family = spec.family;
  row.sensor = spec.target_sensor_id;
  row.mae = ev.mae;

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir + ": " + ec.message());
  {
    std::ofstream f(dir + "/history.csv", std::ios::binary);
    f << hist.to_csv();
    if (!f) throw IoError("cannot write " + dir + "/history.csv");
  }
  {
    std::ofstream f(dir + "/metrics.csv", std::ios::binary);
    f << metrics_csv(row);
    if (!f) throw IoError("cannot write " + dir + "/metrics.csv");
  }
  {
    std::ofstream f(dir + "/scatter.csv", std::ios::binary);
    f << "pred_z,pred_rx,pred_ry,pred_fx,pred_fy,pred_fz,"
         "true_z,true_rx,true_ry,true_fx,true_fy,true_fz\n";
    char buf[512];
    for (const auto& p : ev.pairs) {
      std::snprintf(buf, sizeof(buf),
                    "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", p[0], p[1],
                    p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10], p[11]);
      f << buf;
    }
    if (!f) throw IoError("cannot write " + dir + "/scatter.csv");
  }
  {
    std::ofstream f(dir + "/provenance.txt", std::ios::binary);
    f << "test_sensor=" << spec.target_sensor_id << "\n";
    std::vector<int> seen;
    for (const auto& r : train_refs)
      if (std::find(seen.begin(), seen.end(), r.manifest->sensor_id) == seen.end())
        seen.push_back(r.manifest->sensor_id);
    std::sort(seen.begin(), seen.end());
    for (int s : seen) f << "train_sensor=" << s << "\n";
  }
  save_model(model, dir + "/ckpt.tvt1");
  {
    std::ofstream f(dir + "/done", std::ios::binary);
    f << "ok\n";
  }
  return row;
}

std::vector<RunRow> gather_rows(const std::string& results_root) {
  std::vector<RunRow> rows;
  for (const char* proto : {"tr1te1", "tr5te1", "tr4teu"})
    for (const char* fam : {"cnn", "tacvit"}) {
      const std::string base = results_root + std::string("/") + proto + "/" + fam;
      if (!fs::exists(base)) continue;
      std::vector<std::string> dirs;
      for (const auto& e : fs::directory_iterator(base))
        if (e.is_directory() && fs::exists(e.path() / "done")) dirs.push_back(e.path().string());
      std::sort(dirs.begin(), dirs.end());
      for (const auto& d : dirs) rows.push_back(parse_metrics_csv(d + "/metrics.csv"));
    }
  return rows;
}

const AggregateCell* MetricsReport::find(const std::string& protocol,
                                         const std::string& family) const {
  for (const auto& c : cells)
    if (c.protocol == protocol && c.family == family) return &c;
  return nullptr;
}

MetricsReport aggregate(const std::vector<RunRow>& rows) {
  if (rows.empty()) throw UsageError("aggregate: no rows");
  MetricsReport rep;
  rep.rows = rows;
  for (const char* proto : {"tr1te1", "tr5te1", "tr4teu"})
    for (const char* fam : {"cnn", "tacvit"}) {
      AggregateCell cell;
      cell.protocol = proto;
      cell.family = fam;
      for (const auto& r : rows) {
        if (r.protocol != proto || r.family != fam) continue;
        ++cell.runs;
        for (int j = 0; j < 6; ++j) cell.mean[static_cast<size_t>(j)] += r.mae[static_cast<size_t>(j)];
      }
      if (cell.runs == 0) continue;
      for (auto& m : cell.mean) m /= cell.runs;
      for (const auto& r : rows) {
        if (r.protocol != proto || r.family != fam) continue;
        for (int j = 0; j < 6; ++j) {
          const double d = r.mae[static_cast<size_t>(j)] - cell.mean[static_cast<size_t>(j)];
          cell.spread[static_cast<size_t>(j)] += d * d;
        }
      }
      for (auto& s : cell.spread) s = std::sqrt(s / cell.runs);
      rep.cells.push_back(cell);
    }
  for (const char* fam : {"cnn", "tacvit"}) {
    const auto* base = rep.find("tr1te1", fam);
    const auto* unseen = rep.find("tr4teu", fam);
    if (!base || !unseen) continue;
    MetricsReport::Inflation inf;
    inf.family = fam;
    for (int j = 0; j < 6; ++j)
      inf.ratio[static_cast<size_t>(j)] =
          unseen->mean[static_cast<size_t>(j)] / base->mean[static_cast<size_t>(j)];
    rep.inflation.push_back(inf);
  }
  return rep;
}

void write_report(const MetricsReport& rep, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create report directory " + out_dir + ": " + ec.message());
  char buf[512];
  {
    std::ofstream f(out_dir + "/table3.csv", std::ios::binary);
    f << "protocol,family,sensor,z_mm,rx_deg,ry_deg,fx_n,fy_n,fz_n\n";
    for (const auto& r : rep.rows) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    r.protocol.c_str(), r.family.c_str(), r.sensor, r.mae[0], r.mae[1], r.mae[2],
                    r.mae[3], r.mae[4], r.mae[5]);
      f << buf;
    }
    if (!f) throw IoError("cannot write " + out_dir + "/table3.csv");
  }
  {
    std::ofstream f(out_dir + "/table4.csv", std::ios::binary);
    f << "protocol,family,stat,z_mm,rx_deg,ry_deg,fx_n,fy_n,fz_n\n";
    for (const auto& c : rep.cells) {
      std::snprintf(buf, sizeof(buf), "%s,%s,mean,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    c.protocol.c_str(), c.family.c_str(), c.mean[0], c.mean[1], c.mean[2],
                    c.mean[3], c.mean[4], c.mean[5]);
      f << buf;
      std::snprintf(buf, sizeof(buf), "%s,%s,spread,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    c.protocol.c_str(), c.family.c_str(), c.spread[0], c.spread[1], c.spread[2],
                    c.spread[3], c.spread[4], c.spread[5]);
      f << buf;
    }
    if (!f) throw IoError("cannot write " + out_dir + "/table4.csv");
  }
  {
    std::ofstream f(out_dir + "/strip.csv", std::ios::binary);
    f << "protocol,family,sensor,target,mae\n";
    static const char* tgt[6] = {"z", "rx", "ry", "fx", "fy", "fz"};
    for (const auto& r : rep.rows)
      for (int j = 0; j < 6; ++j) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%s,%.6f\n", r.protocol.c_str(),
                      r.family.c_str(), r.sensor, tgt[j], r.mae[static_cast<size_t>(j)]);
        f << buf;
      }
    if (!f) throw IoError("cannot write " + out_dir + "/strip.csv");
  }
  {
    std::ofstream f(out_dir + "/summary.txt", std::ios::binary);
    f << "per-run acceptability (z < 0.1 mm, Rx/Ry < 2.5 deg, F < 1 N):\n";
    for (const auto& r : rep.rows) {
      const bool ok = r.mae[0] < 0.1 && r.mae[1] < 2.5 && r.mae[2] < 2.5 && r.mae[3] < 1.0 &&
                      r.mae[4] < 1.0 && r.mae[5] < 1.0;
      std::snprintf(buf, sizeof(buf), "  %s %s sensor%d: %s\n", r.protocol.c_str(),
                    r.family.c_str(), r.sensor, ok ? "ACCEPTABLE" : "above-threshold");
      f << buf;
    }
    f << "\ninflation ratios (tr4teu mean / tr1te1 mean):\n";
    for (const auto& inf : rep.inflation) {
      std::snprintf(buf, sizeof(buf), "  %s: z=%.4f rx=%.4f ry=%.4f fx=%.4f fy=%.4f fz=%.4f\n",
                    inf.family.c_str(), inf.ratio[0], inf.ratio[1], inf.ratio[2], inf.ratio[3],
                    inf.ratio[4], inf.ratio[5]);
      f << buf;
    }
    const MetricsReport::Inflation* cnn = nullptr;
    const MetricsReport::Inflation* vit = nullptr;
    for (const auto& inf : rep.inflation) {
      if (inf.family == "cnn") cnn = &inf;
      if (inf.family == "tacvit") vit = &inf;
    }
    if (cnn && vit) {
      int lower = 0;
      for (int j = 0; j < 6; ++j)
        if (vit->ratio[static_cast<size_t>(j)] < cnn->ratio[static_cast<size_t>(j)]) ++lower;
      f << "\ntransformer-generalizes-better ordering (tacvit inflation < cnn inflation): "
        << lower << "/6 targets" << (lower >= 4 ? " -- ordering HOLDS" : " -- ordering does NOT hold")
        << "\n";
    }
    if (!f) throw IoError("cannot write " + out_dir + "/summary.txt");
  }
}

}  // namespace tacvit
