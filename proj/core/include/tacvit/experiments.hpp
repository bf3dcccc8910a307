#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tacvit/training.hpp"

namespace tacvit {

enum class Protocol { Tr1Te1, Tr5Te1, Tr4TeU };

std::string protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);

struct ExperimentSpec {
  Protocol protocol = Protocol::Tr1Te1;
  int target_sensor_id = 0;
  std::string family;  // "cnn" | "tacvit"
  TrainConfig train_cfg;
  KvConfig model_cfg;           // vit.* / cnn.* keys
  std::string dataset_root;     // contains sensor<k>/ directories
  std::string base_checkpoint;  // pretrained encoder, tacvit only
  uint64_t run_seed = 0;
};

// One run per sensor per protocol per family; each run gets an independent
// seed derived from the base seed and its position in the plan.
std::vector<ExperimentSpec> plan_runs(Protocol protocol, const std::vector<int>& sensors,
                                      const std::vector<std::string>& families,
                                      const TrainConfig& base_cfg, const KvConfig& model_cfg,
                                      const std::string& dataset_root,
                                      const std::string& base_checkpoint, uint64_t base_seed);

struct RunRow {
  std::string protocol;
  std::string family;
  int sensor = 0;
  std::array<double, 6> mae{};  // z, rx, ry, fx, fy, fz in physical units
};

std::string run_dir_for(const std::string& results_root, const ExperimentSpec& spec);

// Trains one run, evaluates on the protocol's test set, and
// writes history.csv, metrics.csv, scatter.csv, ckpt.tvt1 and a done sentinel.
RunRow run_experiment(const ExperimentSpec& spec, const std::string& results_root);

// Rows of every completed (done-sentinel) run under a results root.
std::vector<RunRow> gather_rows(const std::string& results_root);

struct AggregateCell {
  std::string protocol;
  std::string family;
  std::array<double, 6> mean{};
  std::array<double, 6> spread{};  // population stddev across runs
  int runs = 0;
};

struct MetricsReport {
  std::vector<RunRow> rows;
  std::vector<AggregateCell> cells;
  // Tr4TeU mean / Tr1Te1 mean per family per target; empty if either is missing
  struct Inflation {
    std::string family;
    std::array<double, 6> ratio{};
  };
  std::vector<Inflation> inflation;

  const AggregateCell* find(const std::string& protocol, const std::string& family) const;
};

MetricsReport aggregate(const std::vector<RunRow>& rows);

// table3.csv / table4.csv / strip.csv / summary.txt
void write_report(const MetricsReport& report, const std::string& out_dir);

}  // namespace tacvit
