#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tabl/config.hpp"
#include "tabl/data.hpp"
#include "tabl/metrics.hpp"
#include "tabl/network.hpp"
#include "tabl/training.hpp"

namespace tabl {

struct ExperimentConfig {
  std::string topology = "joint_all";  // registry name or "[[60,10],...,[3,1]]"
  std::size_t runs = 5;
  std::uint64_t seed = 1;
  std::vector<std::size_t> ranks{1, 2, 3, 4, 5, 6, 7, 8, 9, 10,
                                 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
  std::vector<Strategy> strategies{Strategy::is1, Strategy::is2};
  bool select_on_validation = false;  // rank selection on val F1 instead of train F1
  bool train_lambda = false;
  bool joint_arm = true;              // setup 1 only
  std::vector<int> targets;           // setup 1; empty means every stock
  int train_last_day = 6;
  std::vector<int> old_stocks{1, 2, 3};  // setup 2
  std::vector<int> new_stocks{4, 5};
  DayRange online_base{0, 4};
  DayRange online_adapt{5, 6};
  DayRange online_test{7, 9};
  WindowConfig window;
  TrainConfig train;
  std::size_t jobs = 1;

  /// Reads the `[experiment]`, `[train]` and `[window]` keys; unknown keys
  /// in those sections are errors.
  static ExperimentConfig from_config(const KeyValueConfig& cfg);
  /// Canonical form; from_config(to_config()) is the identity.
  KeyValueConfig to_config() const;
  Topology resolved_topology() const;
};

/// One evaluated arm of one run.
struct RunRecord {
  std::string section;  // e.g. "stock3", "all", "pooled"
  std::size_t run = 0;
  std::string arm;      // base, finetune, aux_is1, aux_is2, joint
  std::size_t rank = 0;  // chosen K for aux arms
  double train_f1 = 0.0;
  Metrics metrics;
  ConfusionMatrix confusion;
};

struct RankSweepRow {
  std::string section;
  std::size_t run = 0;
  Strategy strategy = Strategy::is2;
  std::size_t rank = 0;
  double train_f1 = 0.0;
  double val_f1 = 0.0;
  double test_f1 = 0.0;
};

struct StorageRow {
  std::string plan;
  std::uint64_t params = 0;
};

struct Summary {
  double mean = 0.0;
  std::optional<double> std;  // sample std, absent below two runs
};
Summary summarize(const std::vector<double>& values);

struct SummaryRow {
  std::string section;
  std::string arm;
  std::size_t runs = 0;
  Summary accuracy, precision, recall, f1;
  std::vector<std::size_t> ranks;  // chosen per run, aux arms only
};

struct ExperimentReport {
  std::string setup;
  std::string topology;
  std::vector<RunRecord> records;
  std::vector<RankSweepRow> sweep;
  std::vector<StorageRow> storage;
  std::uint64_t base_params = 0;      // stored, diagonal included
  std::uint64_t base_macs = 0;        // per sample
  std::uint64_t aux_params_max = 0;   // at the largest swept rank
  std::uint64_t adapted_macs_max = 0; // IS2 at the largest swept rank
  double seconds = 0.0;

  std::vector<SummaryRow> summary() const;
  /// Mean F1 of an arm in a section.
  double mean_f1(const std::string& section, const std::string& arm) const;
  std::vector<std::string> sections() const;

  std::string runs_csv() const;
  std::string summary_csv() const;
  std::string sweep_csv() const;
  std::string storage_csv() const;
  std::string text() const;
};

struct RankSweep {
  std::vector<RankSweepRow> rows;
  std::size_t selected = 0;  // index into rows
  Model model;               // the adapted model at the selected rank
};

/// Adapts `base` at every rank in `ranks` and trains each on `data`. The
/// selected rank maximizes train F1 (val F1 when `on_validation`); ties go
/// to the smallest K. Ranks are visited in ascending order.
RankSweep rank_sweep(const Model& base, const DatasetSplit& data, std::vector<std::size_t> ranks,
                     Strategy strategy, const TrainConfig& train_cfg, std::uint64_t seed,
                     bool on_validation = false, bool train_lambda = false);

/// Stored parameters of the two multi-market plans: one base plus
/// `n_new` fine-tuned copies, versus one base plus `n_new` aux sets at rank K.
std::vector<StorageRow> storage_plans(const Model& base, std::size_t n_new,
                                      const std::vector<std::size_t>& ranks);

ExperimentReport run_setup1(const std::vector<EventStream>& streams, const ExperimentConfig& cfg);
ExperimentReport run_setup2(const std::vector<EventStream>& streams, const ExperimentConfig& cfg);
ExperimentReport run_online(const std::vector<EventStream>& streams, const ExperimentConfig& cfg);

/// Runs `n` independent tasks on at most `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task);

}  // namespace tabl
