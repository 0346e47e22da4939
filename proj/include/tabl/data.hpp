#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tabl/config.hpp"
#include "tabl/linalg.hpp"

namespace tabl {

inline constexpr std::size_t kLobFeatures = 40;
inline constexpr std::size_t kLobLevels = 10;

/// Feature layout per level l: [4l] ask price, [4l+1] ask volume,
/// [4l+2] bid price, [4l+3] bid volume.
struct LobEvent {
  std::array<double, kLobFeatures> features{};
  double best_ask = 0.0;  // raw, un-normalized
  double best_bid = 0.0;
  double mid = 0.0;
};

/// Consecutive events of one stock on one day.
struct EventStream {
  int stock = 0;
  int day = 0;
  std::vector<LobEvent> events;
  /// Dataset-provided labels per horizon (one per event), used verbatim when present.
  std::map<std::size_t, std::vector<int>> provided_labels;
};

std::string write_native_csv(std::span<const EventStream> streams);
/// Groups consecutive rows by (stock, day). Throws ParseError with the line
/// number on malformed rows.
std::vector<EventStream> read_native_csv(std::string_view text);

/// Column-role layout for FI-2010-style text files; see README for keys.
struct Fi2010Layout {
  bool events_are_columns = true;
  bool comma_delimited = false;
  std::size_t feature_offset = 0;
  std::map<std::size_t, std::size_t> label_index;  // horizon -> row/column
  std::array<int, 3> label_codes{2, 1, 3};         // raw codes of stationary, up, down
  std::optional<std::size_t> stock_index;
  std::optional<std::size_t> day_index;
  std::size_t best_ask_index = 0;
  std::size_t best_bid_index = 2;
  struct Segment {
    int stock;
    int day;
    std::size_t count;
  };
  std::vector<Segment> segments;

  static Fi2010Layout from_config(const KeyValueConfig& cfg);
};

std::vector<EventStream> load_fi2010(std::string_view text, const Fi2010Layout& layout);

struct ZScoreStats {
  std::array<double, kLobFeatures> mean{};
  std::array<double, kLobFeatures> std{};
};

inline constexpr double kStdFloor = 1e-12;

ZScoreStats zscore_fit(std::span<const EventStream> streams);
/// Normalizes features only; raw prices and mids are left untouched.
std::vector<EventStream> zscore_apply(const ZScoreStats& stats, std::span<const EventStream> streams);

/// Label of event t from the mean of mids t+1..t+H relative to mid t;
/// -1 where fewer than H future events exist.
std::vector<int> label_events(std::span<const double> mids, std::size_t horizon, double theta);

struct SampleMeta {
  int stock = 0;
  int day = 0;
  std::size_t event = 0;  // index of the window's last event within its stream
  double best_ask = 0.0;
  double best_bid = 0.0;
};

/// Parallel arrays of 40xT inputs, labels and provenance.
struct SampleSet {
  std::vector<Matrix> xs;
  std::vector<int> labels;
  std::vector<SampleMeta> meta;

  std::size_t size() const { return xs.size(); }
  bool empty() const { return xs.empty(); }
  void append(const SampleSet& other);
  std::array<std::uint64_t, 3> class_counts() const;
};

struct WindowConfig {
  std::size_t t = 10;
  std::size_t horizon = 10;
  double theta = 0.002;
};

/// Stride-1 windows ending at every labelable event: n - T - H + 1 samples
/// for a stream of n events with computed labels.
SampleSet make_windows(const EventStream& stream, const WindowConfig& cfg);
SampleSet make_windows(std::span<const EventStream> streams, const WindowConfig& cfg);

struct DatasetSplit {
  SampleSet train;
  SampleSet val;
  SampleSet test;
  ZScoreStats stats;
};

/// Builds a split from raw streams: z-score statistics are fitted on the
/// training streams, the last `val_fraction` of each stock's training
/// windows become validation.
DatasetSplit make_split(std::span<const EventStream> train_streams,
                        std::span<const EventStream> test_streams, const WindowConfig& cfg,
                        double val_fraction = 0.1);

struct DayRange {
  int first = 0;
  int last = 0;  // inclusive
  bool contains(int day) const { return day >= first && day <= last; }
};

std::vector<EventStream> select(std::span<const EventStream> streams, const std::set<int>& stocks,
                                DayRange days);
std::set<int> stock_ids(std::span<const EventStream> streams);
int max_day(std::span<const EventStream> streams);

struct Setup1Split {
  int target = 0;
  std::set<int> old_stocks;
  DatasetSplit old_data;  // base network data: other stocks
  DatasetSplit new_data;  // target stock
  DatasetSplit joint;     // all stocks, for the joint arm
};
/// Leave-one-stock-out: train days [0, train_last], test days after.
Setup1Split split_setup1(std::span<const EventStream> streams, int target, int train_last_day,
                         const WindowConfig& cfg);

struct Setup2Split {
  std::set<int> old_stocks;
  DatasetSplit old_data;
  std::vector<std::pair<int, DatasetSplit>> new_data;  // one per new stock
};
Setup2Split split_setup2(std::span<const EventStream> streams, const std::set<int>& old_stocks,
                         const std::set<int>& new_stocks, int train_last_day,
                         const WindowConfig& cfg);

struct OnlineSplit {
  DatasetSplit base;   // train on the first block of days
  DatasetSplit adapt;  // train on the next block; shares the test set
};
/// Stock-pooled day split; defaults follow 5 / 2 / 3 days.
OnlineSplit split_online(std::span<const EventStream> streams, DayRange base_days,
                         DayRange adapt_days, DayRange test_days, const WindowConfig& cfg);

struct SyntheticLobConfig {
  std::size_t stocks = 5;
  std::size_t days = 10;
  std::size_t events_per_day = 200;
  std::uint64_t seed = 1;
  double drift = 6e-4;           // per-event log-return in trending regimes
  double volatility = 3e-4;      // per-event log-return noise
  double regime_stay = 0.97;     // probability a regime persists to the next event
  double spread = 2e-4;          // relative spread
  double tick = 1e-4;            // relative level spacing
  double volume_scale = 100.0;
  double volume_noise = 0.5;     // lognormal sigma
  double signal_strength = 0.8;  // stock-specific order-flow imbalance
  std::size_t signal_lead = 5;   // imbalance reflects the regime this many events ahead
  int drift_day = -1;            // from this day on, the imbalance sign flips (-1: never)
  bool check_balance = true;     // require every class at >= 5% under `labels`
  WindowConfig labels;
};

/// Per-stock regime-switching random walk with level prices around the mid
/// and lognormal volumes. Stock s (0-based) carries its imbalance signal on
/// levels 2s and 2s+1 (mod 10). Stock ids are 1-based in the output.
std::vector<EventStream> generate_synthetic(const SyntheticLobConfig& cfg);

/// Table of class counts per stock and split: rows "stock,split,class0,class1,class2".
std::string class_distribution_csv(const std::vector<std::tuple<std::string, std::string, std::array<std::uint64_t, 3>>>& rows);

}  // namespace tabl
