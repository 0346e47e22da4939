// tabl: command-line front end for data preparation, training, adaptation,
// evaluation and the experiment drivers. Every output lands under --out.

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tabl/config.hpp"
#include "tabl/data.hpp"
#include "tabl/errors.hpp"
#include "tabl/experiments.hpp"
#include "tabl/metrics.hpp"
#include "tabl/model_io.hpp"
#include "tabl/network.hpp"
#include "tabl/training.hpp"

namespace fs = std::filesystem;
using namespace tabl;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Options shared by every subcommand.
struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::vector<std::string> argv;  // echoed into the output directory
};

// Data selection shared by the model commands.
struct Selection {
  std::string data;
  std::string stocks;
  std::string train_days = "0:6";
  std::string test_days = "7:9";
};

KeyValueConfig load_config(const Common& c) {
  return c.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(c.config);
}

/// --seed wins over TABL_SEED, which wins over the config file.
void apply_seed(const Common& c, KeyValueConfig& kv, const std::string& key) {
  if (c.seed) {
    kv.set(key, std::to_string(*c.seed));
  } else if (const char* env = std::getenv("TABL_SEED"); env && *env) {
    const auto v = parse_uint_list(env);
    if (v.size() != 1) throw ConfigError("TABL_SEED must be a single unsigned integer");
    kv.set(key, std::to_string(v[0]));
  }
}


std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void add_synthetic(KeyValueConfig& kv, const SyntheticLobConfig& s) {
  kv.set("synthetic.stocks", std::to_string(s.stocks));
  kv.set("synthetic.days", std::to_string(s.days));
  kv.set("synthetic.events_per_day", std::to_string(s.events_per_day));
  kv.set("synthetic.seed", std::to_string(s.seed));
  kv.set("synthetic.drift", shortest(s.drift));
  kv.set("synthetic.volatility", shortest(s.volatility));
  kv.set("synthetic.regime_stay", shortest(s.regime_stay));
  kv.set("synthetic.spread", shortest(s.spread));
  kv.set("synthetic.tick", shortest(s.tick));
  kv.set("synthetic.volume_scale", shortest(s.volume_scale));
  kv.set("synthetic.volume_noise", shortest(s.volume_noise));
  kv.set("synthetic.signal_strength", shortest(s.signal_strength));
  kv.set("synthetic.signal_lead", std::to_string(s.signal_lead));
  kv.set("synthetic.drift_day", std::to_string(s.drift_day));
  kv.set("synthetic.check_balance", s.check_balance ? "true" : "false");
}

class OutDir {
 public:
  explicit OutDir(const std::string& dir) : dir_(dir) {
    if (dir.empty()) throw ConfigError("--out is required");
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  }
  fs::path path(const std::string& name) const { return dir_ / name; }
  void write(const std::string& name, const std::string& text) const {
    write_file_atomic(dir_ / name, text);
  }
  /// The effective configuration plus the command line that produced it.
  // config.toml holds every effective setting, defaults included.
  void echo(KeyValueConfig kv, const Common& c, const std::string& command,
            const SyntheticLobConfig* synthetic = nullptr) const {
    const KeyValueConfig canonical = ExperimentConfig::from_config(kv).to_config();
    for (const auto& [key, value] : canonical.entries()) kv.set(key, value);
    if (synthetic) add_synthetic(kv, *synthetic);
    std::string args;
    for (std::size_t i = 0; i < c.argv.size(); ++i) {
      if (c.argv[i] == "--out") {
        ++i;
        continue;
      }
      if (c.argv[i].starts_with("--out=")) continue;
      args += (args.empty() ? "" : " ") + c.argv[i];
    }
    kv.set("cli.command", command);
    kv.set("cli.args", args);
    write("config.toml", kv.dump());
  }

 private:
  fs::path dir_;
};

std::vector<EventStream> load_streams(const std::string& path) {
  if (path.empty()) throw ConfigError("--data is required");
  if (!fs::exists(path)) throw IoError("no such data path: " + path);
  if (!fs::is_directory(path)) return read_native_csv(read_file(path));
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("stock") && name.ends_with(".csv"))
      files.push_back(entry.path());
  }
  if (files.empty()) throw IoError("no stock*.csv files in " + path);
  std::sort(files.begin(), files.end());
  std::vector<EventStream> streams;
  for (const auto& f : files)
    for (auto& s : read_native_csv(read_file(f))) streams.push_back(std::move(s));
  return streams;
}

DayRange parse_days(const std::string& text, const char* flag) {
  const auto d = parse_uint_list(text);
  if (d.empty()) throw ConfigError(std::string(flag) + " is empty");
  for (std::size_t i = 1; i < d.size(); ++i)
    if (d[i] != d[i - 1] + 1) throw ConfigError(std::string(flag) + " must be a contiguous range");
  return {static_cast<int>(d.front()), static_cast<int>(d.back())};
}

std::set<int> parse_stocks(const std::string& text, std::span<const EventStream> streams) {
  if (text.empty()) return stock_ids(streams);
  std::set<int> out;
  for (std::uint64_t s : parse_uint_list(text)) out.insert(static_cast<int>(s));
  return out;
}

DatasetSplit load_split(const Selection& sel, const WindowConfig& window) {
  const auto streams = load_streams(sel.data);
  const std::set<int> stocks = parse_stocks(sel.stocks, streams);
  const auto train = select(streams, stocks, parse_days(sel.train_days, "--train-days"));
  const auto test = select(streams, stocks, parse_days(sel.test_days, "--test-days"));
  if (train.empty()) throw ConfigError("selection has no training days");
  return make_split(train, test, window);
}

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
  app->add_option("--config", c.config, "TOML-style configuration file")->check(CLI::ExistingFile);
  auto* out = app->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  app->add_option("--seed", c.seed, "Master seed (overrides TABL_SEED and the config file)");
  app->add_flag("--quiet", c.quiet, "No per-epoch progress on stderr");
}

void add_selection(CLI::App* app, Selection& s) {
  app->add_option("--data", s.data, "Native CSV file or directory of stock*.csv files")->required();
  app->add_option("--stocks", s.stocks, "Stock ids, e.g. 1,2,3 or 1:3 (default: all)");
  app->add_option("--train-days", s.train_days, "Training days; z-score statistics are fitted here")
      ->capture_default_str();
  app->add_option("--test-days", s.test_days, "Evaluation days")->capture_default_str();
}

ExperimentConfig experiment_config(const KeyValueConfig& kv, const Common& c) {
  ExperimentConfig e = ExperimentConfig::from_config(kv);
  e.train.log = c.quiet ? nullptr : &std::cerr;
  return e;
}

std::string metrics_csv(const std::vector<std::pair<std::string, Metrics>>& rows) {
  std::string s = "split,accuracy,precision,recall,f1\n";
  for (const auto& [name, m] : rows)
    s += name + "," + fmt("%.10f", m.accuracy) + "," + fmt("%.10f", m.precision) + "," +
         fmt("%.10f", m.recall) + "," + fmt("%.10f", m.f1) + "\n";
  return s;
}

ConfusionMatrix confusion_on(const Model& m, const SampleSet& set) {
  return confusion(set.labels, predicted_labels(predict(m, set.xs)));
}

// metrics.csv (train / val / test) and confusion.csv (test).
void write_evaluation(const OutDir& out, const Model& model, const DatasetSplit& split) {
  std::vector<std::pair<std::string, Metrics>> rows;
  for (const auto& [name, set] : {std::pair<std::string, const SampleSet*>{"train", &split.train},
                                  {"val", &split.val},
                                  {"test", &split.test}}) {
    if (!set->empty()) rows.emplace_back(name, metrics(confusion_on(model, *set)));
  }
  out.write("metrics.csv", metrics_csv(rows));
  if (!split.test.empty()) out.write("confusion.csv", confusion_csv(confusion_on(model, split.test)));
  for (const auto& [name, m] : rows)
    std::cout << name << ": accuracy " << fmt("%.4f", m.accuracy) << " f1 " << fmt("%.4f", m.f1) << "\n";
}

Model load_with_aux(const std::string& model_path, const std::string& aux_path) {
  Model m = load_model(model_path);
  return aux_path.empty() ? m : load_aux(m, aux_path);
}

void check_window(const Model& m, const WindowConfig& w) {
  if (m.topology.input_t != w.t) {
    throw ShapeError("model expects windows of " + std::to_string(m.topology.input_t) +
                     " events but window.t is " + std::to_string(w.t));
  }
}

SyntheticLobConfig synthetic_config(const KeyValueConfig& kv) {
  static const std::set<std::string> keys{
      "synthetic.stocks",       "synthetic.days",          "synthetic.events_per_day",
      "synthetic.seed",         "synthetic.drift",         "synthetic.volatility",
      "synthetic.regime_stay",  "synthetic.spread",        "synthetic.tick",
      "synthetic.volume_scale", "synthetic.volume_noise",  "synthetic.signal_strength",
      "synthetic.signal_lead",  "synthetic.drift_day",     "synthetic.check_balance"};
  for (const auto& [key, value] : kv.entries())
    if (key.starts_with("synthetic.") && !keys.count(key)) throw ConfigError("unknown key '" + key + "'");
  SyntheticLobConfig s;
  s.stocks = kv.get_uint("synthetic.stocks", s.stocks);
  s.days = kv.get_uint("synthetic.days", s.days);
  s.events_per_day = kv.get_uint("synthetic.events_per_day", s.events_per_day);
  s.seed = kv.get_uint("synthetic.seed", s.seed);
  s.drift = kv.get_double("synthetic.drift", s.drift);
  s.volatility = kv.get_double("synthetic.volatility", s.volatility);
  s.regime_stay = kv.get_double("synthetic.regime_stay", s.regime_stay);
  s.spread = kv.get_double("synthetic.spread", s.spread);
  s.tick = kv.get_double("synthetic.tick", s.tick);
  s.volume_scale = kv.get_double("synthetic.volume_scale", s.volume_scale);
  s.volume_noise = kv.get_double("synthetic.volume_noise", s.volume_noise);
  s.signal_strength = kv.get_double("synthetic.signal_strength", s.signal_strength);
  s.signal_lead = kv.get_uint("synthetic.signal_lead", s.signal_lead);
  s.drift_day = static_cast<int>(kv.get_int("synthetic.drift_day", s.drift_day));
  s.check_balance = kv.get_bool("synthetic.check_balance", s.check_balance);
  s.labels = ExperimentConfig::from_config(kv).window;
  return s;
}

// Per-event label counts by stock and train/test split, plus the pooled rows.
std::string class_table(std::span<const EventStream> streams, const WindowConfig& w, int train_last_day) {
  std::map<std::pair<int, std::string>, std::array<std::uint64_t, 3>> counts;
  std::array<std::uint64_t, 3> all_train{}, all_test{};
  for (const EventStream& s : streams) {
    std::vector<int> labels;
    if (auto it = s.provided_labels.find(w.horizon); it != s.provided_labels.end()) {
      labels = it->second;
    } else {
      std::vector<double> mids;
      for (const auto& e : s.events) mids.push_back(e.mid);
      labels = label_events(mids, w.horizon, w.theta);
    }
    const bool train = s.day <= train_last_day;
    auto& row = counts[{s.stock, train ? "train" : "test"}];
    for (int l : labels) {
      if (l < 0) continue;
      ++row[static_cast<std::size_t>(l)];
      ++(train ? all_train : all_test)[static_cast<std::size_t>(l)];
    }
  }
  std::vector<std::tuple<std::string, std::string, std::array<std::uint64_t, 3>>> rows;
  for (const auto& [key, c] : counts) rows.emplace_back(std::to_string(key.first), key.second, c);
  rows.emplace_back("all", "train", all_train);
  rows.emplace_back("all", "test", all_test);
  return class_distribution_csv(rows);
}

void write_streams(const OutDir& out, const std::vector<EventStream>& streams) {
  for (int stock : stock_ids(streams)) {
    std::vector<EventStream> mine;
    for (const auto& s : streams)
      if (s.stock == stock) mine.push_back(s);
    out.write("stock" + std::to_string(stock) + ".csv", write_native_csv(mine));
  }
}

// ---- subcommands ---------------------------------------------------------

int cmd_gen_synthetic(const Common& c) {
  KeyValueConfig kv = load_config(c);
  apply_seed(c, kv, "synthetic.seed");
  const SyntheticLobConfig sc = synthetic_config(kv);
  const auto streams = generate_synthetic(sc);
  const OutDir out(c.out);
  write_streams(out, streams);
  const std::string table = class_table(streams, sc.labels, static_cast<int>(kv.get_int("experiment.train_last_day", 6)));
  out.write("class_distribution.csv", table);
  out.echo(kv, c, "gen-synthetic", &sc);
  std::cout << table;
  return 0;
}

int cmd_ingest(const Common& c, const std::string& layout_path, const std::vector<std::string>& inputs) {
  KeyValueConfig kv = load_config(c);
  const Fi2010Layout layout = Fi2010Layout::from_config(KeyValueConfig::load(layout_path));
  std::vector<EventStream> streams;
  for (const auto& in : inputs)
    for (auto& s : load_fi2010(read_file(in), layout)) streams.push_back(std::move(s));
  const WindowConfig w = ExperimentConfig::from_config(kv).window;
  const OutDir out(c.out);
  write_streams(out, streams);
  const std::string table = class_table(streams, w, static_cast<int>(kv.get_int("experiment.train_last_day", 6)));
  out.write("class_distribution.csv", table);
  kv.set("cli.layout", layout_path);
  out.echo(kv, c, "ingest-fi2010");
  std::cout << table;
  return 0;
}

int cmd_train_base(const Common& c, const Selection& sel, const std::string& topology) {
  KeyValueConfig kv = load_config(c);
  apply_seed(c, kv, "experiment.seed");
  if (!topology.empty()) kv.set("experiment.topology", topology);
  const ExperimentConfig e = experiment_config(kv, c);
  const DatasetSplit split = load_split(sel, e.window);
  Model model = build(e.resolved_topology(), derive_seed(e.seed, 1));
  TrainConfig tc = e.train;
  tc.seed = derive_seed(e.seed, 2);
  const TrainingReport rep = train(model, split.train, split.val, tc);
  const OutDir out(c.out);
  save_model(model, out.path("model.tablmodel"));
  out.write("training.csv", rep.csv());
  write_evaluation(out, model, split);
  out.echo(kv, c, "train-base");
  std::cout << "stopped: " << rep.stop_reason << ", best epoch " << rep.best_epoch << "\n";
  return 0;
}

int cmd_finetune(const Common& c, const Selection& sel, const std::string& model_path) {
  KeyValueConfig kv = load_config(c);
  apply_seed(c, kv, "experiment.seed");
  const ExperimentConfig e = experiment_config(kv, c);
  Model model = load_model(model_path);
  if (model.adapted()) throw StateError("finetune expects a plain model");
  check_window(model, e.window);
  const DatasetSplit split = load_split(sel, e.window);
  TrainConfig tc = e.train;
  tc.seed = derive_seed(e.seed, 3);
  const TrainingReport rep = train(model, split.train, split.val, tc);
  const OutDir out(c.out);
  save_model(model, out.path("model.tablmodel"));
  out.write("training.csv", rep.csv());
  write_evaluation(out, model, split);
  out.echo(kv, c, "finetune");
  return 0;
}

int cmd_adapt(const Common& c, const Selection& sel, const std::string& model_path, std::size_t rank,
              const std::string& strategy, bool train_lambda) {
  KeyValueConfig kv = load_config(c);
  apply_seed(c, kv, "experiment.seed");
  const ExperimentConfig e = experiment_config(kv, c);
  const Model base = load_model(model_path);
  check_window(base, e.window);
  const DatasetSplit split = load_split(sel, e.window);
  Model model = augment(base, rank, parse_strategy(strategy), derive_seed(e.seed, 4), train_lambda);
  TrainConfig tc = e.train;
  tc.seed = derive_seed(e.seed, 5);
  const TrainingReport rep = train(model, split.train, split.val, tc);
  const OutDir out(c.out);
  save_model(model, out.path("model.tablmodel"));
  save_aux(model, out.path("aux.tablaux"));
  out.write("training.csv", rep.csv());
  write_evaluation(out, model, split);
  out.echo(kv, c, "adapt");
  return 0;
}

int cmd_fold(const Common& c, const std::string& model_path, const std::string& aux_path) {
  const KeyValueConfig kv = load_config(c);
  const Model adapted = load_with_aux(model_path, aux_path);
  if (!adapted.adapted()) throw StateError("fold expects an adapted model (or a base plus --aux)");
  const Model f = folded(adapted);
  const OutDir out(c.out);
  save_model(f, out.path("model.tablmodel"));
  out.echo(kv, c, "fold");
  const ParamLedger p = count_params(f);
  std::cout << "folded parameters " << p.base_with_diagonal << ", MACs per sample "
            << count_macs(f, 1).total << "\n";
  return 0;
}

int cmd_eval(const Common& c, const Selection& sel, const std::string& model_path,
             const std::string& aux_path, const std::string& reference) {
  const KeyValueConfig kv = load_config(c);
  const ExperimentConfig e = ExperimentConfig::from_config(kv);
  const Model model = load_with_aux(model_path, aux_path);
  check_window(model, e.window);
  const DatasetSplit split = load_split(sel, e.window);
  const OutDir out(c.out);
  write_evaluation(out, model, split);
  const std::vector<Matrix> ys = predict(model, split.test.xs);
  std::string pred = "index,stock,day,event,label,predicted,p0,p1,p2\n";
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const SampleMeta& m = split.test.meta[i];
    pred += std::to_string(i) + "," + std::to_string(m.stock) + "," + std::to_string(m.day) + "," +
            std::to_string(m.event) + "," + std::to_string(split.test.labels[i]) + "," +
            std::to_string(argmax_label(ys[i]));
    for (double p : ys[i].values()) pred += "," + fmt("%.17g", p);
    pred += "\n";
  }
  out.write("predictions.csv", pred);
  if (!reference.empty()) {
    const Model ref = load_model(reference);
    const std::vector<Matrix> yr = predict(ref, split.test.xs);
    double worst = 0.0;
    std::size_t flips = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      worst = std::max(worst, max_abs_diff(ys[i], yr[i]));
      flips += argmax_label(ys[i]) != argmax_label(yr[i]);
    }
    out.write("reference.csv", "max_abs_output_diff,label_flips\n" + fmt("%.17g", worst) + "," +
                                   std::to_string(flips) + "\n");
    std::cout << "max |output - reference| " << fmt("%.3e", worst) << ", label flips " << flips << "\n";
  }
  out.echo(kv, c, "eval");
  return 0;
}

int cmd_backtest(const Common& c, const Selection& sel, const std::string& model_path,
                 const std::string& aux_path, const std::string& mode) {
  const KeyValueConfig kv = load_config(c);
  const ExperimentConfig e = ExperimentConfig::from_config(kv);
  const Model model = load_with_aux(model_path, aux_path);
  check_window(model, e.window);
  Compounding comp;
  if (mode == "compounded") comp = Compounding::compounded;
  else if (mode == "simple") comp = Compounding::simple;
  else throw ConfigError("--compounding must be 'compounded' or 'simple'");
  const DatasetSplit split = load_split(sel, e.window);
  const OutDir out(c.out);
  std::string summary = "stock,events,trades,total_return_pct,win_rate_pct,f1\n";
  std::map<int, std::vector<std::size_t>> by_stock;
  for (std::size_t i = 0; i < split.test.size(); ++i) by_stock[split.test.meta[i].stock].push_back(i);
  for (auto& [stock, idx] : by_stock) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto& ma = split.test.meta[a];
      const auto& mb = split.test.meta[b];
      return std::tie(ma.day, ma.event) < std::tie(mb.day, mb.event);
    });
    std::vector<Matrix> xs;
    std::vector<int> labels;
    std::vector<double> ask, bid;
    for (std::size_t i : idx) {
      xs.push_back(split.test.xs[i]);
      labels.push_back(split.test.labels[i]);
      ask.push_back(split.test.meta[i].best_ask);
      bid.push_back(split.test.meta[i].best_bid);
    }
    const std::vector<int> pred = predicted_labels(predict(model, xs));
    const TradingResult r = simulate_trading(pred, ask, bid, comp);
    const ConfusionMatrix cm = confusion(labels, pred);
    const auto wr = win_rate(cm);
    const std::string tag = "stock" + std::to_string(stock);
    out.write("trades_" + tag + ".csv", trades_csv(r.log));
    out.write("returns_" + tag + ".csv", curve_csv(r));
    summary += std::to_string(stock) + "," + std::to_string(xs.size()) + "," +
               std::to_string(r.log.trades.size()) + "," + fmt("%.6f", r.total() * 100.0) + "," +
               (wr ? fmt("%.6f", *wr) : std::string()) + "," + fmt("%.6f", metrics(cm).f1) + "\n";
  }
  out.write("backtest.csv", summary);
  out.echo(kv, c, "backtest");
  std::cout << summary;
  return 0;
}

int cmd_rank_sweep(const Common& c, const Selection& sel, const std::string& model_path,
                   const std::string& ranks, const std::string& strategy, bool on_val) {
  KeyValueConfig kv = load_config(c);
  apply_seed(c, kv, "experiment.seed");
  if (!ranks.empty()) kv.set("experiment.ranks", ranks);
  const ExperimentConfig e = experiment_config(kv, c);
  const Model base = load_model(model_path);
  if (base.adapted()) throw StateError("rank-sweep expects a plain base model");
  check_window(base, e.window);
  const DatasetSplit split = load_split(sel, e.window);
  const RankSweep sw = rank_sweep(base, split, e.ranks, parse_strategy(strategy), e.train,
                                  derive_seed(e.seed, 6), on_val || e.select_on_validation,
                                  e.train_lambda);
  std::string csv = "rank,train_f1,val_f1,test_f1,selected\n";
  for (std::size_t i = 0; i < sw.rows.size(); ++i) {
    const auto& r = sw.rows[i];
    csv += std::to_string(r.rank) + "," + fmt("%.10f", r.train_f1) + "," + fmt("%.10f", r.val_f1) + "," +
           fmt("%.10f", r.test_f1) + "," + (i == sw.selected ? "1" : "0") + "\n";
  }
  const OutDir out(c.out);
  out.write("rank_sweep.csv", csv);
  save_model(sw.model, out.path("model.tablmodel"));
  save_aux(sw.model, out.path("aux.tablaux"));
  out.echo(kv, c, "rank-sweep");
  std::cout << csv << "selected K = " << sw.rows[sw.selected].rank << "\n";
  return 0;
}

int cmd_gradcheck(const Common& c, const std::string& topology, std::size_t rank, const std::string& strategy,
                  std::size_t max_entries, double tolerance) {
  KeyValueConfig kv = load_config(c);
  apply_seed(c, kv, "experiment.seed");
  if (!topology.empty()) kv.set("experiment.topology", topology);
  else if (!kv.has("experiment.topology")) kv.set("experiment.topology", "[[3,1]]");
  const ExperimentConfig e = ExperimentConfig::from_config(kv);
  Model model = build(e.resolved_topology(), derive_seed(e.seed, 1));
  Rng rng(derive_seed(e.seed, 2));
  if (rank > 0) model = augment(model, rank, parse_strategy(strategy), derive_seed(e.seed, 3), true);
  // Redraw biases, aux factors and the input, keeping the draw whose ReLU
  // inputs sit furthest from the kink. Large networks rarely clear 1e-3.
  Matrix x(model.topology.input_d, model.topology.input_t);
  Model best_model = model;
  Matrix best_x = x;
  double best_margin = -1.0;
  for (int attempt = 0; attempt < 50 && best_margin <= 1e-3; ++attempt) {
    for (ParamRef& p : parameters(model)) {
      if (p.name.ends_with(".bias")) {
        for (double& v : p.values) v = rng.uniform(-0.1, 0.1);
      } else if (rank > 0 && p.trainable && p.role == ParamRole::dense) {
        for (double& v : p.values) v = rng.uniform(-0.2, 0.2);
      }
    }
    for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
    const double margin = relu_margin(model, x);
    if (margin > best_margin) {
      best_margin = margin;
      best_model = model;
      best_x = x;
    }
  }
  model = std::move(best_model);
  x = std::move(best_x);
  const int label = static_cast<int>(rng.below(3));
  const GradCheckReport r = gradient_check(model, x, label, WeightedEntropyLoss({1, 1, 1}, 1.0), max_entries);
  std::string text = r.text();
  if (std::isfinite(best_margin)) text += "smallest ReLU input magnitude: " + fmt("%.3e", best_margin) + "\n";
  text += "max relative error: " + fmt("%.3e", r.max_rel_error) + "\n";
  if (!c.out.empty()) {
    const OutDir out(c.out);
    out.write("gradcheck.txt", text);
    out.echo(kv, c, "gradcheck");
  }
  std::cout << text;
  return r.passed(tolerance) ? 0 : 1;
}

int cmd_audit(const Common& c, const std::string& dims_text, const std::string& topology, std::size_t rank,
              const std::string& strategy, std::uint64_t batch, bool no_attention) {
  std::vector<std::pair<std::string, std::uint64_t>> rows;
  if (!dims_text.empty()) {
    const auto d = parse_uint_list(dims_text);
    if (d.size() != 5) throw ConfigError("--dims needs N,D,D',T,T'");
    const LayerDims dims{d[1], d[3], d[2], d[4]};
    MacBreakdown m;
    if (strategy == "base") m = base_macs(dims, d[0], !no_attention);
    else if (parse_strategy(strategy) == Strategy::is1) m = is1_macs(dims, rank, d[0], !no_attention);
    else m = is2_macs(dims, rank, d[0], !no_attention);
    rows = {{"feature", m.feature}, {"attention", m.attention}, {"output", m.output},
            {"materialize", m.materialize}, {"total", m.total()}};
  } else {
    const KeyValueConfig kv = load_config(c);
    ExperimentConfig e = ExperimentConfig::from_config(kv);
    if (!topology.empty()) e.topology = topology;
    Model m = build(e.resolved_topology(), 1);
    if (strategy != "base") m = augment(m, rank, parse_strategy(strategy), 1);
    const MacLedger ledger = count_macs(m, batch);
    for (const auto& r : ledger.rows) rows.emplace_back(r.layer, r.macs);
    rows.emplace_back("total", ledger.total);
    const ParamLedger p = count_params(m);
    rows.emplace_back("params_base", p.base_with_diagonal);
    rows.emplace_back("params_aux", p.aux);
  }
  std::string csv = "term,macs\n";
  for (const auto& [name, v] : rows) {
    csv += name + "," + std::to_string(v) + "\n";
    std::cout << name << " " << v << "\n";
  }
  if (!c.out.empty()) {
    const OutDir out(c.out);
    out.write("audit.csv", csv);
    out.echo(load_config(c), c, "audit-flops");
  }
  return 0;
}

int cmd_experiment(const Common& c, const std::string& which, const std::string& data, std::size_t jobs,
                   std::size_t runs, const std::string& ranks, const std::string& topology) {
  KeyValueConfig kv = load_config(c);
  apply_seed(c, kv, "experiment.seed");
  if (jobs > 0) kv.set("experiment.jobs", std::to_string(jobs));
  if (runs > 0) kv.set("experiment.runs", std::to_string(runs));
  if (!ranks.empty()) kv.set("experiment.ranks", ranks);
  if (!topology.empty()) kv.set("experiment.topology", topology);
  const ExperimentConfig e = experiment_config(kv, c);
  const std::optional<SyntheticLobConfig> sc = data.empty() ? std::optional(synthetic_config(kv)) : std::nullopt;
  const std::vector<EventStream> streams = sc ? generate_synthetic(*sc) : load_streams(data);
  ExperimentReport r;
  if (which == "setup1") r = run_setup1(streams, e);
  else if (which == "setup2") r = run_setup2(streams, e);
  else r = run_online(streams, e);
  const OutDir out(c.out);
  out.write("runs.csv", r.runs_csv());
  out.write("summary.csv", r.summary_csv());
  out.write("rank_sweep.csv", r.sweep_csv());
  out.write("storage.csv", r.storage_csv());
  out.write("report.txt", r.text());
  out.echo(kv, c, "run-" + which, sc ? &*sc : nullptr);
  std::cout << r.text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank auxiliary adaptation of bilinear LOB networks"};
  app.require_subcommand(1);
  Common c;
  for (int i = 2; i < argc; ++i) c.argv.emplace_back(argv[i]);
  std::function<int()> run;

  Selection sel;
  std::string model_path, aux_path, reference, strategy = "is2", topology, ranks, layout, data;
  std::vector<std::string> inputs;
  std::size_t rank = 0, jobs = 0, runs = 0, max_entries = 0;
  std::uint64_t batch = 1;
  double tolerance = 1e-6;
  bool train_lambda = false, on_val = false, no_attention = false;
  std::string dims, compounding = "compounded";

  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic multi-stock LOB dataset");
  add_common(gen, c);
  gen->callback([&] { run = [&] { return cmd_gen_synthetic(c); }; });

  auto* ingest = app.add_subcommand("ingest-fi2010", "Convert FI-2010-style text files to the native format");
  add_common(ingest, c);
  ingest->add_option("--layout", layout, "Column layout file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--in", inputs, "Input files")->required()->check(CLI::ExistingFile);
  ingest->callback([&] { run = [&] { return cmd_ingest(c, layout, inputs); }; });

  auto* tb = app.add_subcommand("train-base", "Train a base network");
  add_common(tb, c);
  add_selection(tb, sel);
  tb->add_option("--topology", topology, "Registry name or [[D',T'],...,[3,1]]");
  tb->callback([&] { run = [&] { return cmd_train_base(c, sel, topology); }; });

  auto* ft = app.add_subcommand("finetune", "Fine-tune every parameter of a copy of a model");
  add_common(ft, c);
  add_selection(ft, sel);
  ft->add_option("--model", model_path, "Base model")->required()->check(CLI::ExistingFile);
  ft->callback([&] { run = [&] { return cmd_finetune(c, sel, model_path); }; });

  auto* ad = app.add_subcommand("adapt", "Freeze a base model and train low-rank auxiliary connections");
  add_common(ad, c);
  add_selection(ad, sel);
  ad->add_option("--model", model_path, "Base model")->required()->check(CLI::ExistingFile);
  ad->add_option("--rank", rank, "Maximum rank K")->required()->check(CLI::PositiveNumber);
  ad->add_option("--strategy", strategy, "is1 or is2")->capture_default_str();
  ad->add_flag("--train-lambda", train_lambda, "Also train the attention mixing weights");
  ad->callback([&] { run = [&] { return cmd_adapt(c, sel, model_path, rank, strategy, train_lambda); }; });

  auto* fo = app.add_subcommand("fold", "Add the auxiliary products into the base weights");
  add_common(fo, c);
  fo->add_option("--model", model_path, "Adapted model, or a base model with --aux")->required()->check(CLI::ExistingFile);
  fo->add_option("--aux", aux_path, "Auxiliary sidecar to attach first")->check(CLI::ExistingFile);
  fo->callback([&] { run = [&] { return cmd_fold(c, model_path, aux_path); }; });

  auto* ev = app.add_subcommand("eval", "Evaluate a model on a data selection");
  add_common(ev, c);
  add_selection(ev, sel);
  ev->add_option("--model", model_path, "Model")->required()->check(CLI::ExistingFile);
  ev->add_option("--aux", aux_path, "Auxiliary sidecar")->check(CLI::ExistingFile);
  ev->add_option("--reference", reference, "Second model whose outputs are compared")->check(CLI::ExistingFile);
  ev->callback([&] { run = [&] { return cmd_eval(c, sel, model_path, aux_path, reference); }; });

  auto* bt = app.add_subcommand("backtest", "Long-only trading simulation on the test days");
  add_common(bt, c);
  add_selection(bt, sel);
  bt->add_option("--model", model_path, "Model")->required()->check(CLI::ExistingFile);
  bt->add_option("--aux", aux_path, "Auxiliary sidecar")->check(CLI::ExistingFile);
  bt->add_option("--compounding", compounding, "compounded or simple")->capture_default_str();
  bt->callback([&] { run = [&] { return cmd_backtest(c, sel, model_path, aux_path, compounding); }; });

  auto* rs = app.add_subcommand("rank-sweep", "Adapt at every rank in a range and select one");
  add_common(rs, c);
  add_selection(rs, sel);
  rs->add_option("--model", model_path, "Base model")->required()->check(CLI::ExistingFile);
  rs->add_option("--ranks", ranks, "Ranks, e.g. 1:20 or 1,2,4");
  rs->add_option("--strategy", strategy, "is1 or is2")->capture_default_str();
  rs->add_flag("--select-on-validation", on_val, "Select on validation F1 instead of training F1");
  rs->callback([&] { run = [&] { return cmd_rank_sweep(c, sel, model_path, ranks, strategy, on_val); }; });

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of a freshly built network");
  add_common(gc, c, false);
  gc->add_option("--topology", topology, "Registry name or [[D',T'],...,[3,1]] (default: one TABL classifier)");
  gc->add_option("--rank", rank, "Attach auxiliary connections of this rank (0: none)");
  gc->add_option("--strategy", strategy, "is1 or is2")->capture_default_str();
  gc->add_option("--max-entries", max_entries, "Entries probed per tensor (0: all)");
  gc->add_option("--tolerance", tolerance, "Exit nonzero above this relative error")->capture_default_str();
  gc->callback([&] { run = [&] { return cmd_gradcheck(c, topology, rank, strategy, max_entries, tolerance); }; });

  auto* au = app.add_subcommand("audit-flops", "Closed-form multiply-accumulate counts");
  add_common(au, c, false);
  au->add_option("--dims", dims, "Single layer N,D,D',T,T'");
  au->add_option("--topology", topology, "Whole network instead of a single layer");
  au->add_option("--rank", rank, "Rank K")->capture_default_str();
  au->add_option("--strategy", strategy, "base, is1 or is2")->capture_default_str();
  au->add_option("--batch", batch, "Batch size for --topology")->capture_default_str();
  au->add_flag("--no-attention", no_attention, "Bilinear layer without attention");
  au->callback([&] {
    run = [&] { return cmd_audit(c, dims, topology, rank, strategy, batch, no_attention); };
  });

  for (const std::string which : {"setup1", "setup2", "online"}) {
    auto* ex = app.add_subcommand("run-" + which, "Run the " + which + " experiment");
    add_common(ex, c);
    ex->add_option("--data", data, "Native data (default: synthetic from the [synthetic] section)");
    ex->add_option("--jobs", jobs, "Worker threads");
    ex->add_option("--runs", runs, "Repetitions per target");
    ex->add_option("--ranks", ranks, "Rank range, e.g. 1:20");
    ex->add_option("--topology", topology, "Registry name or [[D',T'],...,[3,1]]");
    ex->callback([&, which] {
      run = [&, which] { return cmd_experiment(c, which, data, jobs, runs, ranks, topology); };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return run();
  } catch (const Error& e) {
    std::cerr << "tabl: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "tabl: io error: " << e.what() << "\n";
    return exit_code(ErrorCategory::io);
  } catch (const std::exception& e) {
    std::cerr << "tabl: " << e.what() << "\n";
    return 1;
  }
}
