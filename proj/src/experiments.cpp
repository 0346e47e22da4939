#include "tabl/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "tabl/errors.hpp"

namespace tabl {

namespace {

constexpr const char* kExperimentKeys[] = {
    "experiment.topology",       "experiment.runs",          "experiment.seed",
    "experiment.ranks",          "experiment.strategies",    "experiment.select_on_validation",
    "experiment.train_lambda",   "experiment.joint_arm",     "experiment.targets",
    "experiment.train_last_day", "experiment.old_stocks",    "experiment.new_stocks",
    "experiment.online_base",    "experiment.online_adapt",  "experiment.online_test",
    "experiment.jobs",           "train.max_epochs",         "train.batch_size",
    "train.lr",                  "train.beta",               "train.plateau_patience",
    "train.plateau_factor",      "train.plateau_threshold",  "train.min_lr",
    "train.early_stop",          "window.t",                 "window.horizon",
    "window.theta"};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Shortest text that reads back to the same double.
std::string exact(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
std::string list_text(const std::vector<T>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

std::string range_text(DayRange r) { return std::to_string(r.first) + ":" + std::to_string(r.last); }

DayRange parse_range(const KeyValueConfig& cfg, const std::string& key, DayRange fallback) {
  if (!cfg.has(key)) return fallback;
  const auto days = parse_uint_list(cfg.get_string(key, ""));
  if (days.empty()) throw ConfigError(key + " is empty");
  for (std::size_t i = 1; i < days.size(); ++i)
    if (days[i] != days[i - 1] + 1) throw ConfigError(key + " must be a contiguous day range");
  return {static_cast<int>(days.front()), static_cast<int>(days.back())};
}

std::vector<int> int_list(const KeyValueConfig& cfg, const std::string& key, std::vector<int> fallback) {
  if (!cfg.has(key)) return fallback;
  std::vector<int> out;
  for (std::uint64_t v : cfg.get_uint_list(key, {})) out.push_back(static_cast<int>(v));
  return out;
}

std::string strategy_list(const std::vector<Strategy>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::string(strategy_name(s[i]));
  return out + "]";
}

std::string aux_arm(Strategy s) { return "aux_" + std::string(strategy_name(s)); }

Metrics test_metrics(const ConfusionMatrix& cm) { return metrics(cm); }

double train_f1(const Model& m, const SampleSet& set) {
  if (set.empty()) return 0.0;
  return metrics(confusion(set.labels, predicted_labels(predict(m, set.xs)))).f1;
}

RunRecord record(std::string section, std::size_t run, std::string arm, std::size_t rank,
                 const Model& model, const SampleSet& train_set, const SampleSet& test_set) {
  RunRecord r;
  r.section = std::move(section);
  r.run = run;
  r.arm = std::move(arm);
  r.rank = rank;
  r.train_f1 = train_f1(model, train_set);
  r.confusion = confusion(test_set.labels, predicted_labels(predict(model, test_set.xs)));
  r.metrics = test_metrics(r.confusion);
  return r;
}

SampleSet filter_stock(const SampleSet& set, int stock) {
  SampleSet out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.meta[i].stock != stock) continue;
    out.xs.push_back(set.xs[i]);
    out.labels.push_back(set.labels[i]);
    out.meta.push_back(set.meta[i]);
  }
  return out;
}

TrainConfig with_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::ostream* log,
                      std::string prefix) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  t.log = log;
  t.log_prefix = std::move(prefix);
  return t;
}

// Everything one (section, run) task produces; merged serially afterwards.
struct TaskOutput {
  std::vector<RunRecord> records;
  std::vector<RankSweepRow> sweep;
  std::string log;
};

enum Role : std::uint64_t {
  base_init = 1,
  base_train,
  finetune_train,
  joint_init,
  joint_train,
  sweep_is1,
  sweep_is2
};

std::uint64_t role_seed(std::uint64_t task_seed, Role role) { return derive_seed(task_seed, role); }
std::uint64_t sweep_seed(std::uint64_t task_seed, Strategy s) {
  return role_seed(task_seed, s == Strategy::is1 ? sweep_is1 : sweep_is2);
}

std::vector<TaskOutput> run_tasks(std::size_t n, const ExperimentConfig& cfg,
                                  const std::function<void(std::size_t, TaskOutput&, std::ostream*)>& body) {
  std::vector<TaskOutput> out(n);
  std::mutex log_mutex;
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    std::ostringstream buffer;
    body(i, out[i], cfg.train.log ? &buffer : nullptr);
    if (cfg.train.log) {
      std::lock_guard<std::mutex> lock(log_mutex);
      *cfg.train.log << buffer.str() << std::flush;
    }
  });
  return out;
}

void fill_complexity(ExperimentReport& r, const Model& base, const ExperimentConfig& cfg,
                     std::size_t n_new) {
  r.topology = describe(base.topology);
  r.base_params = count_params(base).base_with_diagonal;
  r.base_macs = count_macs(base, 1).total;
  const std::size_t k_max = *std::max_element(cfg.ranks.begin(), cfg.ranks.end());
  const Model a = augment(base, k_max, Strategy::is2, 0);
  r.aux_params_max = count_params(a).aux;
  r.adapted_macs_max = count_macs(a, 1).total;
  r.storage = storage_plans(base, n_new, cfg.ranks);
}

void merge(ExperimentReport& r, std::vector<TaskOutput>& outs) {
  for (TaskOutput& t : outs) {
    for (auto& rec : t.records) r.records.push_back(std::move(rec));
    for (auto& row : t.sweep) r.sweep.push_back(row);
  }
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.runs == 0) throw ConfigError("experiment.runs must be at least 1");
  if (cfg.ranks.empty()) throw ConfigError("experiment.ranks is empty");
  if (std::find(cfg.ranks.begin(), cfg.ranks.end(), 0u) != cfg.ranks.end())
    throw ConfigError("ranks must be positive");
  if (cfg.strategies.empty()) throw ConfigError("experiment.strategies is empty");
  if (cfg.jobs == 0) throw ConfigError("experiment.jobs must be at least 1");
}

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const KeyValueConfig& kv) {
  const std::set<std::string> known(std::begin(kExperimentKeys), std::end(kExperimentKeys));
  for (const auto& [key, value] : kv.entries()) {
    const bool ours = key.starts_with("experiment.") || key.starts_with("train.") || key.starts_with("window.");
    if (ours && !known.count(key)) throw ConfigError("unknown key '" + key + "'");
  }
  ExperimentConfig c;
  c.topology = kv.get_string("experiment.topology", c.topology);
  c.runs = kv.get_uint("experiment.runs", c.runs);
  c.seed = kv.get_uint("experiment.seed", c.seed);
  if (kv.has("experiment.ranks")) {
    c.ranks.clear();
    for (std::uint64_t k : kv.get_uint_list("experiment.ranks", {})) c.ranks.push_back(k);
  }
  if (kv.has("experiment.strategies")) {
    c.strategies.clear();
    for (const std::string& s : kv.get_list("experiment.strategies")) c.strategies.push_back(parse_strategy(s));
  }
  c.select_on_validation = kv.get_bool("experiment.select_on_validation", c.select_on_validation);
  c.train_lambda = kv.get_bool("experiment.train_lambda", c.train_lambda);
  c.joint_arm = kv.get_bool("experiment.joint_arm", c.joint_arm);
  c.targets = int_list(kv, "experiment.targets", c.targets);
  c.train_last_day = static_cast<int>(kv.get_int("experiment.train_last_day", c.train_last_day));
  c.old_stocks = int_list(kv, "experiment.old_stocks", c.old_stocks);
  c.new_stocks = int_list(kv, "experiment.new_stocks", c.new_stocks);
  c.online_base = parse_range(kv, "experiment.online_base", c.online_base);
  c.online_adapt = parse_range(kv, "experiment.online_adapt", c.online_adapt);
  c.online_test = parse_range(kv, "experiment.online_test", c.online_test);
  c.jobs = kv.get_uint("experiment.jobs", c.jobs);

  TrainConfig& t = c.train;
  t.max_epochs = kv.get_uint("train.max_epochs", t.max_epochs);
  t.batch_size = kv.get_uint("train.batch_size", t.batch_size);
  t.lr = kv.get_double("train.lr", t.lr);
  t.beta = kv.get_double("train.beta", t.beta);
  t.plateau_patience = kv.get_uint("train.plateau_patience", t.plateau_patience);
  t.plateau_factor = kv.get_double("train.plateau_factor", t.plateau_factor);
  t.plateau_threshold = kv.get_double("train.plateau_threshold", t.plateau_threshold);
  t.min_lr = kv.get_double("train.min_lr", t.min_lr);
  t.early_stop = kv.get_uint("train.early_stop", t.early_stop);

  c.window.t = kv.get_uint("window.t", c.window.t);
  c.window.horizon = kv.get_uint("window.horizon", c.window.horizon);
  c.window.theta = kv.get_double("window.theta", c.window.theta);
  validate(c);
  return c;
}

KeyValueConfig ExperimentConfig::to_config() const {
  KeyValueConfig kv;
  kv.set("experiment.topology", topology);
  kv.set("experiment.runs", std::to_string(runs));
  kv.set("experiment.seed", std::to_string(seed));
  kv.set("experiment.ranks", list_text(ranks));
  kv.set("experiment.strategies", strategy_list(strategies));
  kv.set("experiment.select_on_validation", select_on_validation ? "true" : "false");
  kv.set("experiment.train_lambda", train_lambda ? "true" : "false");
  kv.set("experiment.joint_arm", joint_arm ? "true" : "false");
  kv.set("experiment.targets", list_text(targets));
  kv.set("experiment.train_last_day", std::to_string(train_last_day));
  kv.set("experiment.old_stocks", list_text(old_stocks));
  kv.set("experiment.new_stocks", list_text(new_stocks));
  kv.set("experiment.online_base", range_text(online_base));
  kv.set("experiment.online_adapt", range_text(online_adapt));
  kv.set("experiment.online_test", range_text(online_test));
  kv.set("experiment.jobs", std::to_string(jobs));
  kv.set("train.max_epochs", std::to_string(train.max_epochs));
  kv.set("train.batch_size", std::to_string(train.batch_size));
  kv.set("train.lr", exact(train.lr));
  kv.set("train.beta", exact(train.beta));
  kv.set("train.plateau_patience", std::to_string(train.plateau_patience));
  kv.set("train.plateau_factor", exact(train.plateau_factor));
  kv.set("train.plateau_threshold", exact(train.plateau_threshold));
  kv.set("train.min_lr", exact(train.min_lr));
  kv.set("train.early_stop", std::to_string(train.early_stop));
  kv.set("window.t", std::to_string(window.t));
  kv.set("window.horizon", std::to_string(window.horizon));
  kv.set("window.theta", exact(window.theta));
  return kv;
}

Topology ExperimentConfig::resolved_topology() const {
  Topology t = topology.starts_with("[") ? parse_bilinear_topology(topology) : lookup_topology(topology);
  t.input_t = window.t;
  chain_shapes(t);
  return t;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

RankSweep rank_sweep(const Model& base, const DatasetSplit& data, std::vector<std::size_t> ranks,
                     Strategy strategy, const TrainConfig& train_cfg, std::uint64_t seed,
                     bool on_validation, bool train_lambda) {
  if (ranks.empty()) throw ConfigError("rank range is empty");
  std::sort(ranks.begin(), ranks.end());
  ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
  if (ranks.front() == 0) throw ConfigError("ranks must be positive");
  RankSweep sweep;
  double best = -1.0;
  for (std::size_t k : ranks) {
    Model m = augment(base, k, strategy, derive_seed(seed, 2 * k), train_lambda);
    TrainConfig tc = train_cfg;
    tc.seed = derive_seed(seed, 2 * k + 1);
    if (tc.log) tc.log_prefix += "K=" + std::to_string(k) + " ";
    train(m, data.train, data.val, tc);
    RankSweepRow row;
    row.strategy = strategy;
    row.rank = k;
    row.train_f1 = train_f1(m, data.train);
    row.val_f1 = train_f1(m, data.val);
    row.test_f1 = train_f1(m, data.test);
    const double score = on_validation ? row.val_f1 : row.train_f1;
    if (score > best) {
      best = score;
      sweep.selected = sweep.rows.size();
      sweep.model = std::move(m);
    }
    sweep.rows.push_back(row);
  }
  return sweep;
}

std::vector<StorageRow> storage_plans(const Model& base, std::size_t n_new,
                                      const std::vector<std::size_t>& ranks) {
  const std::uint64_t p = count_params(base).base_with_diagonal;
  const std::string n = std::to_string(n_new);
  std::vector<StorageRow> rows{{"base", p}, {"base+" + n + "x_finetune", p * (1 + n_new)}};
  std::vector<std::size_t> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (std::size_t k : sorted) {
    const std::uint64_t aux = count_params(augment(base, k, Strategy::is2, 0)).aux;
    rows.push_back({"base+" + n + "x_aux_K" + std::to_string(k), p + n_new * aux});
  }
  return rows;
}

ExperimentReport run_setup1(const std::vector<EventStream>& streams, const ExperimentConfig& cfg) {
  validate(cfg);
  const auto t0 = Clock::now();
  const Topology topo = cfg.resolved_topology();
  std::vector<int> targets = cfg.targets;
  if (targets.empty())
    for (int s : stock_ids(streams)) targets.push_back(s);
  const std::set<int> available = stock_ids(streams);
  for (int s : targets)
    if (!available.count(s)) throw ConfigError("target stock " + std::to_string(s) + " not in data");
  if (available.size() < 2) throw ConfigError("setup 1 needs at least two stocks");

  std::vector<Setup1Split> splits;
  for (int s : targets) splits.push_back(split_setup1(streams, s, cfg.train_last_day, cfg.window));

  const std::size_t n_tasks = targets.size() * cfg.runs;
  auto outs = run_tasks(n_tasks, cfg, [&](std::size_t i, TaskOutput& out, std::ostream* log) {
    const Setup1Split& sp = splits[i / cfg.runs];
    const std::size_t run = i % cfg.runs;
    const std::string section = "stock" + std::to_string(sp.target);
    const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(sp.target) * 1000 + run);
    const std::string tag = "[" + section + " run " + std::to_string(run) + " ";

    Model base = build(topo, role_seed(seed, base_init));
    train(base, sp.old_data.train, sp.old_data.val, with_seed(cfg, role_seed(seed, base_train), log, tag + "base] "));
    out.records.push_back(record(section, run, "base", 0, base, sp.new_data.train, sp.new_data.test));

    Model ft = base;
    train(ft, sp.new_data.train, sp.new_data.val, with_seed(cfg, role_seed(seed, finetune_train), log, tag + "finetune] "));
    out.records.push_back(record(section, run, "finetune", 0, ft, sp.new_data.train, sp.new_data.test));

    for (Strategy s : cfg.strategies) {
      RankSweep sw = rank_sweep(base, sp.new_data, cfg.ranks, s,
                                with_seed(cfg, 0, log, tag + aux_arm(s) + "] "), sweep_seed(seed, s),
                                cfg.select_on_validation, cfg.train_lambda);
      for (RankSweepRow row : sw.rows) {
        row.section = section;
        row.run = run;
        out.sweep.push_back(row);
      }
      out.records.push_back(record(section, run, aux_arm(s), sw.rows[sw.selected].rank, sw.model,
                                   sp.new_data.train, sp.new_data.test));
    }

    if (cfg.joint_arm) {
      Model joint = build(topo, role_seed(seed, joint_init));
      train(joint, sp.joint.train, sp.joint.val, with_seed(cfg, role_seed(seed, joint_train), log, tag + "joint] "));
      out.records.push_back(record(section, run, "joint", 0, joint, filter_stock(sp.joint.train, sp.target),
                                   filter_stock(sp.joint.test, sp.target)));
    }
  });

  ExperimentReport report;
  report.setup = "setup1";
  merge(report, outs);
  fill_complexity(report, build(topo, cfg.seed), cfg, 1);
  report.seconds = since(t0);
  return report;
}

ExperimentReport run_setup2(const std::vector<EventStream>& streams, const ExperimentConfig& cfg) {
  validate(cfg);
  const auto t0 = Clock::now();
  const Topology topo = cfg.resolved_topology();
  const std::set<int> old_set(cfg.old_stocks.begin(), cfg.old_stocks.end());
  const std::set<int> new_set(cfg.new_stocks.begin(), cfg.new_stocks.end());
  const Setup2Split sp = split_setup2(streams, old_set, new_set, cfg.train_last_day, cfg.window);

  auto outs = run_tasks(cfg.runs, cfg, [&](std::size_t run, TaskOutput& out, std::ostream* log) {
    const std::uint64_t seed = derive_seed(cfg.seed, run);
    const std::string tag = "[run " + std::to_string(run) + " ";
    Model base = build(topo, role_seed(seed, base_init));
    train(base, sp.old_data.train, sp.old_data.val, with_seed(cfg, role_seed(seed, base_train), log, tag + "base] "));
    out.records.push_back(record("old", run, "base", 0, base, sp.old_data.train, sp.old_data.test));

    // Aggregate confusion per arm: old stocks always go through the base.
    std::map<std::string, ConfusionMatrix> all;
    std::map<std::string, std::vector<std::size_t>> ranks;
    std::vector<std::string> arms{"base", "finetune"};
    for (Strategy s : cfg.strategies) arms.push_back(aux_arm(s));
    const ConfusionMatrix& old_cm = out.records.back().confusion;
    for (const auto& arm : arms) all[arm] = old_cm;
    auto accumulate = [&](const std::string& arm, const ConfusionMatrix& cm) {
      for (std::size_t a = 0; a < kClasses; ++a)
        for (std::size_t b = 0; b < kClasses; ++b) all[arm].counts[a][b] += cm.counts[a][b];
    };

    for (std::size_t k = 0; k < sp.new_data.size(); ++k) {
      const auto& [stock, data] = sp.new_data[k];
      const std::string section = "stock" + std::to_string(stock);
      const std::uint64_t stock_seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(stock));
      out.records.push_back(record(section, run, "base", 0, base, data.train, data.test));
      accumulate("base", out.records.back().confusion);

      Model ft = base;
      train(ft, data.train, data.val,
            with_seed(cfg, role_seed(stock_seed, finetune_train), log, tag + section + " finetune] "));
      out.records.push_back(record(section, run, "finetune", 0, ft, data.train, data.test));
      accumulate("finetune", out.records.back().confusion);

      for (Strategy s : cfg.strategies) {
        RankSweep sw = rank_sweep(base, data, cfg.ranks, s,
                                  with_seed(cfg, 0, log, tag + section + " " + aux_arm(s) + "] "),
                                  sweep_seed(stock_seed, s), cfg.select_on_validation, cfg.train_lambda);
        for (RankSweepRow row : sw.rows) {
          row.section = section;
          row.run = run;
          out.sweep.push_back(row);
        }
        const std::size_t chosen = sw.rows[sw.selected].rank;
        out.records.push_back(record(section, run, aux_arm(s), chosen, sw.model, data.train, data.test));
        accumulate(aux_arm(s), out.records.back().confusion);
        ranks[aux_arm(s)].push_back(chosen);
      }
    }
    for (const auto& arm : arms) {
      RunRecord r;
      r.section = "all";
      r.run = run;
      r.arm = arm;
      r.rank = ranks[arm].empty() ? 0 : *std::max_element(ranks[arm].begin(), ranks[arm].end());
      r.confusion = all[arm];
      r.metrics = test_metrics(r.confusion);
      out.records.push_back(r);
    }
  });

  ExperimentReport report;
  report.setup = "setup2";
  merge(report, outs);
  fill_complexity(report, build(topo, cfg.seed), cfg, sp.new_data.size());
  report.seconds = since(t0);
  return report;
}

ExperimentReport run_online(const std::vector<EventStream>& streams, const ExperimentConfig& cfg) {
  validate(cfg);
  const auto t0 = Clock::now();
  const Topology topo = cfg.resolved_topology();
  const OnlineSplit sp = split_online(streams, cfg.online_base, cfg.online_adapt, cfg.online_test, cfg.window);
  const std::string section = "pooled";

  auto outs = run_tasks(cfg.runs, cfg, [&](std::size_t run, TaskOutput& out, std::ostream* log) {
    const std::uint64_t seed = derive_seed(cfg.seed, run);
    const std::string tag = "[run " + std::to_string(run) + " ";
    Model base = build(topo, role_seed(seed, base_init));
    train(base, sp.base.train, sp.base.val, with_seed(cfg, role_seed(seed, base_train), log, tag + "base] "));
    out.records.push_back(record(section, run, "base", 0, base, sp.adapt.train, sp.adapt.test));

    Model ft = base;
    train(ft, sp.adapt.train, sp.adapt.val, with_seed(cfg, role_seed(seed, finetune_train), log, tag + "finetune] "));
    out.records.push_back(record(section, run, "finetune", 0, ft, sp.adapt.train, sp.adapt.test));

    for (Strategy s : cfg.strategies) {
      RankSweep sw = rank_sweep(base, sp.adapt, cfg.ranks, s, with_seed(cfg, 0, log, tag + aux_arm(s) + "] "),
                                sweep_seed(seed, s), cfg.select_on_validation, cfg.train_lambda);
      for (RankSweepRow row : sw.rows) {
        row.section = section;
        row.run = run;
        out.sweep.push_back(row);
      }
      out.records.push_back(record(section, run, aux_arm(s), sw.rows[sw.selected].rank, sw.model,
                                   sp.adapt.train, sp.adapt.test));
    }
  });

  ExperimentReport report;
  report.setup = "online";
  merge(report, outs);
  fill_complexity(report, build(topo, cfg.seed), cfg, 1);
  report.seconds = since(t0);
  return report;
}

std::vector<std::string> ExperimentReport::sections() const {
  std::vector<std::string> out;
  for (const RunRecord& r : records)
    if (std::find(out.begin(), out.end(), r.section) == out.end()) out.push_back(r.section);
  return out;
}

std::vector<SummaryRow> ExperimentReport::summary() const {
  std::vector<SummaryRow> rows;
  for (const std::string& section : sections()) {
    std::vector<std::string> arms;
    for (const RunRecord& r : records)
      if (r.section == section && std::find(arms.begin(), arms.end(), r.arm) == arms.end())
        arms.push_back(r.arm);
    for (const std::string& arm : arms) {
      std::vector<double> acc, prec, rec, f1;
      SummaryRow row;
      row.section = section;
      row.arm = arm;
      for (const RunRecord& r : records) {
        if (r.section != section || r.arm != arm) continue;
        acc.push_back(r.metrics.accuracy);
        prec.push_back(r.metrics.precision);
        rec.push_back(r.metrics.recall);
        f1.push_back(r.metrics.f1);
        if (arm.starts_with("aux_")) row.ranks.push_back(r.rank);
      }
      row.runs = f1.size();
      row.accuracy = summarize(acc);
      row.precision = summarize(prec);
      row.recall = summarize(rec);
      row.f1 = summarize(f1);
      rows.push_back(row);
    }
  }
  return rows;
}

double ExperimentReport::mean_f1(const std::string& section, const std::string& arm) const {
  for (const SummaryRow& r : summary())
    if (r.section == section && r.arm == arm) return r.f1.mean;
  throw StateError("no results for arm '" + arm + "' in section '" + section + "'");
}

std::string ExperimentReport::runs_csv() const {
  std::string s = "section,run,arm,rank,train_f1,accuracy,precision,recall,f1";
  for (std::size_t a = 0; a < kClasses; ++a)
    for (std::size_t b = 0; b < kClasses; ++b) s += ",c" + std::to_string(a) + std::to_string(b);
  s += "\n";
  for (const RunRecord& r : records) {
    s += r.section + "," + std::to_string(r.run) + "," + r.arm + "," + std::to_string(r.rank) + "," +
         fmt("%.10f", r.train_f1) + "," + fmt("%.10f", r.metrics.accuracy) + "," +
         fmt("%.10f", r.metrics.precision) + "," + fmt("%.10f", r.metrics.recall) + "," +
         fmt("%.10f", r.metrics.f1);
    for (std::size_t a = 0; a < kClasses; ++a)
      for (std::size_t b = 0; b < kClasses; ++b) s += "," + std::to_string(r.confusion.counts[a][b]);
    s += "\n";
  }
  return s;
}

std::string ExperimentReport::summary_csv() const {
  std::string s =
      "section,arm,runs,accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,ranks\n";
  auto cell = [](const Summary& m) {
    return fmt("%.10f", m.mean) + "," + (m.std ? fmt("%.10f", *m.std) : std::string());
  };
  for (const SummaryRow& r : summary()) {
    std::string ranks;
    for (std::size_t k : r.ranks) ranks += (ranks.empty() ? "" : " ") + std::to_string(k);
    s += r.section + "," + r.arm + "," + std::to_string(r.runs) + "," + cell(r.accuracy) + "," +
         cell(r.precision) + "," + cell(r.recall) + "," + cell(r.f1) + "," + ranks + "\n";
  }
  return s;
}

std::string ExperimentReport::sweep_csv() const {
  std::string s = "section,run,strategy,rank,train_f1,val_f1,test_f1\n";
  for (const RankSweepRow& r : sweep)
    s += r.section + "," + std::to_string(r.run) + "," + std::string(strategy_name(r.strategy)) + "," +
         std::to_string(r.rank) + "," + fmt("%.10f", r.train_f1) + "," + fmt("%.10f", r.val_f1) + "," +
         fmt("%.10f", r.test_f1) + "\n";
  return s;
}

std::string ExperimentReport::storage_csv() const {
  std::string s = "plan,params\n";
  for (const StorageRow& r : storage) s += r.plan + "," + std::to_string(r.params) + "\n";
  return s;
}

std::string ExperimentReport::text() const {
  std::ostringstream o;
  o << setup << " | topology " << topology << "\n";
  auto pm = [](const Summary& m) {
    return m.std ? fmt("%.4f", m.mean) + " +- " + fmt("%.4f", *m.std) : fmt("%.4f", m.mean);
  };
  for (const std::string& section : sections()) {
    o << "\n" << section << "\n";
    char head[160];
    std::snprintf(head, sizeof head, "  %-10s %-18s %-18s %-18s %-18s %s\n", "arm", "accuracy", "precision",
                  "recall", "f1", "K");
    o << head;
    for (const SummaryRow& r : summary()) {
      if (r.section != section) continue;
      std::string ranks;
      for (std::size_t k : r.ranks) ranks += (ranks.empty() ? "" : ",") + std::to_string(k);
      char line[200];
      std::snprintf(line, sizeof line, "  %-10s %-18s %-18s %-18s %-18s %s\n", r.arm.c_str(),
                    pm(r.accuracy).c_str(), pm(r.precision).c_str(), pm(r.recall).c_str(),
                    pm(r.f1).c_str(), ranks.c_str());
      o << line;
    }
  }
  o << "\nparameters: base " << base_params << ", aux at largest K " << aux_params_max << "\n";
  o << "MACs per sample: base " << base_macs << ", adapted (is2, largest K) " << adapted_macs_max
    << ", folded " << base_macs << "\n";
  o << "storage:\n";
  for (const StorageRow& r : storage) o << "  " << r.plan << " " << r.params << "\n";
  o << "runtime: " << fmt("%.1f", seconds) << " s\n";
  return o.str();
}

}  // namespace tabl
