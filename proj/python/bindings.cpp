// Python bindings for the core library. Matrices cross the boundary as
// float64 numpy arrays; batches of inputs as (N, D, T) arrays.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "tabl/adapters.hpp"
#include "tabl/config.hpp"
#include "tabl/data.hpp"
#include "tabl/errors.hpp"
#include "tabl/experiments.hpp"
#include "tabl/metrics.hpp"
#include "tabl/model_io.hpp"
#include "tabl/network.hpp"
#include "tabl/training.hpp"

namespace py = pybind11;
using namespace tabl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array, got " + std::to_string(a.ndim()) + "-d");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  if (r == 0 || c == 0) throw ShapeError("empty array");
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

std::vector<Matrix> to_batch(const Array& a) {
  if (a.ndim() == 2) return {to_matrix(a)};
  if (a.ndim() != 3) throw ShapeError("expected a (N, D, T) array");
  const auto n = static_cast<std::size_t>(a.shape(0)), r = static_cast<std::size_t>(a.shape(1)),
             c = static_cast<std::size_t>(a.shape(2));
  std::vector<Matrix> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = a.data() + i * r * c;
    out.emplace_back(r, c, std::vector<double>(p, p + r * c));
  }
  return out;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), a.mutable_data());
  return a;
}

Array stack(const std::vector<Matrix>& ms) {
  if (ms.empty()) return Array(std::vector<py::ssize_t>{0, 0, 0});
  const std::size_t r = ms[0].rows(), c = ms[0].cols();
  Array a({ms.size(), r, c});
  double* p = a.mutable_data();
  for (const Matrix& m : ms) p = std::copy(m.values().begin(), m.values().end(), p);
  return a;
}

Topology resolve_topology(const std::string& spec, std::size_t window) {
  Topology t = spec.starts_with("[") ? parse_bilinear_topology(spec) : lookup_topology(spec);
  t.input_t = window;
  return t;
}

py::dict metrics_dict(const ConfusionMatrix& cm) {
  const Metrics m = metrics(cm);
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  d["f1"] = m.f1;
  py::list rows;
  for (const auto& row : cm.counts) rows.append(py::make_tuple(row[0], row[1], row[2]));
  d["confusion"] = rows;
  const auto w = win_rate(cm);
  d["win_rate"] = w ? py::cast(*w) : py::none();
  return d;
}

WindowConfig window_config(std::size_t t, std::size_t horizon, double theta) {
  WindowConfig w;
  w.t = t;
  w.horizon = horizon;
  w.theta = theta;
  return w;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Temporal-attention bilinear networks with low-rank auxiliary adapters";

  auto& base_error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base_error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base_error.ptr());
  py::register_exception<ParseError>(m, "ParseError", base_error.ptr());
  py::register_exception<StateError>(m, "StateError", base_error.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base_error.ptr());
  py::register_exception<DomainError>(m, "DomainError", base_error.ptr());
  py::register_exception<IoError>(m, "IoError", base_error.ptr());

  // Models ------------------------------------------------------------------

  py::class_<Model>(m, "Model")
      .def_property_readonly("topology", [](const Model& md) { return describe(md.topology); })
      .def_property_readonly("input_shape", [](const Model& md) {
        return py::make_tuple(md.topology.input_d, md.topology.input_t);
      })
      .def_property_readonly("classes", &Model::classes)
      .def_property_readonly("rank", [](const Model& md) { return md.rank; })
      .def_property_readonly("adapted", &Model::adapted)
      .def_property_readonly("strategy", [](const Model& md) { return std::string(strategy_name(md.strategy)); })
      .def_property_readonly("base_hash", [](const Model& md) { return content_hash(md); })
      .def(
          "predict",
          [](const Model& md, const Array& x) {
            const std::vector<Matrix> xs = to_batch(x);
            std::vector<Matrix> out;
            {
              py::gil_scoped_release release;
              out = predict(md, xs);
            }
            if (x.ndim() == 2) return to_array(out.front());
            return stack(out);
          },
          py::arg("x"), "Class probabilities for a (D, T) input or an (N, D, T) batch.")
      .def(
          "predict_labels",
          [](const Model& md, const Array& x) { return predicted_labels(predict(md, to_batch(x))); },
          py::arg("x"))
      .def(
          "param_counts",
          [](const Model& md) {
            const ParamLedger l = count_params(md);
            py::dict d;
            d["base_trainable"] = l.base_trainable;
            d["base_with_diagonal"] = l.base_with_diagonal;
            d["aux"] = l.aux;
            return d;
          })
      .def("count_macs", [](const Model& md, std::uint64_t batch) { return count_macs(md, batch).total; },
           py::arg("batch") = 1, "Closed-form forward multiply-accumulates for a batch.")
      .def(
          "measure_macs",
          [](const Model& md, const Array& x) {
            OpCounter c;
            predict(md, to_batch(x), &c);
            return c.mac_count;
          },
          py::arg("x"), "Multiply-accumulates counted while running predict.")
      .def("save", [](const Model& md, const std::filesystem::path& p) { save_model(md, p); }, py::arg("path"))
      .def("save_aux", [](const Model& md, const std::filesystem::path& p) { save_aux(md, p); }, py::arg("path"))
      .def("to_bytes", [](const Model& md) { return py::bytes(serialize_model(md)); })
      .def("copy", [](const Model& md) { return Model(md); });

  m.def("topologies", &registry_names, "Names of the built-in topologies.");
  m.def(
      "build", [](const std::string& topology, std::uint64_t seed, std::size_t window) {
        return build(resolve_topology(topology, window), seed);
      },
      py::arg("topology") = "compact", py::arg("seed") = 1, py::arg("window") = 10,
      "Fresh model from a registry name or a bracket list such as '[[20,5],[3,1]]'.");
  m.def(
      "augment",
      [](const Model& base, std::size_t rank, const std::string& strategy, std::uint64_t seed, bool train_lambda) {
        return augment(base, rank, parse_strategy(strategy), seed, train_lambda);
      },
      py::arg("base"), py::arg("rank"), py::arg("strategy") = "is2", py::arg("seed") = 1,
      py::arg("train_lambda") = false, "Frozen copy of `base` with rank-K auxiliary connections.");
  m.def("fold", &folded, py::arg("model"), "Plain model with the auxiliary products merged in.");
  m.def("base_of", &base_of, py::arg("model"));
  m.def("load", [](const std::filesystem::path& p) { return load_model(p); }, py::arg("path"));
  m.def("load_aux", [](const Model& base, const std::filesystem::path& p) { return load_aux(base, p); },
        py::arg("base"), py::arg("path"));
  m.def("from_bytes", [](const py::bytes& b) { return deserialize_model(std::string(b)); }, py::arg("data"));

  m.def(
      "layer_macs",
      [](std::size_t d, std::size_t t, std::size_t d_out, std::size_t t_out, std::size_t rank,
         const std::string& strategy, std::uint64_t batch, bool attention) {
        const LayerDims dims{d, t, d_out, t_out};
        MacBreakdown b;
        if (strategy == "base") b = base_macs(dims, batch, attention);
        else if (parse_strategy(strategy) == Strategy::is1) b = is1_macs(dims, rank, batch, attention);
        else b = is2_macs(dims, rank, batch, attention);
        py::dict out;
        out["feature"] = b.feature;
        out["attention"] = b.attention;
        out["output"] = b.output;
        out["materialize"] = b.materialize;
        out["total"] = b.total();
        return out;
      },
      py::arg("d"), py::arg("t"), py::arg("d_out"), py::arg("t_out"), py::arg("rank") = 0,
      py::arg("strategy") = "base", py::arg("batch") = 1, py::arg("attention") = true,
      "Closed-form MACs of one bilinear layer.");

  // Data --------------------------------------------------------------------

  py::class_<EventStream>(m, "EventStream")
      .def_readonly("stock", &EventStream::stock)
      .def_readonly("day", &EventStream::day)
      .def("__len__", [](const EventStream& s) { return s.events.size(); })
      .def_property_readonly("features", [](const EventStream& s) {
        Matrix f(s.events.size(), kLobFeatures);
        for (std::size_t i = 0; i < s.events.size(); ++i)
          std::copy(s.events[i].features.begin(), s.events[i].features.end(), f.row(i).begin());
        return to_array(f);
      })
      .def_property_readonly("mid", [](const EventStream& s) {
        std::vector<double> v;
        for (const LobEvent& e : s.events) v.push_back(e.mid);
        return v;
      });

  m.def(
      "generate_synthetic",
      [](std::size_t stocks, std::size_t days, std::size_t events_per_day, std::uint64_t seed, int drift_day) {
        SyntheticLobConfig c;
        c.stocks = stocks;
        c.days = days;
        c.events_per_day = events_per_day;
        c.seed = seed;
        c.drift_day = drift_day;
        return generate_synthetic(c);
      },
      py::arg("stocks") = 5, py::arg("days") = 10, py::arg("events_per_day") = 200, py::arg("seed") = 1,
      py::arg("drift_day") = -1, "Synthetic limit order book streams, one per (stock, day).");
  m.def("write_csv", [](const std::vector<EventStream>& s) { return write_native_csv(s); }, py::arg("streams"));
  m.def("read_csv", [](const std::string& text) { return read_native_csv(text); }, py::arg("text"));

  py::class_<SampleSet>(m, "SampleSet")
      .def("__len__", &SampleSet::size)
      .def_property_readonly("x", [](const SampleSet& s) { return stack(s.xs); })
      .def_readonly("labels", &SampleSet::labels)
      .def_property_readonly("best_ask", [](const SampleSet& s) {
        std::vector<double> v;
        for (const SampleMeta& mm : s.meta) v.push_back(mm.best_ask);
        return v;
      })
      .def_property_readonly("best_bid", [](const SampleSet& s) {
        std::vector<double> v;
        for (const SampleMeta& mm : s.meta) v.push_back(mm.best_bid);
        return v;
      })
      .def("class_counts", &SampleSet::class_counts);

  py::class_<DatasetSplit>(m, "DatasetSplit")
      .def_readonly("train", &DatasetSplit::train)
      .def_readonly("val", &DatasetSplit::val)
      .def_readonly("test", &DatasetSplit::test);

  m.def(
      "make_split",
      [](const std::vector<EventStream>& streams, const std::set<int>& stocks, std::pair<int, int> train_days,
         std::pair<int, int> test_days, std::size_t window, std::size_t horizon, double theta) {
        const auto tr = select(streams, stocks, {train_days.first, train_days.second});
        const auto te = select(streams, stocks, {test_days.first, test_days.second});
        return make_split(tr, te, window_config(window, horizon, theta));
      },
      py::arg("streams"), py::arg("stocks"), py::arg("train_days") = std::pair{0, 6},
      py::arg("test_days") = std::pair{7, 9}, py::arg("window") = 10, py::arg("horizon") = 10,
      py::arg("theta") = 0.002,
      "Windows for the selected stocks; z-score statistics come from the training days.");

  // Training ----------------------------------------------------------------

  m.def(
      "train",
      [](Model& model, const SampleSet& train_set, const SampleSet& val_set, std::size_t max_epochs,
         std::size_t batch_size, double lr, std::uint64_t seed) {
        TrainConfig c;
        c.max_epochs = max_epochs;
        c.batch_size = batch_size;
        c.lr = lr;
        c.seed = seed;
        TrainingReport r;
        {
          py::gil_scoped_release release;
          r = train(model, train_set, val_set, c);
        }
        py::dict d;
        d["best_epoch"] = r.best_epoch;
        d["epochs_run"] = r.epochs_run;
        d["stop_reason"] = r.stop_reason;
        d["final_lr"] = r.final_lr;
        d["csv"] = r.csv();
        return d;
      },
      py::arg("model"), py::arg("train_set"), py::arg("val_set"), py::arg("max_epochs") = 200,
      py::arg("batch_size") = 256, py::arg("lr") = 0.01, py::arg("seed") = 1,
      "Trains the trainable parameters in place and restores the best-validation checkpoint.");
  m.def(
      "evaluate",
      [](const Model& model, const SampleSet& set) {
        const auto pred = predicted_labels(predict(model, set.xs));
        return metrics_dict(confusion(set.labels, pred));
      },
      py::arg("model"), py::arg("samples"));
  m.def(
      "gradient_check",
      [](Model& model, const Array& x, int label) {
        return gradient_check(model, to_matrix(x), label, WeightedEntropyLoss({1, 1, 1}, 1.0)).max_rel_error;
      },
      py::arg("model"), py::arg("x"), py::arg("label"),
      "Max relative error between backprop and central differences (h = 1e-5).");

  // Metrics and trading -----------------------------------------------------

  m.def(
      "metrics", [](const std::vector<int>& truth, const std::vector<int>& pred) {
        return metrics_dict(confusion(truth, pred));
      },
      py::arg("truth"), py::arg("predicted"));
  m.def(
      "simulate_trading",
      [](const std::vector<int>& pred, const std::vector<double>& ask, const std::vector<double>& bid,
         bool compounding) {
        const TradingResult r =
            simulate_trading(pred, ask, bid, compounding ? Compounding::compounded : Compounding::simple);
        py::list trades;
        for (const Trade& t : r.log.trades) {
          py::dict d;
          d["entry_index"] = t.entry_index;
          d["entry_price"] = t.entry_price;
          d["exit_index"] = t.exit_index;
          d["exit_price"] = t.exit_price;
          d["return"] = t.ret;
          d["forced_close"] = t.forced_close;
          trades.append(d);
        }
        py::dict out;
        out["trades"] = trades;
        out["cumulative"] = r.cumulative;
        out["total"] = r.total();
        return out;
      },
      py::arg("predictions"), py::arg("best_ask"), py::arg("best_bid"), py::arg("compounding") = true,
      "Long-only backtest: buy at the ask on up, sell at the bid on down.");

  // Experiments -------------------------------------------------------------

  m.def(
      "run_experiment",
      [](const std::string& setup, const std::vector<EventStream>& streams, const std::string& config) {
        const ExperimentConfig c = ExperimentConfig::from_config(KeyValueConfig::parse(config));
        ExperimentReport r;
        {
          py::gil_scoped_release release;
          if (setup == "setup1") r = run_setup1(streams, c);
          else if (setup == "setup2") r = run_setup2(streams, c);
          else if (setup == "online") r = run_online(streams, c);
          else throw ConfigError("unknown setup '" + setup + "' (setup1, setup2, online)");
        }
        py::dict d;
        d["runs"] = r.runs_csv();
        d["summary"] = r.summary_csv();
        d["rank_sweep"] = r.sweep_csv();
        d["storage"] = r.storage_csv();
        d["report"] = r.text();
        py::dict f1;
        for (const SummaryRow& row : r.summary()) f1[py::str(row.section + "/" + row.arm)] = row.f1.mean;
        d["mean_f1"] = f1;
        return d;
      },
      py::arg("setup"), py::arg("streams"), py::arg("config") = "",
      "Runs setup1, setup2 or online; `config` uses the same key = value syntax as the CLI.");
}
