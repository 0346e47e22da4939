#include "tabl/metrics.hpp"

#include <cstdio>

#include "tabl/errors.hpp"

namespace tabl {

namespace {

void check_label(int label, const char* what) {
  if (label < 0 || label >= static_cast<int>(kClasses)) {
    throw DomainError(std::string(what) + " label " + std::to_string(label) +
                      " is outside {0, 1, 2}");
  }
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void ConfusionMatrix::add(int truth, int predicted) {
  check_label(truth, "true");
  check_label(predicted, "predicted");
  ++counts[truth][predicted];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts)
    for (auto c : row) n += c;
  return n;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("confusion: " + std::to_string(truth.size()) + " labels vs " +
                     std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  Metrics m;
  const double total = static_cast<double>(cm.total());
  double correct = 0.0;
  for (std::size_t c = 0; c < kClasses; ++c) {
    double tp = static_cast<double>(cm.counts[c][c]);
    double predicted = 0.0, actual = 0.0;
    for (std::size_t r = 0; r < kClasses; ++r) {
      predicted += static_cast<double>(cm.counts[r][c]);
      actual += static_cast<double>(cm.counts[c][r]);
    }
    correct += tp;
    m.class_precision[c] = ratio(tp, predicted);
    m.class_recall[c] = ratio(tp, actual);
    m.class_f1[c] = ratio(2.0 * m.class_precision[c] * m.class_recall[c],
                          m.class_precision[c] + m.class_recall[c]);
    m.precision += m.class_precision[c] / kClasses;
    m.recall += m.class_recall[c] / kClasses;
    m.f1 += m.class_f1[c] / kClasses;
  }
  m.accuracy = ratio(correct, total);
  return m;
}

std::optional<double> win_rate(const ConfusionMatrix& cm) {
  std::uint64_t calls = 0;
  for (std::size_t r = 0; r < kClasses; ++r) calls += cm.counts[r][kUp] + cm.counts[r][kDown];
  if (calls == 0) return std::nullopt;
  const double hits = static_cast<double>(cm.counts[kUp][kUp] + cm.counts[kDown][kDown]);
  return hits / static_cast<double>(calls) * 100.0;
}

int argmax_label(const Matrix& probs) {
  if (probs.size() != kClasses) {
    throw ShapeError("expected a 3-class output, got " + probs.shape_string());
  }
  auto v = probs.values();
  int best = 0;
  for (int c = 1; c < static_cast<int>(kClasses); ++c)
    if (v[c] > v[best]) best = c;
  return best;
}

std::vector<int> predicted_labels(std::span<const Matrix> outputs) {
  std::vector<int> out;
  out.reserve(outputs.size());
  for (const Matrix& m : outputs) out.push_back(argmax_label(m));
  return out;
}

double cumulative_return(std::span<const double> returns, Compounding mode) {
  if (mode == Compounding::simple) {
    double s = 0.0;
    for (double r : returns) s += r;
    return s;
  }
  double growth = 1.0;
  for (double r : returns) growth *= 1.0 + r;
  return growth - 1.0;
}

TradingResult simulate_trading(std::span<const int> predictions, std::span<const double> best_ask,
                               std::span<const double> best_bid, Compounding mode) {
  const std::size_t n = predictions.size();
  if (best_ask.size() != n || best_bid.size() != n) {
    throw ShapeError("simulate_trading: " + std::to_string(n) + " predictions vs " +
                     std::to_string(best_ask.size()) + " asks / " +
                     std::to_string(best_bid.size()) + " bids");
  }
  TradingResult result;
  result.cumulative.assign(n, 0.0);
  std::vector<double> returns;
  std::optional<Trade> open;
  auto close = [&](std::size_t i, bool forced) {
    Trade t = *open;
    t.exit_index = i;
    t.exit_price = best_bid[i];
    t.ret = (t.exit_price / t.entry_price) - 1;
    t.forced_close = forced;
    returns.push_back(t.ret);
    result.log.trades.push_back(t);
    open.reset();
  };
  for (std::size_t i = 0; i < n; ++i) {
    check_label(predictions[i], "predicted");
    if (!open && predictions[i] == kUp && i + 1 < n) {
      open = Trade{i, best_ask[i], 0, 0.0, 0.0, false};
    } else if (open && predictions[i] == kDown) {
      close(i, false);
    }
    if (open && i + 1 == n) close(i, true);
    result.cumulative[i] = cumulative_return(returns, mode);
  }
  return result;
}

std::string trades_csv(const TradeLog& log) {
  std::string out = "entry_index,entry_price,exit_index,exit_price,return,forced_close\n";
  for (const Trade& t : log.trades) {
    out += std::to_string(t.entry_index) + "," + format_double(t.entry_price) + "," +
           std::to_string(t.exit_index) + "," + format_double(t.exit_price) + "," +
           format_double(t.ret) + "," + (t.forced_close ? "1" : "0") + "\n";
  }
  return out;
}

std::string curve_csv(const TradingResult& result) {
  std::string out = "index,cumulative_return_pct\n";
  for (std::size_t i = 0; i < result.cumulative.size(); ++i)
    out += std::to_string(i) + "," + format_double(result.cumulative[i] * 100.0) + "\n";
  return out;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string out = "true\\predicted,0,1,2\n";
  for (std::size_t r = 0; r < kClasses; ++r) {
    out += std::to_string(r);
    for (std::size_t c = 0; c < kClasses; ++c) out += "," + std::to_string(cm.counts[r][c]);
    out += "\n";
  }
  return out;
}

}  // namespace tabl
