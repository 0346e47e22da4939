#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tabl/linalg.hpp"

namespace tabl {

inline constexpr int kStationary = 0;
inline constexpr int kUp = 1;
inline constexpr int kDown = 2;
inline constexpr std::size_t kClasses = 3;

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kClasses>, kClasses> counts{};

  void add(int truth, int predicted);
  std::uint64_t total() const;
  std::uint64_t operator()(int truth, int predicted) const { return counts[truth][predicted]; }
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted);

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double f1 = 0.0;         // mean of per-class F1
  std::array<double, kClasses> class_precision{};
  std::array<double, kClasses> class_recall{};
  std::array<double, kClasses> class_f1{};
};

Metrics metrics(const ConfusionMatrix& cm);

/// Correct up/down calls over all up/down calls, in percent; absent when the
/// model never predicts a move.
std::optional<double> win_rate(const ConfusionMatrix& cm);

int argmax_label(const Matrix& probs);
std::vector<int> predicted_labels(std::span<const Matrix> outputs);

struct Trade {
  std::size_t entry_index = 0;
  double entry_price = 0.0;  // best ask
  std::size_t exit_index = 0;
  double exit_price = 0.0;   // best bid
  double ret = 0.0;          // exit / entry - 1
  bool forced_close = false;  // closed at the end of the series
};

struct TradeLog {
  std::vector<Trade> trades;
};

enum class Compounding { compounded, simple };

struct TradingResult {
  TradeLog log;
  std::vector<double> cumulative;  // realized cumulative return after each event
  double total() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
};

/// Long-only, one share, one position: enter at the ask on "up", exit at
/// the bid on "down", force-close at the last bid.
TradingResult simulate_trading(std::span<const int> predictions, std::span<const double> best_ask,
                               std::span<const double> best_bid,
                               Compounding mode = Compounding::compounded);

double cumulative_return(std::span<const double> returns, Compounding mode);

std::string trades_csv(const TradeLog& log);
std::string curve_csv(const TradingResult& result);
std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace tabl
