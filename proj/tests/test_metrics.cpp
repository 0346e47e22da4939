#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>

#include "tabl/errors.hpp"
#include "tabl/metrics.hpp"
#include "tabl/rng.hpp"

using namespace tabl;

namespace {

ConfusionMatrix from_rows(std::array<std::array<std::uint64_t, 3>, 3> rows) {
  ConfusionMatrix cm;
  cm.counts = rows;
  return cm;
}

std::string pct4(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.4f%%", fraction * 100.0);
  return buf;
}

// Per-class F1 as 2TP / (2TP + FP + FN), counted straight from label pairs.
double oracle_macro_f1(const std::vector<int>& truth, const std::vector<int>& pred) {
  double f1 = 0.0;
  for (int c = 0; c < 3; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (pred[i] == c && truth[i] == c) ++tp;
      if (pred[i] == c && truth[i] != c) ++fp;
      if (pred[i] != c && truth[i] == c) ++fn;
    }
    f1 += (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
  }
  return f1 / 3.0;
}

}  // namespace

TEST(Metrics, DiagonalIsPerfect) {
  const Metrics m = metrics(from_rows({{{4, 0, 0}, {0, 7, 0}, {0, 0, 2}}}));
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(m.precision, 1.0);
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.f1, 1.0);
}

TEST(Metrics, HandExample) {
  const ConfusionMatrix cm = from_rows({{{5, 0, 0}, {0, 0, 5}, {0, 0, 0}}});
  const Metrics m = metrics(cm);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(m.class_recall[1], 0.0);
  EXPECT_DOUBLE_EQ(m.class_precision[2], 0.0);  // 0/5
  EXPECT_DOUBLE_EQ(m.class_recall[2], 0.0);     // 0/0 -> 0
  EXPECT_DOUBLE_EQ(m.f1, 1.0 / 3.0);
  EXPECT_EQ(cm.total(), 10u);
}

TEST(Metrics, MatchesIndependentF1) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> truth, pred;
    const std::size_t n = 1 + rng.below(300);
    for (std::size_t i = 0; i < n; ++i) {
      truth.push_back(static_cast<int>(rng.below(3)));
      pred.push_back(rng.uniform() < 0.6 ? truth.back() : static_cast<int>(rng.below(3)));
    }
    const ConfusionMatrix cm = confusion(truth, pred);
    EXPECT_EQ(cm.total(), n);
    const Metrics m = metrics(cm);
    EXPECT_NEAR(m.f1, oracle_macro_f1(truth, pred), 1e-12);
    for (double v : {m.accuracy, m.precision, m.recall, m.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Metrics, ChanceLevel) {
  Rng rng(9);
  std::vector<int> truth, pred;
  for (int i = 0; i < 30000; ++i) {
    truth.push_back(i % 3);
    pred.push_back(static_cast<int>(rng.below(3)));
  }
  EXPECT_NEAR(metrics(confusion(truth, pred)).accuracy, 1.0 / 3.0, 0.02);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(confusion(std::vector<int>{0, 1}, std::vector<int>{0}), ShapeError);
  EXPECT_THROW(confusion(std::vector<int>{3}, std::vector<int>{0}), DomainError);
  EXPECT_THROW(argmax_label(Matrix(2, 1)), ShapeError);
}

TEST(WinRate, Fixture) {
  EXPECT_FALSE(win_rate(from_rows({{{3, 0, 0}, {2, 0, 0}, {1, 0, 0}}})).has_value());
  const auto w = win_rate(from_rows({{{0, 2, 0}, {0, 3, 0}, {0, 0, 3}}}));
  ASSERT_TRUE(w.has_value());
  EXPECT_DOUBLE_EQ(*w, 75.0);
}

TEST(Trading, HandPath) {
  //                      0    1    2    3    4    5    6    7    8    9
  const std::vector<int> pred{0, 1, 0, 1, 2, 2, 1, 0, 0, 0};
  const std::vector<double> ask{100, 100, 101, 102, 103, 102, 104, 105, 106, 107};
  const std::vector<double> bid{99, 99.5, 100.5, 101, 101, 101.5, 103, 104, 105, 106};
  const TradingResult r = simulate_trading(pred, ask, bid);
  ASSERT_EQ(r.log.trades.size(), 2u);
  const Trade& a = r.log.trades[0];
  EXPECT_EQ(a.entry_index, 1u);
  EXPECT_EQ(a.entry_price, 100.0);
  EXPECT_EQ(a.exit_index, 4u);
  EXPECT_EQ(a.exit_price, 101.0);
  EXPECT_FALSE(a.forced_close);
  EXPECT_EQ(pct4(a.ret), "+1.0000%");
  const Trade& b = r.log.trades[1];
  EXPECT_EQ(b.entry_index, 6u);
  EXPECT_EQ(b.entry_price, 104.0);
  EXPECT_EQ(b.exit_index, 9u);
  EXPECT_EQ(b.exit_price, 106.0);
  EXPECT_TRUE(b.forced_close);
  EXPECT_EQ(pct4(b.ret), "+1.9231%");  // 2 / 104

  // Realized curve: flat until the first exit, then 1%, then both trades.
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.cumulative[i], 0.0);
  for (std::size_t i = 4; i < 9; ++i) EXPECT_EQ(pct4(r.cumulative[i]), "+1.0000%");
  EXPECT_EQ(pct4(r.total()), "+2.9423%");  // 1.01 * 106/104 - 1
  EXPECT_NEAR(r.total(), 1.01 * 106.0 / 104.0 - 1.0, 1e-15);

  const TradingResult s = simulate_trading(pred, ask, bid, Compounding::simple);
  EXPECT_NEAR(s.total(), 0.01 + 2.0 / 104.0, 1e-15);

  for (const Trade& t : r.log.trades) EXPECT_GT(t.exit_index, t.entry_index);
  EXPECT_EQ(trades_csv(r.log).substr(0, 65),
            "entry_index,entry_price,exit_index,exit_price,return,forced_close");
  const std::string curve = curve_csv(r);
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "index,cumulative_return_pct");
  EXPECT_NE(curve.find("\n4,1\n"), std::string::npos) << curve;
}

TEST(Trading, ReturnsFormulaVerbatim) {
  const TradingResult r = simulate_trading(std::vector<int>{1, 2}, std::vector<double>{100, 100},
                                           std::vector<double>{99, 101});
  ASSERT_EQ(r.log.trades.size(), 1u);
  EXPECT_EQ(r.log.trades[0].ret, (101.0 / 100.0) - 1);
  EXPECT_EQ(pct4(r.total()), "+1.0000%");
}

TEST(Trading, TwoOnePercentTradesCompound) {
  const TradingResult r =
      simulate_trading(std::vector<int>{1, 2, 1, 2}, std::vector<double>{100, 200, 100, 200},
                       std::vector<double>{50, 101, 50, 101});
  ASSERT_EQ(r.log.trades.size(), 2u);
  EXPECT_EQ(pct4(r.total()), "+2.0100%");
}

TEST(Trading, Degenerate) {
  const std::vector<double> p(5, 100.0);
  const TradingResult none = simulate_trading(std::vector<int>(5, 0), p, p);
  EXPECT_TRUE(none.log.trades.empty());
  EXPECT_EQ(none.total(), 0.0);
  // "up" at the final event opens nothing.
  EXPECT_TRUE(simulate_trading(std::vector<int>{0, 0, 0, 0, 1}, p, p).log.trades.empty());
  EXPECT_THROW(simulate_trading(std::vector<int>{0, 1}, p, p), ShapeError);
  EXPECT_TRUE(simulate_trading(std::vector<int>{}, std::vector<double>{}, std::vector<double>{})
                  .cumulative.empty());
}

TEST(Trading, RisingPathWithOracleLabelsNeverLoses) {
  std::vector<double> ask, bid;
  std::vector<int> pred;
  Rng rng(3);
  double mid = 100.0;
  for (int i = 0; i < 200; ++i) {
    mid += rng.uniform(0.0, 0.5);
    ask.push_back(mid + 0.01);
    bid.push_back(mid - 0.01);
  }
  // Oracle: buy when the bid 5 events later clears today's ask, sell otherwise.
  for (std::size_t i = 0; i < ask.size(); ++i)
    pred.push_back(i + 5 < ask.size() && bid[i + 5] > ask[i] ? 1 : 2);
  const TradingResult r = simulate_trading(pred, ask, bid);
  EXPECT_GE(r.total(), 0.0);
}

TEST(Trading, CompoundingIgnoresTradeOrder) {
  Rng rng(4);
  std::vector<double> rets;
  for (int i = 0; i < 12; ++i) rets.push_back(rng.uniform(-0.02, 0.03));
  const double base = cumulative_return(rets, Compounding::compounded);
  for (int k = 0; k < 5; ++k) {
    rng.shuffle(std::span<double>(rets));
    EXPECT_NEAR(cumulative_return(rets, Compounding::compounded), base, 1e-14);
  }
}

TEST(Confusion, Csv) {
  EXPECT_EQ(confusion_csv(from_rows({{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}})),
            "true\\predicted,0,1,2\n0,1,2,3\n1,4,5,6\n2,7,8,9\n");
}
