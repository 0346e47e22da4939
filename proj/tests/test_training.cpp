#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "tabl/errors.hpp"
#include "tabl/model_io.hpp"
#include "tabl/training.hpp"

using namespace tabl;
using namespace tabl::testing;

namespace {

Matrix column(std::initializer_list<double> v) {
  Matrix m(v.size(), 1);
  std::copy(v.begin(), v.end(), m.values().begin());
  return m;
}

// Three well separated classes: the mean of feature row c is shifted up for class c.
SampleSet separable_set(std::size_t n, std::uint64_t seed, std::size_t d = 6, std::size_t t = 4) {
  Rng rng(seed);
  SampleSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 3);
    Matrix x = random_matrix(d, t, rng, -0.3, 0.3);
    for (std::size_t j = 0; j < t; ++j) x(static_cast<std::size_t>(label), j) += 1.5;
    s.xs.push_back(std::move(x));
    s.labels.push_back(label);
    s.meta.push_back({});
  }
  return s;
}

Topology toy_topology() {
  Topology t = bilinear_topology("toy", {{5, 3}});
  t.input_d = 6;
  t.input_t = 4;
  return t;
}

}  // namespace

TEST(Loss, Examples) {
  const WeightedEntropyLoss equal({100, 100, 100});
  EXPECT_EQ(equal.loss(column({0.0, 1.0, 0.0}), 1), 0.0);
  EXPECT_NEAR(equal.loss(column({0.25, 0.5, 0.25}), 1), 1e4 * std::numbers::ln2, 1e-9);
  EXPECT_THROW(equal.loss(column({0.2, 0.3, 0.5}), 3), DomainError);
  EXPECT_THROW(equal.loss(column({0.5, 0.5}), 0), ShapeError);
  EXPECT_THROW(WeightedEntropyLoss({0, 1, 1}), DomainError);
  // Floor keeps a confident wrong answer finite.
  EXPECT_NEAR(equal.loss(column({1.0, 0.0, 0.0}), 2), 1e4 * -std::log(1e-12), 1e-6);

  // Equal counts: exactly (beta / N) times cross-entropy.
  const WeightedEntropyLoss five({5, 5, 5}, 2.0);
  const Matrix p = column({0.1, 0.7, 0.2});
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(five.loss(p, c), 0.4 * -std::log(p.values()[c]));

  const auto from = WeightedEntropyLoss::from_labels(std::vector<int>{0, 0, 1, 1, 1});
  EXPECT_EQ(from.counts(), (std::array<double, 3>{2, 3, 1}));
}

TEST(Loss, NonNegativeAndZeroOnlyAtCertainty) {
  const WeightedEntropyLoss loss({3, 7, 11});
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Matrix p = column_softmax(random_matrix(3, 1, rng, -3, 3));
    for (int c = 0; c < 3; ++c) EXPECT_GT(loss.loss(p, c), 0.0);
  }
}

TEST(Loss, SoftmaxHeadGradient) {
  const WeightedEntropyLoss loss({120, 45, 80});
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix z = random_matrix(3, 1, rng, -2, 2);
    for (int label = 0; label < 3; ++label) {
      const Matrix p = column_softmax(z);
      Matrix dp;
      loss.loss_and_grad(p, label, dp);
      const Matrix dz = activation_backward(z, p, dp, Activation::softmax_columns);
      for (int c = 0; c < 3; ++c) {
        const double expect = loss.weight(label) * (p.values()[c] - (c == label ? 1.0 : 0.0));
        EXPECT_NEAR(dz.values()[c], expect, 1e-12 * loss.weight(label));
      }
      const double err = fd_check(z.values(), dz.values(), [&] {
        return loss.loss(column_softmax(z), label);
      });
      EXPECT_LT(err, 1e-6);
    }
  }
}

TEST(Adam, FirstStepAndZeroGrad) {
  double w[2] = {0.3, -0.7};
  std::vector<ParamRef> params{{"w", std::span<double>(w, 2), ParamRole::dense, true}};
  const FreezeMask mask = FreezeMask::from(params);
  AdamState s;
  s.lr = 0.01;
  adam_step(s, params, {{0.0, 0.0}}, mask);
  EXPECT_EQ(w[0], 0.3);
  EXPECT_EQ(w[1], -0.7);

  AdamState s2;
  s2.lr = 0.01;
  adam_step(s2, params, {{1.0, 1.0}}, mask);
  EXPECT_NEAR(w[0], 0.3 - 0.01, 1e-9);
  EXPECT_NEAR(w[1], -0.7 - 0.01, 1e-9);

  EXPECT_THROW(adam_step(s2, params, {{1.0}}, mask), ShapeError);
  EXPECT_THROW(adam_step(s2, params, {}, mask), ShapeError);
}

TEST(Adam, MatchesScalarOracle) {
  Rng rng(8);
  double w = 0.5, ow = 0.5, m = 0, v = 0;
  std::vector<ParamRef> params{{"w", std::span<double>(&w, 1), ParamRole::dense, true}};
  const FreezeMask mask = FreezeMask::from(params);
  AdamState s;
  s.lr = 0.003;
  for (int k = 1; k <= 25; ++k) {
    const double g = rng.uniform(-2, 2);
    adam_step(s, params, {{g}}, mask);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ow -= 0.003 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
    EXPECT_NEAR(w, ow, 1e-14);
  }
}

TEST(Adam, MaskDiagonalAndLambda) {
  double frozen[2] = {1.0, 2.0};
  double diag[4] = {0.5, 0.1, 0.2, 0.5};
  double lambda = 0.98;
  std::vector<ParamRef> params{
      {"frozen", std::span<double>(frozen, 2), ParamRole::dense, false},
      {"w", std::span<double>(diag, 4), ParamRole::fixed_diagonal, true},
      {"lambda", std::span<double>(&lambda, 1), ParamRole::unit_interval, true}};
  const FreezeMask mask = FreezeMask::from(params);
  EXPECT_EQ(mask.trainable_count(), 3u);
  AdamState s;
  s.lr = 0.5;
  for (int k = 0; k < 10; ++k) adam_step(s, params, {{5.0, 5.0}, {1, 1, 1, 1}, {-1.0}}, mask);
  EXPECT_EQ(frozen[0], 1.0);
  EXPECT_EQ(frozen[1], 2.0);
  EXPECT_EQ(diag[0], 0.5);
  EXPECT_EQ(diag[3], 0.5);
  EXPECT_LT(diag[1], 0.1);
  EXPECT_EQ(lambda, 1.0);
}

TEST(Scheduler, Plateau) {
  PlateauScheduler s(0.01, 2, 0.5, 0.002, 0.1);
  using O = PlateauScheduler::Outcome;
  EXPECT_EQ(s.step(10.0), O::improved);
  EXPECT_EQ(s.step(9.5), O::waiting);   // not 10% better
  EXPECT_EQ(s.step(9.5), O::reduced);
  EXPECT_DOUBLE_EQ(s.lr(), 0.005);
  EXPECT_EQ(s.step(8.0), O::improved);  // strict new best resets patience
  EXPECT_EQ(s.step(8.0), O::waiting);
  EXPECT_EQ(s.step(8.0), O::reduced);
  EXPECT_DOUBLE_EQ(s.lr(), 0.0025);
  EXPECT_EQ(s.step(8.0), O::waiting);
  EXPECT_EQ(s.step(8.0), O::reduced);
  EXPECT_DOUBLE_EQ(s.lr(), 0.002);  // floored
  EXPECT_EQ(s.step(8.0), O::waiting);
  EXPECT_EQ(s.step(8.0), O::exhausted);
  EXPECT_DOUBLE_EQ(s.lr(), 0.002);
  EXPECT_THROW(PlateauScheduler(0.0), DomainError);
}

TEST(Scheduler, NonIncreasing) {
  PlateauScheduler s(0.01);
  Rng rng(3);
  double prev = s.lr();
  for (int i = 0; i < 300; ++i) {
    s.step(rng.uniform(0.5, 1.5));
    EXPECT_LE(s.lr(), prev);
    EXPECT_GE(s.lr(), 1e-6);
    prev = s.lr();
  }
}

TEST(Train, ZeroEpochsLeavesModel) {
  Model m = build(toy_topology(), 3);
  const std::string before = content_hash(m);
  TrainConfig cfg;
  cfg.max_epochs = 0;
  const TrainingReport r = train(m, separable_set(30, 1), separable_set(9, 2), cfg);
  EXPECT_EQ(content_hash(m), before);
  EXPECT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.epochs_run, 0u);
}

TEST(Train, SeparableAndDeterministic) {
  const SampleSet tr = separable_set(300, 5), va = separable_set(60, 6);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.batch_size = 32;
  cfg.seed = 11;
  Model a = build(toy_topology(), 3), b = build(toy_topology(), 3);
  const TrainingReport ra = train(a, tr, va, cfg);
  const TrainingReport rb = train(b, tr, va, cfg);
  EXPECT_EQ(ra.csv(), rb.csv());
  EXPECT_EQ(content_hash(a), content_hash(b));
  const Evaluation ev = evaluate(a, tr, WeightedEntropyLoss::from_labels(tr.labels));
  EXPECT_GT(ev.f1, 0.95);
  // The kept checkpoint is the best validation epoch.
  double best = ra.epochs[0].val_loss;
  for (const auto& e : ra.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(ra.best_val_loss, best);
  EXPECT_EQ(ra.epochs[ra.best_epoch].val_loss, best);
  EXPECT_NEAR(evaluate(a, va, WeightedEntropyLoss::from_labels(tr.labels)).loss, best, 1e-9 * best);
  for (std::size_t i = 1; i < ra.epochs.size(); ++i) EXPECT_LE(ra.epochs[i].lr, ra.epochs[i - 1].lr);
  EXPECT_EQ(ra.csv().substr(0, ra.csv().find('\n')), "epoch,train_loss,val_loss,lr,train_f1,val_f1");
}

TEST(Train, EmptyDataset) {
  Model m = build(toy_topology(), 3);
  EXPECT_THROW(train(m, SampleSet{}, SampleSet{}, TrainConfig{}), DomainError);
}

TEST(Train, FrozenBaseUntouchedAndLambdaInRange) {
  for (Strategy s : {Strategy::is1, Strategy::is2}) {
    const Model base = build(toy_topology(), 4);
    Model a = augment(base, 2, s, 5, true);
    std::vector<ParamRef> params = parameters(a);
    const FreezeMask mask = FreezeMask::from(params);
    const SampleSet data = separable_set(40, 7);
    const WeightedEntropyLoss loss = WeightedEntropyLoss::from_labels(data.labels);
    AdamState adam;
    adam.lr = 0.2;  // large steps push lambda against its bounds
    std::vector<std::vector<double>> grads;
    std::vector<std::string> frozen_before;
    for (const ParamRef& p : params)
      if (!p.trainable) frozen_before.push_back(sha256_hex({reinterpret_cast<const char*>(p.values.data()), p.values.size() * 8}));
    for (int step = 0; step < 100; ++step) {
      OutputLoss fn = [&](std::size_t i, const Matrix& y, Matrix& dy) {
        return loss.loss_and_grad(y, data.labels[i], dy);
      };
      batch_gradient(a, data.xs, fn, grads);
      for (std::size_t t = 0; t < params.size(); ++t)
        if (!params[t].trainable) EXPECT_TRUE(grads[t].empty());
      adam_step(adam, params, grads, mask);
      for (const ParamRef& p : params) {
        if (p.role == ParamRole::unit_interval) {
          EXPECT_GE(p.values[0], 0.0);
          EXPECT_LE(p.values[0], 1.0);
        }
        if (p.role == ParamRole::fixed_diagonal) {
          const std::size_t n = static_cast<std::size_t>(std::sqrt(p.values.size()));
          for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(p.values[i * (n + 1)], 1.0 / static_cast<double>(n));
        }
      }
    }
    std::size_t k = 0;
    for (const ParamRef& p : params)
      if (!p.trainable)
        EXPECT_EQ(sha256_hex({reinterpret_cast<const char*>(p.values.data()), p.values.size() * 8}), frozen_before[k++]) << p.name;
    Model reference = base;
    for (ParamRef& p : parameters(reference))
      if (p.role == ParamRole::unit_interval)
        for (const ParamRef& q : params)
          if (q.name == p.name) p.values[0] = q.values[0];
    EXPECT_EQ(content_hash(base_of(a)), content_hash(reference));
  }
}

TEST(GradCheck, LinearToyIsExact) {
  Topology t;
  t.name = "linear";
  t.input_d = 4;
  t.input_t = 3;
  t.layers = {{LayerKind::bl, 3, 1, Activation::identity, Padding::same}};
  Model m = build(t, 2);
  Rng rng(1);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix g = random_matrix(3, 1, rng);
  OutputLoss probe_loss = [&](std::size_t, const Matrix& y, Matrix& dy) {
    dy = g;
    return probe(g, y);
  };
  const GradCheckReport r = gradient_check(m, x, probe_loss);
  EXPECT_LT(r.max_rel_error, 1e-9) << r.text();
}

TEST(GradCheck, TablNetworkAndFrozenGroups) {
  const WeightedEntropyLoss loss({100, 100, 100});
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = build(toy_topology(), seed);
    Rng rng(seed);
    for (ParamRef& p : parameters(m))
      if (p.name.ends_with(".bias"))
        for (double& v : p.values) v = rng.uniform(-0.3, 0.3);
    const Matrix x = random_matrix(6, 4, rng);
    const GradCheckReport r = gradient_check(m, x, static_cast<int>(seed % 3), loss);
    EXPECT_LT(r.max_rel_error, 1e-6) << r.text();
  }
  Model a = augment(build(toy_topology(), 1), 2, Strategy::is2, 1);
  Rng rng(3);
  for (ParamRef& p : parameters(a))
    if (p.trainable)
      for (double& v : p.values) v = rng.uniform(-0.3, 0.3);
  const GradCheckReport r = gradient_check(a, random_matrix(6, 4, rng), 1, loss);
  std::size_t frozen = 0;
  for (const auto& g : r.groups) {
    if (!g.has_gradient) ++frozen;
    EXPECT_EQ(g.has_gradient, g.name.find(".aux.") != std::string::npos) << g.name;
  }
  EXPECT_GT(frozen, 0u);
  EXPECT_NE(r.text().find("no gradient"), std::string::npos);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.text();
}
