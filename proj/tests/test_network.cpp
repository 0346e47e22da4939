#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "tabl/errors.hpp"
#include "tabl/model_io.hpp"
#include "tabl/network.hpp"

using namespace tabl;
using namespace tabl::testing;

namespace {

std::vector<Matrix> random_inputs(std::size_t n, std::size_t d, std::size_t t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Matrix> xs;
  for (std::size_t i = 0; i < n; ++i) xs.push_back(random_matrix(d, t, rng));
  return xs;
}

Topology small_bilinear(Activation head = Activation::identity) {
  Topology t = bilinear_topology("small", {{5, 4}});
  t.input_d = 6;
  t.input_t = 5;
  t.layers.back().activation = head;
  return t;
}

Topology small_cnn() {
  CnnArchSpec arch;
  arch.layers = {{3, 3}, {2, 2}};
  Topology t = cnn_topology("small_cnn", arch);
  t.input_d = 4;
  t.input_t = 6;
  t.layers.back().activation = Activation::identity;
  return t;
}

double max_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_abs_diff(a[i], b[i]));
  return worst;
}

// Runs batch_gradient with a probe loss and checks every trainable tensor
// against central differences.
void check_network_gradients(Model& model, std::uint64_t seed) {
  const std::size_t d = model.topology.input_d, t = model.topology.input_t;
  const std::vector<Matrix> xs = random_inputs(3, d, t, seed);
  Rng rng(seed + 99);
  std::vector<Matrix> gs;
  for (std::size_t i = 0; i < xs.size(); ++i) gs.push_back(random_matrix(model.classes(), 1, rng));
  OutputLoss loss = [&](std::size_t i, const Matrix& y, Matrix& dy) {
    dy = gs[i];
    return probe(gs[i], y);
  };
  std::vector<std::vector<double>> grads;
  batch_gradient(model, xs, loss, grads);
  auto total = [&] {
    double s = 0.0;
    std::vector<Matrix> ys = predict(model, xs);
    for (std::size_t i = 0; i < ys.size(); ++i) s += probe(gs[i], ys[i]);
    return s;
  };
  std::vector<ParamRef> params = parameters(model);
  ASSERT_EQ(params.size(), grads.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) {
      EXPECT_TRUE(grads[p].empty()) << params[p].name;
      continue;
    }
    ASSERT_EQ(grads[p].size(), params[p].values.size()) << params[p].name;
    std::vector<std::size_t> skip;
    if (params[p].role == ParamRole::fixed_diagonal) {
      const std::size_t n = static_cast<std::size_t>(std::sqrt(params[p].values.size()));
      for (std::size_t i = 0; i < n; ++i) skip.push_back(i * (n + 1));
    }
    EXPECT_LT(fd_check(params[p].values, grads[p], total, 1e-5, skip), 1e-6)
        << params[p].name << " seed " << seed;
  }
}

}  // namespace

TEST(Registry, PaperTopologies) {
  auto layers = [](const Topology& t) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const LayerSpec& l : t.layers) out.emplace_back(l.a, l.b);
    return out;
  };
  using V = std::vector<std::pair<std::size_t, std::size_t>>;
  EXPECT_EQ(layers(lookup_topology("base_stock3")), (V{{60, 5}, {120, 10}, {50, 5}, {3, 1}}));
  EXPECT_EQ(layers(lookup_topology("joint_all")), (V{{60, 10}, {120, 5}, {3, 1}}));
  EXPECT_EQ(layers(lookup_topology("base_stock2")), (V{{60, 10}, {120, 5}, {3, 1}}));
  const Topology t = lookup_topology("joint_all");
  EXPECT_EQ(t.layers.back().kind, LayerKind::tabl);
  for (std::size_t i = 0; i + 1 < t.layers.size(); ++i) EXPECT_EQ(t.layers[i].kind, LayerKind::bl);
  EXPECT_THROW(lookup_topology("base_stock9"), ConfigError);
}

TEST(Registry, AllTypeCheck) {
  const std::vector<std::string> names = registry_names();
  for (const char* n : {"joint_all", "base_stock1", "base_stock2", "base_stock3", "base_stock4",
                        "base_stock5", "cnn"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
  }
  for (const Topology& t : registry()) {
    const std::vector<LayerDims> dims = chain_shapes(t);
    EXPECT_EQ(dims.front().d, 40u) << t.name;
    EXPECT_EQ(dims.front().t, 10u) << t.name;
    EXPECT_EQ(dims.back().d_out, 3u) << t.name;
    EXPECT_EQ(dims.back().t_out, 1u) << t.name;
  }
}

TEST(Topology, ParseAndErrors) {
  const Topology t = parse_bilinear_topology("[[60,10],[120,5],[3,1]]");
  EXPECT_EQ(t.layers.size(), 3u);
  EXPECT_EQ(t.layers[1].a, 120u);
  EXPECT_EQ(t.layers[2].kind, LayerKind::tabl);
  EXPECT_EQ(t.layers[2].activation, Activation::softmax_columns);
  EXPECT_THROW(parse_bilinear_topology("[[60,10],[3,2]]"), ConfigError);
  EXPECT_THROW(parse_bilinear_topology("[[60,10],"), ParseError);
  EXPECT_THROW(parse_bilinear_topology("[[60,0],[3,1]]"), ShapeError);

  CnnArchSpec too_long;
  too_long.layers = {{4, 11}};
  too_long.padding = Padding::valid;
  EXPECT_THROW(build(cnn_topology("bad", too_long), 1), ShapeError);
  EXPECT_THROW(build(cnn_topology("empty", CnnArchSpec{}), 1), ConfigError);
}

TEST(Build, DeterministicFromSeed) {
  const Topology t = lookup_topology("joint_all");
  Model a = build(t, 7), b = build(t, 7), c = build(t, 8);
  EXPECT_EQ(content_hash(a), content_hash(b));
  EXPECT_NE(content_hash(a), content_hash(c));
}

TEST(Build, JointAllForwardGivesDistribution) {
  const Model m = build(lookup_topology("joint_all"), 3);
  const Matrix y = predict_one(m, random_inputs(1, 40, 10, 5)[0]);
  EXPECT_EQ(y.rows(), 3u);
  EXPECT_EQ(y.cols(), 1u);
  EXPECT_NEAR(sum(y), 1.0, 1e-12);
  EXPECT_THROW(predict_one(m, Matrix(40, 9)), ShapeError);
}

TEST(Build, CnnArchitecture) {
  const Model m = build(lookup_topology("cnn"), 3);
  ASSERT_EQ(m.layers.size(), 8u);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(m.layers[i].spec.kind, LayerKind::conv);
  EXPECT_EQ(m.layers[7].spec.kind, LayerKind::dense);
  const Matrix y = predict_one(m, random_inputs(1, 40, 10, 5)[0]);
  EXPECT_EQ(y.size(), 3u);
  EXPECT_NEAR(sum(y), 1.0, 1e-12);

  Model mm = m;
  std::uint64_t fields = 0;
  for (const ParamRef& p : parameters(mm)) fields += p.values.size();
  EXPECT_EQ(count_params(m).base_trainable, fields);
}

TEST(Ledger, BilinearParamCount) {
  const Model m = build(lookup_topology("joint_all"), 1);
  const ParamLedger l = count_params(m);
  EXPECT_EQ(l.rows[0].base_trainable, 3100u);  // 2400 + 100 + 600
  EXPECT_EQ(l.rows[0].aux, 0u);

  const Model a = augment(m, 3, Strategy::is2, 2);
  const ParamLedger la = count_params(a);
  EXPECT_EQ(la.base_trainable, l.base_trainable);
  EXPECT_GT(la.aux, 0u);
  EXPECT_EQ(count_params(folded(a)).base_trainable, la.folded_trainable());
  EXPECT_EQ(count_params(folded(a)).aux, 0u);
}

TEST(Ledger, MacsMatchInstrumentation) {
  const std::vector<Matrix> xs40 = random_inputs(3, 40, 10, 9);
  for (const char* name : {"joint_all", "base_stock3", "cnn"}) {
    const Model base = build(lookup_topology(name), 4);
    for (int variant = 0; variant < 3; ++variant) {
      Model m = base;
      if (variant == 1) m = augment(base, 3, Strategy::is1, 5);
      if (variant == 2) m = augment(base, 3, Strategy::is2, 5);
      OpCounter counter;
      predict(m, xs40, &counter);
      EXPECT_EQ(counter.mac_count, count_macs(m, xs40.size()).total)
          << name << " variant " << variant;
    }
  }
}

TEST(Adapted, StartsAtBase) {
  for (const char* name : {"base_stock1", "cnn"}) {
    const Model base = build(lookup_topology(name), 4);
    const std::vector<Matrix> xs = random_inputs(4, 40, 10, 2);
    const std::vector<Matrix> yb = predict(base, xs);
    for (Strategy s : {Strategy::is1, Strategy::is2}) {
      const Model a = augment(base, 4, s, 6);
      EXPECT_LE(max_diff(predict(a, xs), yb), 1e-12) << name;
    }
  }
}

TEST(Adapted, FoldEquivalentEndToEnd) {
  for (const char* name : {"joint_all", "base_stock3", "cnn"}) {
    const Model base = build(lookup_topology(name), 11);
    const std::vector<Matrix> xs = random_inputs(5, 40, 10, 12);
    for (Strategy s : {Strategy::is1, Strategy::is2}) {
      Model a = augment(base, 3, s, 13);
      Rng rng(14);
      for (ParamRef& p : parameters(a))
        if (p.trainable && p.role == ParamRole::dense)
          for (double& v : p.values) v = rng.uniform(-0.1, 0.1);
      const std::vector<Matrix> ya = predict(a, xs);
      const Model f = folded(a);
      EXPECT_FALSE(f.adapted());
      EXPECT_LE(max_diff(ya, predict(f, xs)), 1e-10) << name;
      EXPECT_GT(max_diff(ya, predict(base, xs)), 1e-6) << name;
    }
  }
  const Model a = augment(build(lookup_topology("joint_all"), 1), 2, Strategy::is1, 1);
  const std::vector<Matrix> xs = random_inputs(3, 40, 10, 3);
  EXPECT_LE(max_diff(predict(a, xs),
                     predict(augment(build(lookup_topology("joint_all"), 1), 2, Strategy::is2, 1), xs)),
            1e-10);
}

TEST(Adapted, Errors) {
  const Model base = build(lookup_topology("joint_all"), 1);
  const Model a = augment(base, 2, Strategy::is2, 1);
  EXPECT_THROW(augment(a, 2, Strategy::is2, 1), StateError);
  EXPECT_THROW(augment(base, 0, Strategy::is2, 1), DomainError);
  EXPECT_EQ(a.base_hash, content_hash(base));
  EXPECT_EQ(content_hash(base_of(a)), content_hash(base));
}

TEST(Adapted, TrainableFlags) {
  Model a = augment(build(lookup_topology("joint_all"), 1), 2, Strategy::is2, 1);
  for (const ParamRef& p : parameters(a)) {
    const bool aux = p.name.find(".aux.") != std::string::npos;
    EXPECT_EQ(p.trainable, aux) << p.name;
  }
  Model al = augment(build(lookup_topology("joint_all"), 1), 2, Strategy::is2, 1, true);
  for (const ParamRef& p : parameters(al)) {
    if (p.role == ParamRole::unit_interval) EXPECT_TRUE(p.trainable) << p.name;
  }
}

TEST(Gradient, PlainBilinearNetwork) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = build(small_bilinear(), seed);
    check_network_gradients(m, seed);
  }
}

TEST(Gradient, AdaptedBilinearNetwork) {
  for (Strategy s : {Strategy::is1, Strategy::is2}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Model m = augment(build(small_bilinear(), seed), 2, s, seed + 10, true);
      Rng rng(seed + 20);
      for (ParamRef& p : parameters(m))
        if (p.trainable && p.role == ParamRole::dense)
          for (double& v : p.values) v = rng.uniform(-0.5, 0.5);
      check_network_gradients(m, seed);
    }
  }
}

TEST(Gradient, CnnNetwork) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = build(small_cnn(), seed);
    // Nonzero biases keep ReLU inputs off the kink when a whole column is dead.
    Rng brng(seed + 40);
    for (ParamRef& p : parameters(m))
      if (p.name.ends_with(".bias"))
        for (double& v : p.values) v = brng.uniform(-0.3, 0.3);
    check_network_gradients(m, seed);
    Model a = augment(m, 2, Strategy::is2, seed + 3);
    Rng rng(seed + 30);
    for (ParamRef& p : parameters(a))
      if (p.trainable)
        for (double& v : p.values) v = rng.uniform(-0.5, 0.5);
    check_network_gradients(a, seed);
  }
}

TEST(Gradient, SummedLossReturned) {
  Model m = build(small_bilinear(), 3);
  const std::vector<Matrix> xs = random_inputs(4, 6, 5, 1);
  OutputLoss loss = [](std::size_t i, const Matrix& y, Matrix& dy) {
    dy = Matrix(y.rows(), y.cols());
    return static_cast<double>(i);
  };
  std::vector<std::vector<double>> grads;
  EXPECT_DOUBLE_EQ(batch_gradient(m, xs, loss, grads), 6.0);
  for (const auto& g : grads)
    for (double v : g) EXPECT_EQ(v, 0.0);
}
