#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "support.hpp"
#include "tabl/adapters.hpp"
#include "tabl/errors.hpp"

using namespace tabl;
using namespace tabl::testing;

namespace {

AugmentedTablLayer random_aug(const LayerDims& d, std::size_t k, Activation act, Rng& rng,
                              Strategy s, double scale = 0.3) {
  AugmentedTablLayer l;
  l.base = init_tabl(d, act, rng);
  l.base.bias = random_matrix(d.d_out, d.t_out, rng, -0.5, 0.5);
  l.base.lambda = rng.uniform(0.1, 0.9);
  l.aux = init_aux(d, k, true, rng, scale);
  for (double& v : l.aux.w1.right.values()) v = rng.uniform(-scale, scale);
  for (double& v : l.aux.w->right.values()) v = rng.uniform(-scale, scale);
  for (double& v : l.aux.w2.right.values()) v = rng.uniform(-scale, scale);
  l.strategy = s;
  return l;
}

Grid literal_aug(const AugmentedTablLayer& l, const Matrix& x, int act) {
  auto lr = [](const LowRank& f) { return grid_mul(to_grid(f.left), to_grid(f.right)); };
  return oracle_tabl(grid_add(to_grid(l.base.w1), lr(l.aux.w1)),
                     grid_add(to_grid(l.base.w), lr(*l.aux.w)),
                     grid_add(to_grid(l.base.w2), lr(l.aux.w2)), to_grid(l.base.bias),
                     l.base.lambda, act, to_grid(x));
}

std::size_t numeric_rank(const Matrix& m, double tol) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(e);
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > tol) ++r;
  return r;
}

}  // namespace

TEST(Augmented, ZeroFactorsReproduceBase) {
  Rng rng(21);
  const LayerDims d{6, 5, 4, 3};
  for (Strategy s : {Strategy::is1, Strategy::is2}) {
    AugmentedTablLayer l;
    l.base = init_tabl(d, Activation::relu, rng);
    l.aux = zero_aux(d, 2, true);
    l.strategy = s;
    Matrix x = random_matrix(6, 5, rng);
    EXPECT_EQ(aug_forward(l, x, Mode::infer).y, tabl_forward(l.base, x, Mode::infer).y);
    EXPECT_EQ(fold(l).w1, l.base.w1);
    EXPECT_EQ(fold(l).w, l.base.w);
    EXPECT_EQ(fold(l).w2, l.base.w2);
  }
}

TEST(Augmented, InitialFactorsStartAtBase) {
  Rng rng(22);
  const LayerDims d{6, 5, 4, 3};
  AugmentedTablLayer l;
  l.base = init_tabl(d, Activation::relu, rng);
  l.aux = init_aux(d, 3, true, rng);
  Matrix x = random_matrix(6, 5, rng);
  EXPECT_EQ(fold(l).w1, l.base.w1);
  EXPECT_LE(max_abs_diff(aug_forward(l, x, Mode::infer).y, tabl_forward(l.base, x, Mode::infer).y),
            1e-15);
}

TEST(Augmented, BothStrategiesMatchLiteralForm) {
  Rng rng(23);
  const LayerDims d{6, 7, 5, 4};
  for (Activation act : {Activation::relu, Activation::softmax_columns, Activation::identity}) {
    const int code = act == Activation::relu ? 0 : act == Activation::softmax_columns ? 1 : 2;
    AugmentedTablLayer l = random_aug(d, 2, act, rng, Strategy::is1);
    Matrix x = random_matrix(6, 7, rng);
    Grid ref = literal_aug(l, x, code);
    Matrix y1 = aug_forward_is1(l, x, Mode::infer).y;
    Matrix y2 = aug_forward_is2(l, x, Mode::infer).y;
    EXPECT_LE(max_abs_diff(ref, y1), 1e-12);
    EXPECT_LE(max_abs_diff(ref, y2), 1e-12);
    EXPECT_LE(max_abs_diff(y1, y2), 1e-10);
    EXPECT_LE(max_abs_diff(tabl_forward(fold(l), x, Mode::infer).y, y1), 1e-12);
  }
}

TEST(Augmented, FullRankFactorsRecoverAnyPerturbation) {
  Rng rng(24);
  const LayerDims d{4, 4, 4, 4};
  AugmentedTablLayer l = random_aug(d, 4, Activation::identity, rng, Strategy::is2);
  Matrix target = random_matrix(4, 4, rng);
  l.aux.w1 = {Matrix::identity(4), target};
  EXPECT_LE(max_abs_diff(fold(l).w1, add(l.base.w1, target)), 1e-15);
}

TEST(Augmented, RankLimits) {
  Rng rng(25);
  const LayerDims d{40, 10, 60, 10};
  EXPECT_EQ(max_rank(d), 10u);
  EXPECT_THROW(init_aux(d, 11, true, rng), DomainError);
  EXPECT_THROW(init_aux(d, 0, true, rng), DomainError);
  EXPECT_EQ(max_rank({120, 5, 3, 1}), 1u);
}

TEST(Augmented, PaddingRankKeepsOutput) {
  Rng rng(26);
  const LayerDims d{6, 5, 7, 5};
  AugmentedTablLayer l = random_aug(d, 2, Activation::softmax_columns, rng, Strategy::is2);
  Matrix x = random_matrix(6, 5, rng);
  Matrix before = aug_forward(l, x, Mode::infer).y;
  l.aux = pad_rank(l.aux, 5);
  EXPECT_EQ(l.aux.rank(), 5u);
  EXPECT_LE(max_abs_diff(aug_forward(l, x, Mode::infer).y, before), 1e-12);
}

TEST(Augmented, MaterializedAuxHasLowRank) {
  Rng rng(27);
  const LayerDims d{12, 9, 10, 8};
  for (std::size_t k = 1; k <= 4; ++k) {
    AugmentedTablLayer l = random_aug(d, k, Activation::relu, rng, Strategy::is1);
    EXPECT_LE(numeric_rank(l.aux.w1.product(), 1e-10), k);
    EXPECT_LE(numeric_rank(l.aux.w->product(), 1e-10), k);
    EXPECT_LE(numeric_rank(l.aux.w2.product(), 1e-10), k);
  }
}

TEST(Augmented, MacCountsMatchClosedForms) {
  Rng rng(28);
  const LayerDims d{40, 10, 60, 10};
  AugmentedTablLayer l = random_aug(d, 3, Activation::relu, rng, Strategy::is2);
  // The feature step of IS2 alone: N D D' T + N D K T + N K T D'.
  EXPECT_EQ(is2_macs(d, 3, 1).feature, 27000u);
  OpCounter c2;
  aug_forward_is2(l, random_matrix(40, 10, rng), Mode::infer, &c2);
  EXPECT_EQ(c2.mac_count, is2_macs(d, 3, 1).total());
  OpCounter c1;
  aug_forward_is1(l, random_matrix(40, 10, rng), Mode::infer, &c1);
  EXPECT_EQ(c1.mac_count, is1_macs(d, 3, 1).total());
  OpCounter cb;
  tabl_forward(l.base, random_matrix(40, 10, rng), Mode::infer, &cb);
  EXPECT_EQ(cb.mac_count, base_macs(d, 1).total());
}

TEST(Augmented, ParamCounts) {
  EXPECT_EQ(aux_param_count({40, 10, 60, 10}, 1), 140u);
  EXPECT_EQ(aux_param_count({40, 10, 60, 10}, 0), 0u);
  EXPECT_EQ(base_param_count({40, 10, 60, 10}, false).trainable, 3100u);
  auto b = base_param_count({40, 10, 60, 10}, true);
  EXPECT_EQ(b.with_diagonal - b.trainable, 10u);
}

class AugGradient : public ::testing::TestWithParam<int> {};

TEST_P(AugGradient, FactorsMatchFiniteDifferences) {
  Rng rng(300 + GetParam());
  const LayerDims d{5, 4, 3, 3};
  for (Strategy s : {Strategy::is1, Strategy::is2}) {
    AugmentedTablLayer l = random_aug(d, 2, Activation::identity, rng, s, 1.0);
    l.train_lambda = true;
    Matrix x = random_matrix(5, 4, rng);
    Matrix g = random_matrix(3, 3, rng);
    auto loss = [&] { return probe(g, aug_forward(l, x, Mode::infer).y); };
    auto out = aug_forward(l, x, Mode::train);
    AuxGrads grads = aug_backward(l, out.cache, g);
    EXPECT_LT(fd_check(l.aux.w1.left.values(), grads.w1.left.values(), loss), 1e-6);
    EXPECT_LT(fd_check(l.aux.w1.right.values(), grads.w1.right.values(), loss), 1e-6);
    EXPECT_LT(fd_check(l.aux.w->left.values(), grads.w->left.values(), loss), 1e-6);
    EXPECT_LT(fd_check(l.aux.w->right.values(), grads.w->right.values(), loss), 1e-6);
    EXPECT_LT(fd_check(l.aux.w2.left.values(), grads.w2.left.values(), loss), 1e-6);
    EXPECT_LT(fd_check(l.aux.w2.right.values(), grads.w2.right.values(), loss), 1e-6);
    EXPECT_LT(fd_check(std::span<double>(&l.base.lambda, 1),
                       std::span<const double>(&grads.lambda, 1), loss),
              1e-6);
    EXPECT_LT(fd_check(x.values(), grads.dx.values(), loss), 1e-6);
  }
}

TEST_P(AugGradient, LeftFactorGradientIsDenseGradientTimesRightTranspose) {
  Rng rng(400 + GetParam());
  const LayerDims d{5, 4, 3, 3};
  AugmentedTablLayer l = random_aug(d, 2, Activation::identity, rng, Strategy::is2);
  Matrix x = random_matrix(5, 4, rng);
  Matrix g = random_matrix(3, 3, rng);
  auto out = aug_forward(l, x, Mode::train);
  AuxGrads grads = aug_backward(l, out.cache, g);
  TablGrads dense = tabl_backward(fold(l), tabl_forward(fold(l), x, Mode::train).cache, g);
  EXPECT_LE(max_abs_diff(grads.w1.left, matmul_nt(dense.w1, l.aux.w1.right)), 1e-12);
}

TEST_P(AugGradient, BilinearAugmentedMatchesFiniteDifferences) {
  Rng rng(500 + GetParam());
  const LayerDims d{6, 5, 4, 3};
  for (Strategy s : {Strategy::is1, Strategy::is2}) {
    AugmentedBlLayer l;
    l.base = init_bl(d, Activation::identity, rng);
    l.aux = init_aux(d, 2, false, rng, 0.3);
    for (double& v : l.aux.w1.right.values()) v = rng.uniform(-0.3, 0.3);
    for (double& v : l.aux.w2.right.values()) v = rng.uniform(-0.3, 0.3);
    l.strategy = s;
    Matrix x = random_matrix(6, 5, rng);
    Matrix g = random_matrix(4, 3, rng);
    auto loss = [&] { return probe(g, aug_forward(l, x, Mode::infer).y); };
    auto out = aug_forward(l, x, Mode::train);
    AuxGrads grads = aug_backward(l, out.cache, g);
    EXPECT_LT(fd_check(l.aux.w1.left.values(), grads.w1.left.values(), loss), 1e-6);
    EXPECT_LT(fd_check(l.aux.w1.right.values(), grads.w1.right.values(), loss), 1e-6);
    EXPECT_LT(fd_check(l.aux.w2.left.values(), grads.w2.left.values(), loss), 1e-6);
    EXPECT_LT(fd_check(l.aux.w2.right.values(), grads.w2.right.values(), loss), 1e-6);
    EXPECT_LT(fd_check(x.values(), grads.dx.values(), loss), 1e-6);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, AugGradient, ::testing::Range(0, 5));

TEST(Augmented, ZeroUpstreamAndMissingCache) {
  Rng rng(29);
  const LayerDims d{5, 4, 3, 3};
  AugmentedTablLayer l = random_aug(d, 2, Activation::relu, rng, Strategy::is2);
  Matrix x = random_matrix(5, 4, rng);
  auto out = aug_forward(l, x, Mode::train);
  AuxGrads g = aug_backward(l, out.cache, Matrix(3, 3));
  EXPECT_EQ(max_abs(g.w1.left), 0.0);
  EXPECT_EQ(max_abs(g.w2.right), 0.0);
  EXPECT_THROW(aug_backward(l, aug_forward(l, x, Mode::infer).cache, Matrix(3, 3)), StateError);
  l.strategy = Strategy::is1;
  EXPECT_THROW(aug_backward(l, out.cache, Matrix(3, 3)), StateError);
}

TEST(Augmented, FoldPreservesInferenceOverManyInputs) {
  Rng rng(30);
  const LayerDims d{8, 6, 5, 4};
  AugmentedTablLayer l = random_aug(d, 3, Activation::relu, rng, Strategy::is2);
  TablLayerParams folded = fold(l);
  EXPECT_EQ(base_param_count(folded.dims()).with_diagonal,
            base_param_count(l.base.dims()).with_diagonal);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Matrix x = random_matrix(8, 6, rng);
    worst = std::max(worst, max_abs_diff(tabl_forward(folded, x, Mode::infer).y,
                                         aug_forward(l, x, Mode::infer).y));
  }
  EXPECT_LT(worst, 1e-12);
}
