#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "tabl/layers.hpp"

namespace tabl {

enum class Strategy : std::uint8_t { is1 = 1, is2 = 2 };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

/// Two-factor low-rank matrix left * right.
struct LowRank {
  Matrix left;   // m x K
  Matrix right;  // K x n

  std::size_t rank() const noexcept { return left.cols(); }
  Matrix product(OpCounter* counter = nullptr) const { return matmul(left, right, counter); }
};

/// Low-rank auxiliary connections for one bilinear layer.
///
/// `w1` augments W1 (D' x D), `w` augments the attention matrix (T x T)
/// and is absent for plain bilinear layers, `w2` augments W2 (T x T').
struct AuxFactors {
  LowRank w1;
  std::optional<LowRank> w;
  LowRank w2;

  std::size_t rank() const noexcept { return w1.rank(); }
};

/// Largest rank a layer admits: min(D, D', T, T').
std::size_t max_rank(const LayerDims& dims);

// Left factors ~ U(-scale, scale), right factors zero: the auxiliary
// product starts at exactly zero.
AuxFactors init_aux(const LayerDims& dims, std::size_t rank, bool attention, Rng& rng,
                    double scale = 1e-2);
AuxFactors zero_aux(const LayerDims& dims, std::size_t rank, bool attention);
// Zero-pad every factor to a larger rank; the products are unchanged.
AuxFactors pad_rank(const AuxFactors& aux, std::size_t rank);

struct AugmentedTablLayer {
  TablLayerParams base;  // frozen
  AuxFactors aux;
  Strategy strategy = Strategy::is2;
  bool train_lambda = false;
};

struct AugmentedBlLayer {
  BlLayerParams base;  // frozen
  AuxFactors aux;
  Strategy strategy = Strategy::is2;
};

/// Train-mode intermediates of an augmented forward pass.
struct AugCache {
  LayerCache core;
  Strategy strategy = Strategy::is2;
  // IS1: materialized W + W_aux for each connection.
  Matrix w1_new, w_new, w2_new;
  // IS2: the narrow K-wide intermediates.
  Matrix r1_x, x_bar_l, x_tilde_l2;
};

struct AugOutput {
  Matrix y;
  std::optional<AugCache> cache;
};

struct AuxGrads {
  LowRank w1;
  std::optional<LowRank> w;
  LowRank w2;
  double lambda = 0.0;  // meaningful only when lambda is trained
  Matrix dx;
};

AugOutput aug_forward_is1(const AugmentedTablLayer& layer, const Matrix& x, Mode mode,
                          OpCounter* counter = nullptr);
AugOutput aug_forward_is2(const AugmentedTablLayer& layer, const Matrix& x, Mode mode,
                          OpCounter* counter = nullptr);
AugOutput aug_forward(const AugmentedTablLayer& layer, const Matrix& x, Mode mode,
                      OpCounter* counter = nullptr);
AuxGrads aug_backward(const AugmentedTablLayer& layer, const std::optional<AugCache>& cache,
                      const Matrix& dy);

AugOutput aug_forward(const AugmentedBlLayer& layer, const Matrix& x, Mode mode,
                      OpCounter* counter = nullptr);
AuxGrads aug_backward(const AugmentedBlLayer& layer, const std::optional<AugCache>& cache,
                      const Matrix& dy);

/// Folds W + L R into a plain layer with the base layer's shape.
/// With a counter, tallies the K-inner factor products (the IS1 per-batch cost).
TablLayerParams fold(const AugmentedTablLayer& layer, OpCounter* counter = nullptr);
BlLayerParams fold(const AugmentedBlLayer& layer, OpCounter* counter = nullptr);

/// Entries that must be stored for the auxiliary factors of one layer.
std::uint64_t aux_param_count(const LayerDims& dims, std::size_t rank, bool attention = true);

struct BaseParamCount {
  std::uint64_t trainable = 0;      // excludes the pinned diagonal of W
  std::uint64_t with_diagonal = 0;  // every stored entry
};
BaseParamCount base_param_count(const LayerDims& dims, bool attention = true);

/// Closed-form multiply-accumulate counts for a batch of N samples.
struct MacBreakdown {
  std::uint64_t feature = 0;         // X_bar step
  std::uint64_t attention = 0;       // E step
  std::uint64_t output = 0;          // Y step (including 2 N D' T')
  std::uint64_t materialize = 0;     // IS1 factor products, once per batch
  std::uint64_t total() const { return feature + attention + output + materialize; }
};
MacBreakdown base_macs(const LayerDims& dims, std::uint64_t batch, bool attention = true);
MacBreakdown is1_macs(const LayerDims& dims, std::size_t rank, std::uint64_t batch,
                      bool attention = true);
MacBreakdown is2_macs(const LayerDims& dims, std::size_t rank, std::uint64_t batch,
                      bool attention = true);

template <class F>
void visit_params(AuxFactors& a, F&& f) {
  f(std::string_view("aux.w1.left"), a.w1.left.values(), ParamRole::dense);
  f(std::string_view("aux.w1.right"), a.w1.right.values(), ParamRole::dense);
  if (a.w) {
    f(std::string_view("aux.w.left"), a.w->left.values(), ParamRole::dense);
    f(std::string_view("aux.w.right"), a.w->right.values(), ParamRole::dense);
  }
  f(std::string_view("aux.w2.left"), a.w2.left.values(), ParamRole::dense);
  f(std::string_view("aux.w2.right"), a.w2.right.values(), ParamRole::dense);
}

template <class F>
void visit_grads(AuxGrads& g, F&& f) {
  f(g.w1.left.values());
  f(g.w1.right.values());
  if (g.w) {
    f(g.w->left.values());
    f(g.w->right.values());
  }
  f(g.w2.left.values());
  f(g.w2.right.values());
}

namespace detail {

// Forward passes on borrowed weights; `w` is null for plain bilinear layers.
AugOutput forward_is1(const Matrix& w1, const Matrix* w, const Matrix& w2, const Matrix& bias,
                      double lambda, Activation act, const AuxFactors& aux, const Matrix& x,
                      Mode mode, OpCounter* counter);
AugOutput forward_is2(const Matrix& w1, const Matrix* w, const Matrix& w2, const Matrix& bias,
                      double lambda, Activation act, const AuxFactors& aux, const Matrix& x,
                      Mode mode, OpCounter* counter);

/// Batched gradient accumulation for an augmented layer. IS1 sums the dense
/// gradients of W_new over the batch and projects onto the factors once;
/// IS2 accumulates factor gradients sample by sample.
class AuxGradAccumulator {
 public:
  AuxGradAccumulator(const AuxFactors& aux, Strategy strategy, const LayerDims& dims);

  // Backpropagates one sample; returns dX. `lambda_grad` receives dlambda.
  Matrix accumulate(const Matrix& w1, const Matrix* w, const Matrix& w2, double lambda,
                    Activation act, const AuxFactors& aux, const AugCache& cache,
                    const Matrix& dy, double* lambda_grad);

  AuxGrads finish(const AuxFactors& aux) const;

 private:
  Strategy strategy_;
  Matrix g_w1_, g_w_, g_w2_;  // IS1 dense accumulators
  AuxGrads factored_;         // IS2 accumulators
  bool attention_;
};

}  // namespace detail
}  // namespace tabl
