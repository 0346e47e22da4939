#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "tabl/linalg.hpp"
#include "tabl/rng.hpp"

namespace tabl {

enum class Activation : std::uint8_t { relu = 0, softmax_columns = 1, identity = 2 };
enum class Mode { train, infer };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

/// Input (D, T) and output (D', T') shape of a bilinear layer.
struct LayerDims {
  std::size_t d = 0;
  std::size_t t = 0;
  std::size_t d_out = 0;
  std::size_t t_out = 0;

  friend bool operator==(const LayerDims&, const LayerDims&) = default;
};

/// How the optimizer treats an individual parameter tensor.
enum class ParamRole : std::uint8_t {
  dense,
  fixed_diagonal,  // square matrix whose diagonal is not trainable
  unit_interval,   // scalar clamped to [0, 1] after each step
};

/// Temporal-attention bilinear layer weights.
///
/// `w` is T x T; its diagonal is pinned to 1/T and never receives
/// gradient. `lambda` blends the attended and plain features and stays in
/// [0, 1].
struct TablLayerParams {
  Matrix w1;    // D' x D
  Matrix w;     // T x T
  Matrix w2;    // T x T'
  Matrix bias;  // D' x T'
  double lambda = 0.5;
  Activation activation = Activation::relu;

  LayerDims dims() const { return {w1.cols(), w.rows(), w1.rows(), w2.cols()}; }
};

/// Bilinear layer: the attention branch is absent.
struct BlLayerParams {
  Matrix w1;
  Matrix w2;
  Matrix bias;
  Activation activation = Activation::relu;

  LayerDims dims() const { return {w1.cols(), w2.rows(), w1.rows(), w2.cols()}; }
};

/// Intermediates of a train-mode forward pass.
struct LayerCache {
  Matrix x;
  Matrix x_bar;
  Matrix e;  // empty for BL
  Matrix a;  // empty for BL
  Matrix x_tilde;
  Matrix pre_activation;
  Matrix output;
};

struct LayerOutput {
  Matrix y;
  std::optional<LayerCache> cache;
};

struct TablGrads {
  Matrix w1;
  Matrix w;  // diagonal is identically zero
  Matrix w2;
  Matrix bias;
  double lambda = 0.0;
  Matrix dx;
};

struct BlGrads {
  Matrix w1;
  Matrix w2;
  Matrix bias;
  Matrix dx;
};

LayerOutput tabl_forward(const TablLayerParams& p, const Matrix& x, Mode mode,
                         OpCounter* counter = nullptr);
TablGrads tabl_backward(const TablLayerParams& p, const std::optional<LayerCache>& cache,
                        const Matrix& dy);

LayerOutput bl_forward(const BlLayerParams& p, const Matrix& x, Mode mode,
                       OpCounter* counter = nullptr);
BlGrads bl_backward(const BlLayerParams& p, const std::optional<LayerCache>& cache,
                    const Matrix& dy);

// Glorot-uniform weights, zero bias, lambda = 0.5, W diagonal = 1/T.
TablLayerParams init_tabl(const LayerDims& dims, Activation act, Rng& rng);
BlLayerParams init_bl(const LayerDims& dims, Activation act, Rng& rng);

void validate(const TablLayerParams& p);
void validate(const BlLayerParams& p);

// Re-impose the structural constraints: lambda in [0,1], diag(W) = 1/T.
void enforce_constraints(TablLayerParams& p);

Matrix activate(const Matrix& z, Activation act);
// Gradient w.r.t. the pre-activation given the upstream gradient.
Matrix activation_backward(const Matrix& z, const Matrix& y, const Matrix& dy, Activation act);

template <class F>
void visit_params(TablLayerParams& p, F&& f) {
  f(std::string_view("w1"), p.w1.values(), ParamRole::dense);
  f(std::string_view("w"), p.w.values(), ParamRole::fixed_diagonal);
  f(std::string_view("w2"), p.w2.values(), ParamRole::dense);
  f(std::string_view("bias"), p.bias.values(), ParamRole::dense);
  f(std::string_view("lambda"), std::span<double>(&p.lambda, 1), ParamRole::unit_interval);
}

template <class F>
void visit_params(BlLayerParams& p, F&& f) {
  f(std::string_view("w1"), p.w1.values(), ParamRole::dense);
  f(std::string_view("w2"), p.w2.values(), ParamRole::dense);
  f(std::string_view("bias"), p.bias.values(), ParamRole::dense);
}

template <class F>
void visit_grads(TablGrads& g, F&& f) {
  f(g.w1.values());
  f(g.w.values());
  f(g.w2.values());
  f(g.bias.values());
  f(std::span<double>(&g.lambda, 1));
}

template <class F>
void visit_grads(BlGrads& g, F&& f) {
  f(g.w1.values());
  f(g.w2.values());
  f(g.bias.values());
}

namespace detail {

// Shared pieces of the bilinear family, reused by the augmented layers.
Matrix blend(const Matrix& x_bar, const Matrix& a, double lambda);
// phi(product + bias); counts the 2*D'*T' bias/activation operations.
Matrix output_step(Matrix product, const Matrix& bias, Activation act, Matrix* pre,
                   OpCounter* counter);

struct AttentionBackward {
  Matrix d_x_bar;  // direct path only; caller adds dE * W^T
  Matrix d_e;
  double d_lambda = 0.0;
};
AttentionBackward attention_backward(const Matrix& d_x_tilde, const Matrix& x_bar,
                                     const Matrix& a, double lambda);

void require_cache(const std::optional<LayerCache>& cache, const char* op);

}  // namespace detail
}  // namespace tabl
