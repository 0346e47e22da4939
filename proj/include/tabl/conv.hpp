#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "tabl/adapters.hpp"
#include "tabl/layers.hpp"

namespace tabl {

enum class Padding : std::uint8_t { same = 0, valid = 1 };

std::string_view padding_name(Padding p);
Padding parse_padding(std::string_view name);

/// 1D convolution over a D x T multivariate series.
///
/// `filters` stores the N x D x t tensor unfolded as N x (D*t) with the
/// kernel index fastest: filters(n, d*t + j) = W[n, d, j].
struct Conv1dParams {
  Matrix filters;
  Matrix bias;  // N x 1
  std::size_t channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  Padding padding = Padding::same;
  Activation activation = Activation::relu;

  std::size_t num_filters() const { return filters.rows(); }
  std::size_t output_length(std::size_t t) const;
};

/// Rank-K CP auxiliary filters: sum_k w1(:,k) o w2(:,k) o w3(:,k).
struct CpAuxFilters {
  Matrix w1;  // N x K
  Matrix w2;  // D x K
  Matrix w3;  // t x K

  std::size_t rank() const noexcept { return w1.cols(); }
};

struct ConvCache {
  Matrix x;
  Matrix columns;  // (D*t) x T_out
  Matrix aux_proj;  // K x T_out, augmented pass only
  Matrix pre_activation;
  Matrix output;
};

struct ConvOutput {
  Matrix y;
  std::optional<ConvCache> cache;
};

struct ConvGrads {
  Matrix filters;
  Matrix bias;
  Matrix dx;
};

struct CpGrads {
  Matrix w1, w2, w3;
  Matrix dx;
};

ConvOutput conv1d_forward(const Conv1dParams& p, const Matrix& x, Mode mode,
                          OpCounter* counter = nullptr);
ConvGrads conv1d_backward(const Conv1dParams& p, const std::optional<ConvCache>& cache,
                          const Matrix& dy);

Conv1dParams init_conv(std::size_t filters, std::size_t channels, std::size_t kernel,
                       Activation act, Rng& rng, Padding padding = Padding::same,
                       std::size_t stride = 1);
void validate(const Conv1dParams& p);

// w1, w2 ~ U(-scale, scale), w3 zero.
CpAuxFilters init_cp_aux(const Conv1dParams& p, std::size_t rank, Rng& rng,
                         double scale = 1e-2);
CpAuxFilters zero_cp_aux(const Conv1dParams& p, std::size_t rank);
/// The auxiliary tensor unfolded like Conv1dParams::filters.
Matrix materialize(const CpAuxFilters& aux, std::size_t kernel);

/// X * W + X * W_aux, evaluated through the factors without forming W_aux.
ConvOutput aug_conv_forward(const Conv1dParams& p, const CpAuxFilters& aux, const Matrix& x,
                            Mode mode, OpCounter* counter = nullptr);
CpGrads aug_conv_backward(const Conv1dParams& p, const CpAuxFilters& aux,
                          const std::optional<ConvCache>& cache, const Matrix& dy);

Conv1dParams fold_conv(const Conv1dParams& p, const CpAuxFilters& aux);

std::uint64_t conv_param_count(const Conv1dParams& p);
std::uint64_t cp_param_count(const CpAuxFilters& aux);

/// Fully connected classifier head on the flattened (row-major) feature map.
struct DenseParams {
  Matrix w;     // classes x F
  Matrix bias;  // classes x 1
  Activation activation = Activation::softmax_columns;
};

struct DenseCache {
  Matrix x;      // F x 1
  Matrix r_x;    // K x 1, augmented pass only
  Matrix pre_activation;
  Matrix output;
};

struct DenseOutput {
  Matrix y;
  std::optional<DenseCache> cache;
};

struct DenseGrads {
  Matrix w;
  Matrix bias;
  Matrix dx;  // same shape as the unflattened input
};

struct DenseAuxGrads {
  LowRank w;
  Matrix dx;
};

DenseOutput dense_forward(const DenseParams& p, const Matrix& x, Mode mode,
                          OpCounter* counter = nullptr);
DenseGrads dense_backward(const DenseParams& p, const std::optional<DenseCache>& cache,
                          const Matrix& dy, std::size_t in_rows, std::size_t in_cols);
DenseParams init_dense(std::size_t classes, std::size_t features, Activation act, Rng& rng);

DenseOutput aug_dense_forward(const DenseParams& p, const LowRank& aux, const Matrix& x,
                              Mode mode, OpCounter* counter = nullptr);
DenseAuxGrads aug_dense_backward(const DenseParams& p, const LowRank& aux,
                                 const std::optional<DenseCache>& cache, const Matrix& dy,
                                 std::size_t in_rows, std::size_t in_cols);
DenseParams fold_dense(const DenseParams& p, const LowRank& aux);

struct ConvSpec {
  std::size_t filters = 0;
  std::size_t kernel = 0;
};

/// Convolution stack followed by a flatten + dense softmax head.
struct CnnArchSpec {
  std::vector<ConvSpec> layers;
  std::size_t classes = 3;
  Padding padding = Padding::same;
  Activation hidden_activation = Activation::relu;
};

/// Seven-layer 1D CNN used for the convolutional experiments.
CnnArchSpec default_cnn_arch();

template <class F>
void visit_params(Conv1dParams& p, F&& f) {
  f(std::string_view("filters"), p.filters.values(), ParamRole::dense);
  f(std::string_view("bias"), p.bias.values(), ParamRole::dense);
}

template <class F>
void visit_grads(ConvGrads& g, F&& f) {
  f(g.filters.values());
  f(g.bias.values());
}

template <class F>
void visit_params(CpAuxFilters& a, F&& f) {
  f(std::string_view("cp.w1"), a.w1.values(), ParamRole::dense);
  f(std::string_view("cp.w2"), a.w2.values(), ParamRole::dense);
  f(std::string_view("cp.w3"), a.w3.values(), ParamRole::dense);
}

template <class F>
void visit_grads(CpGrads& g, F&& f) {
  f(g.w1.values());
  f(g.w2.values());
  f(g.w3.values());
}

template <class F>
void visit_params(DenseParams& p, F&& f) {
  f(std::string_view("w"), p.w.values(), ParamRole::dense);
  f(std::string_view("bias"), p.bias.values(), ParamRole::dense);
}

template <class F>
void visit_grads(DenseGrads& g, F&& f) {
  f(g.w.values());
  f(g.bias.values());
}

template <class F>
void visit_params(LowRank& a, F&& f) {
  f(std::string_view("aux.left"), a.left.values(), ParamRole::dense);
  f(std::string_view("aux.right"), a.right.values(), ParamRole::dense);
}

template <class F>
void visit_grads(DenseAuxGrads& g, F&& f) {
  f(g.w.left.values());
  f(g.w.right.values());
}

}  // namespace tabl
