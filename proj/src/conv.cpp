#include "tabl/conv.hpp"

#include <cmath>
#include <string>

#include "tabl/errors.hpp"

namespace tabl {

std::string_view padding_name(Padding p) { return p == Padding::same ? "same" : "valid"; }

Padding parse_padding(std::string_view name) {
  if (name == "same") return Padding::same;
  if (name == "valid") return Padding::valid;
  throw ConfigError("unknown padding '" + std::string(name) + "'");
}

std::size_t Conv1dParams::output_length(std::size_t t) const {
  const std::size_t padded = padding == Padding::same ? t + kernel - 1 : t;
  if (kernel == 0 || stride == 0 || padded < kernel) return 0;
  return (padded - kernel) / stride + 1;
}

namespace {

std::size_t left_pad(const Conv1dParams& p) {
  return p.padding == Padding::same ? (p.kernel - 1) / 2 : 0;
}

void check_input(const Conv1dParams& p, const Matrix& x) {
  if (x.rows() != p.channels) {
    throw ShapeError("conv expects " + std::to_string(p.channels) + " channels, got input " +
                     x.shape_string());
  }
  if (p.output_length(x.cols()) == 0) {
    throw ShapeError("kernel of size " + std::to_string(p.kernel) +
                     " is larger than the padded input " + x.shape_string());
  }
}

// (D*t) x T_out patch matrix; zero outside the input.
Matrix im2col(const Conv1dParams& p, const Matrix& x) {
  const std::size_t t_out = p.output_length(x.cols());
  const std::size_t pad = left_pad(p);
  Matrix cols(p.channels * p.kernel, t_out);
  for (std::size_t d = 0; d < p.channels; ++d) {
    for (std::size_t j = 0; j < p.kernel; ++j) {
      for (std::size_t o = 0; o < t_out; ++o) {
        const std::size_t pos = o * p.stride + j;
        if (pos < pad || pos - pad >= x.cols()) continue;
        cols(d * p.kernel + j, o) = x(d, pos - pad);
      }
    }
  }
  return cols;
}

Matrix col2im(const Conv1dParams& p, const Matrix& d_cols, std::size_t t) {
  const std::size_t pad = left_pad(p);
  Matrix dx(p.channels, t);
  for (std::size_t d = 0; d < p.channels; ++d) {
    for (std::size_t j = 0; j < p.kernel; ++j) {
      for (std::size_t o = 0; o < d_cols.cols(); ++o) {
        const std::size_t pos = o * p.stride + j;
        if (pos < pad || pos - pad >= t) continue;
        dx(d, pos - pad) += d_cols(d * p.kernel + j, o);
      }
    }
  }
  return dx;
}

void add_bias(Matrix& z, const Matrix& bias) {
  for (std::size_t n = 0; n < z.rows(); ++n)
    for (std::size_t o = 0; o < z.cols(); ++o) z(n, o) += bias(n, 0);
}

Matrix row_sums(const Matrix& m) {
  Matrix out(m.rows(), 1);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, 0) += m(r, c);
  return out;
}

// Khatri-Rao column stack: kr(d*t + j, k) = w2(d, k) * w3(j, k).
Matrix khatri_rao(const CpAuxFilters& aux) {
  const std::size_t d_n = aux.w2.rows();
  const std::size_t t_n = aux.w3.rows();
  Matrix kr(d_n * t_n, aux.rank());
  for (std::size_t d = 0; d < d_n; ++d)
    for (std::size_t j = 0; j < t_n; ++j)
      for (std::size_t k = 0; k < aux.rank(); ++k) kr(d * t_n + j, k) = aux.w2(d, k) * aux.w3(j, k);
  return kr;
}

void check_cp(const Conv1dParams& p, const CpAuxFilters& aux) {
  const std::size_t k = aux.rank();
  if (k == 0) throw DomainError("CP rank must be at least 1");
  if (aux.w1.rows() != p.num_filters() || aux.w2.rows() != p.channels ||
      aux.w3.rows() != p.kernel || aux.w2.cols() != k || aux.w3.cols() != k) {
    throw ShapeError("CP factors " + aux.w1.shape_string() + ", " + aux.w2.shape_string() +
                     ", " + aux.w3.shape_string() + " do not match filters N=" +
                     std::to_string(p.num_filters()) + " D=" + std::to_string(p.channels) +
                     " t=" + std::to_string(p.kernel));
  }
}

ConvOutput finish_forward(const Conv1dParams& p, Matrix z, ConvCache c, const Matrix& x,
                          Mode mode) {
  add_bias(z, p.bias);
  Matrix y = activate(z, p.activation);
  ConvOutput out;
  if (mode == Mode::train) {
    c.x = x;
    c.pre_activation = std::move(z);
    c.output = y;
    out.cache = std::move(c);
  }
  out.y = std::move(y);
  return out;
}

const ConvCache& require_conv_cache(const std::optional<ConvCache>& cache, const char* op) {
  if (!cache) {
    throw StateError(std::string(op) + ": no cache; run the forward pass in train mode first");
  }
  return *cache;
}

}  // namespace

void validate(const Conv1dParams& p) {
  if (p.filters.empty() || p.channels == 0 || p.kernel == 0 || p.stride == 0) {
    throw ShapeError("conv layer has empty filters or zero kernel/stride");
  }
  if (p.filters.cols() != p.channels * p.kernel) {
    throw ShapeError("filters " + p.filters.shape_string() + " do not unfold D=" +
                     std::to_string(p.channels) + " x t=" + std::to_string(p.kernel));
  }
  if (p.bias.rows() != p.filters.rows() || p.bias.cols() != 1) {
    throw ShapeError("conv bias " + p.bias.shape_string() + " must be N x 1");
  }
}

ConvOutput conv1d_forward(const Conv1dParams& p, const Matrix& x, Mode mode,
                          OpCounter* counter) {
  check_input(p, x);
  ConvCache c;
  c.columns = im2col(p, x);
  Matrix z = matmul(p.filters, c.columns, counter);
  return finish_forward(p, std::move(z), std::move(c), x, mode);
}

ConvGrads conv1d_backward(const Conv1dParams& p, const std::optional<ConvCache>& cache,
                          const Matrix& dy) {
  const ConvCache& c = require_conv_cache(cache, "conv1d_backward");
  require_same_shape(dy, c.output, "conv1d_backward");
  const Matrix dz = activation_backward(c.pre_activation, c.output, dy, p.activation);
  ConvGrads g;
  g.filters = matmul_nt(dz, c.columns);
  g.bias = row_sums(dz);
  g.dx = col2im(p, matmul_tn(p.filters, dz), c.x.cols());
  return g;
}

Conv1dParams init_conv(std::size_t filters, std::size_t channels, std::size_t kernel,
                       Activation act, Rng& rng, Padding padding, std::size_t stride) {
  if (filters == 0 || channels == 0 || kernel == 0 || stride == 0) {
    throw ShapeError("conv dimensions must be positive");
  }
  Conv1dParams p;
  p.filters = Matrix(filters, channels * kernel);
  const double limit =
      std::sqrt(6.0 / static_cast<double>(channels * kernel + filters * kernel));
  for (double& v : p.filters.values()) v = rng.uniform(-limit, limit);
  p.bias = Matrix(filters, 1);
  p.channels = channels;
  p.kernel = kernel;
  p.stride = stride;
  p.padding = padding;
  p.activation = act;
  return p;
}

CpAuxFilters zero_cp_aux(const Conv1dParams& p, std::size_t rank) {
  if (rank == 0) throw DomainError("CP rank must be at least 1");
  return {Matrix(p.num_filters(), rank), Matrix(p.channels, rank), Matrix(p.kernel, rank)};
}

CpAuxFilters init_cp_aux(const Conv1dParams& p, std::size_t rank, Rng& rng, double scale) {
  CpAuxFilters a = zero_cp_aux(p, rank);
  for (double& v : a.w1.values()) v = rng.uniform(-scale, scale);
  for (double& v : a.w2.values()) v = rng.uniform(-scale, scale);
  return a;
}

Matrix materialize(const CpAuxFilters& aux, std::size_t kernel) {
  if (aux.w3.rows() != kernel) throw ShapeError("CP temporal factor does not match kernel");
  return matmul_nt(aux.w1, khatri_rao(aux));
}

ConvOutput aug_conv_forward(const Conv1dParams& p, const CpAuxFilters& aux, const Matrix& x,
                            Mode mode, OpCounter* counter) {
  check_input(p, x);
  check_cp(p, aux);
  ConvCache c;
  c.columns = im2col(p, x);
  Matrix z = matmul(p.filters, c.columns, counter);
  c.aux_proj = matmul_tn(khatri_rao(aux), c.columns, counter);
  matmul_accumulate(aux.w1, c.aux_proj, z, counter);
  return finish_forward(p, std::move(z), std::move(c), x, mode);
}

CpGrads aug_conv_backward(const Conv1dParams& p, const CpAuxFilters& aux,
                          const std::optional<ConvCache>& cache, const Matrix& dy) {
  const ConvCache& c = require_conv_cache(cache, "aug_conv_backward");
  require_same_shape(dy, c.output, "aug_conv_backward");
  check_cp(p, aux);
  const Matrix dz = activation_backward(c.pre_activation, c.output, dy, p.activation);
  const Matrix kr = khatri_rao(aux);
  CpGrads g;
  g.w1 = matmul_nt(dz, c.aux_proj);
  const Matrix d_proj = matmul_tn(aux.w1, dz);       // K x T_out
  const Matrix d_kr = matmul_nt(c.columns, d_proj);  // (D*t) x K
  g.w2 = Matrix(aux.w2.rows(), aux.rank());
  g.w3 = Matrix(aux.w3.rows(), aux.rank());
  const std::size_t t_n = aux.w3.rows();
  for (std::size_t d = 0; d < aux.w2.rows(); ++d) {
    for (std::size_t j = 0; j < t_n; ++j) {
      for (std::size_t k = 0; k < aux.rank(); ++k) {
        const double v = d_kr(d * t_n + j, k);
        g.w2(d, k) += v * aux.w3(j, k);
        g.w3(j, k) += v * aux.w2(d, k);
      }
    }
  }
  Matrix d_cols = matmul_tn(p.filters, dz);
  matmul_accumulate(kr, d_proj, d_cols);
  g.dx = col2im(p, d_cols, c.x.cols());
  return g;
}

Conv1dParams fold_conv(const Conv1dParams& p, const CpAuxFilters& aux) {
  check_cp(p, aux);
  Conv1dParams out = p;
  axpy(out.filters, 1.0, materialize(aux, p.kernel));
  return out;
}

std::uint64_t conv_param_count(const Conv1dParams& p) {
  return p.filters.size() + p.bias.size();
}

std::uint64_t cp_param_count(const CpAuxFilters& aux) {
  return aux.w1.size() + aux.w2.size() + aux.w3.size();
}

namespace {

Matrix flatten(const Matrix& x) {
  Matrix v(x.size(), 1);
  auto src = x.values();
  auto dst = v.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
  return v;
}

Matrix unflatten(const Matrix& v, std::size_t rows, std::size_t cols) {
  Matrix x(rows, cols);
  auto src = v.values();
  auto dst = x.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i];
  return x;
}

void check_dense_input(const DenseParams& p, const Matrix& x) {
  if (x.size() != p.w.cols()) {
    throw ShapeError("dense head expects " + std::to_string(p.w.cols()) +
                     " features, got input " + x.shape_string());
  }
}

DenseOutput finish_dense(const DenseParams& p, Matrix z, DenseCache c, Matrix xv, Mode mode) {
  axpy(z, 1.0, p.bias);
  Matrix y = activate(z, p.activation);
  DenseOutput out;
  if (mode == Mode::train) {
    c.x = std::move(xv);
    c.pre_activation = std::move(z);
    c.output = y;
    out.cache = std::move(c);
  }
  out.y = std::move(y);
  return out;
}

const DenseCache& require_dense_cache(const std::optional<DenseCache>& cache, const char* op) {
  if (!cache) {
    throw StateError(std::string(op) + ": no cache; run the forward pass in train mode first");
  }
  return *cache;
}

}  // namespace

DenseOutput dense_forward(const DenseParams& p, const Matrix& x, Mode mode,
                          OpCounter* counter) {
  check_dense_input(p, x);
  Matrix xv = flatten(x);
  Matrix z = matmul(p.w, xv, counter);
  return finish_dense(p, std::move(z), DenseCache{}, std::move(xv), mode);
}

DenseGrads dense_backward(const DenseParams& p, const std::optional<DenseCache>& cache,
                          const Matrix& dy, std::size_t in_rows, std::size_t in_cols) {
  const DenseCache& c = require_dense_cache(cache, "dense_backward");
  require_same_shape(dy, c.output, "dense_backward");
  const Matrix dz = activation_backward(c.pre_activation, c.output, dy, p.activation);
  DenseGrads g;
  g.w = matmul_nt(dz, c.x);
  g.bias = dz;
  g.dx = unflatten(matmul_tn(p.w, dz), in_rows, in_cols);
  return g;
}

DenseParams init_dense(std::size_t classes, std::size_t features, Activation act, Rng& rng) {
  if (classes == 0 || features == 0) throw ShapeError("dense dimensions must be positive");
  DenseParams p;
  p.w = Matrix(classes, features);
  const double limit = std::sqrt(6.0 / static_cast<double>(classes + features));
  for (double& v : p.w.values()) v = rng.uniform(-limit, limit);
  p.bias = Matrix(classes, 1);
  p.activation = act;
  return p;
}

DenseOutput aug_dense_forward(const DenseParams& p, const LowRank& aux, const Matrix& x,
                              Mode mode, OpCounter* counter) {
  check_dense_input(p, x);
  Matrix xv = flatten(x);
  Matrix z = matmul(p.w, xv, counter);
  DenseCache c;
  c.r_x = matmul(aux.right, xv, counter);
  matmul_accumulate(aux.left, c.r_x, z, counter);
  return finish_dense(p, std::move(z), std::move(c), std::move(xv), mode);
}

DenseAuxGrads aug_dense_backward(const DenseParams& p, const LowRank& aux,
                                 const std::optional<DenseCache>& cache, const Matrix& dy,
                                 std::size_t in_rows, std::size_t in_cols) {
  const DenseCache& c = require_dense_cache(cache, "aug_dense_backward");
  require_same_shape(dy, c.output, "aug_dense_backward");
  const Matrix dz = activation_backward(c.pre_activation, c.output, dy, p.activation);
  DenseAuxGrads g;
  g.w.left = matmul_nt(dz, c.r_x);
  const Matrix lt_dz = matmul_tn(aux.left, dz);  // K x 1
  g.w.right = matmul_nt(lt_dz, c.x);
  Matrix dxv = matmul_tn(p.w, dz);
  matmul_accumulate(transpose(aux.right), lt_dz, dxv);
  g.dx = unflatten(dxv, in_rows, in_cols);
  return g;
}

DenseParams fold_dense(const DenseParams& p, const LowRank& aux) {
  DenseParams out = p;
  matmul_accumulate(aux.left, aux.right, out.w);
  return out;
}

CnnArchSpec default_cnn_arch() {
  CnnArchSpec a;
  a.layers = {{16, 5}, {16, 5}, {32, 3}, {32, 3}, {32, 3}, {16, 3}, {16, 3}};
  return a;
}

}  // namespace tabl
