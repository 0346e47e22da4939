#include "tabl/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tabl/errors.hpp"

namespace tabl {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softmax_columns: return "softmax";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "softmax" || name == "softmax_columns") return Activation::softmax_columns;
  if (name == "identity" || name == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Matrix activate(const Matrix& z, Activation act) {
  switch (act) {
    case Activation::relu: {
      Matrix y = z;
      for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case Activation::softmax_columns: return column_softmax(z);
    case Activation::identity: return z;
  }
  return z;
}

Matrix activation_backward(const Matrix& z, const Matrix& y, const Matrix& dy, Activation act) {
  require_same_shape(z, dy, "activation_backward");
  switch (act) {
    case Activation::relu: {
      Matrix dz = dy;
      auto zv = z.values();
      auto d = dz.values();
      for (std::size_t i = 0; i < d.size(); ++i)
        if (!(zv[i] > 0.0)) d[i] = 0.0;
      return dz;
    }
    case Activation::softmax_columns: {
      Matrix dz(z.rows(), z.cols());
      for (std::size_t j = 0; j < z.cols(); ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < z.rows(); ++i) dot += y(i, j) * dy(i, j);
        for (std::size_t i = 0; i < z.rows(); ++i) dz(i, j) = y(i, j) * (dy(i, j) - dot);
      }
      return dz;
    }
    case Activation::identity: return dy;
  }
  return dy;
}

namespace detail {

Matrix blend(const Matrix& x_bar, const Matrix& a, double lambda) {
  if (lambda == 0.0) return x_bar;
  Matrix out(x_bar.rows(), x_bar.cols());
  auto xb = x_bar.values();
  auto av = a.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = lambda * (xb[i] * av[i]) + (1.0 - lambda) * xb[i];
  return out;
}

Matrix output_step(Matrix product, const Matrix& bias, Activation act, Matrix* pre,
                   OpCounter* counter) {
  require_same_shape(product, bias, "bias add");
  auto p = product.values();
  auto b = bias.values();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += b[i];
  count(counter, 2ULL * product.size());
  Matrix y = activate(product, act);
  if (pre != nullptr) *pre = std::move(product);
  return y;
}

AttentionBackward attention_backward(const Matrix& d_x_tilde, const Matrix& x_bar,
                                     const Matrix& a, double lambda) {
  AttentionBackward out;
  out.d_x_bar = Matrix(x_bar.rows(), x_bar.cols());
  Matrix d_a(x_bar.rows(), x_bar.cols());
  for (std::size_t i = 0; i < x_bar.rows(); ++i) {
    for (std::size_t j = 0; j < x_bar.cols(); ++j) {
      const double g = d_x_tilde(i, j);
      out.d_lambda += g * (x_bar(i, j) * a(i, j) - x_bar(i, j));
      out.d_x_bar(i, j) = g * (lambda * a(i, j) + (1.0 - lambda));
      d_a(i, j) = lambda * g * x_bar(i, j);
    }
  }
  out.d_e = Matrix(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) dot += a(i, j) * d_a(i, j);
    for (std::size_t j = 0; j < a.cols(); ++j) out.d_e(i, j) = a(i, j) * (d_a(i, j) - dot);
  }
  return out;
}

void require_cache(const std::optional<LayerCache>& cache, const char* op) {
  if (!cache) {
    throw StateError(std::string(op) + ": no cache; run the forward pass in train mode first");
  }
}

namespace {

LayerOutput bilinear_forward(const Matrix& w1, const Matrix* w, const Matrix& w2,
                             const Matrix& bias, double lambda, Activation act, const Matrix& x,
                             Mode mode, OpCounter* counter) {
  if (x.rows() != w1.cols() || x.cols() != w2.rows()) {
    throw ShapeError("layer expects input " + std::to_string(w1.cols()) + "x" +
                     std::to_string(w2.rows()) + ", got " + x.shape_string());
  }
  LayerCache c;
  c.x_bar = matmul(w1, x, counter);
  if (w != nullptr) {
    c.e = matmul(c.x_bar, *w, counter);
    c.a = row_softmax(c.e);
    c.x_tilde = blend(c.x_bar, c.a, lambda);
  } else {
    c.x_tilde = c.x_bar;
  }
  Matrix y = output_step(matmul(c.x_tilde, w2, counter), bias, act, &c.pre_activation, counter);
  LayerOutput out;
  if (mode == Mode::train) {
    c.x = x;
    c.output = y;
    out.cache = std::move(c);
  }
  out.y = std::move(y);
  return out;
}

}  // namespace
}  // namespace detail

LayerOutput tabl_forward(const TablLayerParams& p, const Matrix& x, Mode mode,
                         OpCounter* counter) {
  return detail::bilinear_forward(p.w1, &p.w, p.w2, p.bias, p.lambda, p.activation, x, mode,
                                  counter);
}

LayerOutput bl_forward(const BlLayerParams& p, const Matrix& x, Mode mode, OpCounter* counter) {
  return detail::bilinear_forward(p.w1, nullptr, p.w2, p.bias, 0.0, p.activation, x, mode,
                                  counter);
}

TablGrads tabl_backward(const TablLayerParams& p, const std::optional<LayerCache>& cache,
                        const Matrix& dy) {
  detail::require_cache(cache, "tabl_backward");
  const LayerCache& c = *cache;
  require_same_shape(dy, c.output, "tabl_backward");
  TablGrads g;
  const Matrix dz = activation_backward(c.pre_activation, c.output, dy, p.activation);
  g.bias = dz;
  g.w2 = matmul_tn(c.x_tilde, dz);
  const Matrix d_x_tilde = matmul_nt(dz, p.w2);
  auto att = detail::attention_backward(d_x_tilde, c.x_bar, c.a, p.lambda);
  g.lambda = att.d_lambda;
  g.w = matmul_tn(c.x_bar, att.d_e);
  for (std::size_t i = 0; i < g.w.rows(); ++i) g.w(i, i) = 0.0;
  Matrix d_x_bar = std::move(att.d_x_bar);
  matmul_accumulate(att.d_e, transpose(p.w), d_x_bar);
  g.w1 = matmul_nt(d_x_bar, c.x);
  g.dx = matmul_tn(p.w1, d_x_bar);
  return g;
}

BlGrads bl_backward(const BlLayerParams& p, const std::optional<LayerCache>& cache,
                    const Matrix& dy) {
  detail::require_cache(cache, "bl_backward");
  const LayerCache& c = *cache;
  require_same_shape(dy, c.output, "bl_backward");
  BlGrads g;
  const Matrix dz = activation_backward(c.pre_activation, c.output, dy, p.activation);
  g.bias = dz;
  g.w2 = matmul_tn(c.x_tilde, dz);
  const Matrix d_x_bar = matmul_nt(dz, p.w2);
  g.w1 = matmul_nt(d_x_bar, c.x);
  g.dx = matmul_tn(p.w1, d_x_bar);
  return g;
}

namespace {

Matrix glorot(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
              Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-limit, limit);
  return m;
}

void check_dims(const LayerDims& d) {
  if (d.d == 0 || d.t == 0 || d.d_out == 0 || d.t_out == 0) {
    throw ShapeError("layer dimensions must be positive");
  }
}

}  // namespace

TablLayerParams init_tabl(const LayerDims& dims, Activation act, Rng& rng) {
  check_dims(dims);
  TablLayerParams p;
  p.w1 = glorot(dims.d_out, dims.d, dims.d, dims.d_out, rng);
  p.w = glorot(dims.t, dims.t, dims.t, dims.t, rng);
  p.w2 = glorot(dims.t, dims.t_out, dims.t, dims.t_out, rng);
  p.bias = Matrix(dims.d_out, dims.t_out);
  p.lambda = 0.5;
  p.activation = act;
  enforce_constraints(p);
  return p;
}

BlLayerParams init_bl(const LayerDims& dims, Activation act, Rng& rng) {
  check_dims(dims);
  BlLayerParams p;
  p.w1 = glorot(dims.d_out, dims.d, dims.d, dims.d_out, rng);
  p.w2 = glorot(dims.t, dims.t_out, dims.t, dims.t_out, rng);
  p.bias = Matrix(dims.d_out, dims.t_out);
  p.activation = act;
  return p;
}

void enforce_constraints(TablLayerParams& p) {
  p.lambda = std::clamp(p.lambda, 0.0, 1.0);
  const double diag = 1.0 / static_cast<double>(p.w.rows());
  for (std::size_t i = 0; i < p.w.rows(); ++i) p.w(i, i) = diag;
}

namespace {

void validate_bilinear(const Matrix& w1, const Matrix& w2, const Matrix& bias) {
  if (w1.empty() || w2.empty() || bias.empty()) throw ShapeError("bilinear layer has empty weights");
  if (bias.rows() != w1.rows() || bias.cols() != w2.cols()) {
    throw ShapeError("bias " + bias.shape_string() + " does not match W1 " + w1.shape_string() +
                     " / W2 " + w2.shape_string());
  }
}

}  // namespace

void validate(const BlLayerParams& p) { validate_bilinear(p.w1, p.w2, p.bias); }

void validate(const TablLayerParams& p) {
  validate_bilinear(p.w1, p.w2, p.bias);
  if (p.w.rows() != p.w.cols() || p.w.rows() != p.w2.rows()) {
    throw ShapeError("attention matrix " + p.w.shape_string() + " must be TxT with T = " +
                     std::to_string(p.w2.rows()));
  }
  if (!(p.lambda >= 0.0 && p.lambda <= 1.0)) throw DomainError("lambda outside [0, 1]");
}

}  // namespace tabl
