#include "tabl/adapters.hpp"

#include <algorithm>
#include <string>

#include "tabl/errors.hpp"

namespace tabl {

std::string_view strategy_name(Strategy s) { return s == Strategy::is1 ? "is1" : "is2"; }

Strategy parse_strategy(std::string_view name) {
  if (name == "is1" || name == "IS1") return Strategy::is1;
  if (name == "is2" || name == "IS2") return Strategy::is2;
  throw ConfigError("unknown implementation strategy '" + std::string(name) + "'");
}

std::size_t max_rank(const LayerDims& d) { return std::min({d.d, d.d_out, d.t, d.t_out}); }

namespace {

void check_rank(const LayerDims& dims, std::size_t rank) {
  if (rank == 0) throw DomainError("auxiliary rank must be at least 1");
  if (rank > max_rank(dims)) {
    throw DomainError("rank " + std::to_string(rank) + " exceeds min(D, D', T, T') = " +
                      std::to_string(max_rank(dims)));
  }
}

LowRank make_factor(std::size_t m, std::size_t n, std::size_t rank, Rng* rng, double scale) {
  LowRank f{Matrix(m, rank), Matrix(rank, n)};
  if (rng != nullptr) {
    for (double& v : f.left.values()) v = rng->uniform(-scale, scale);
  }
  return f;
}

LowRank pad(const LowRank& f, std::size_t rank) {
  LowRank out{Matrix(f.left.rows(), rank), Matrix(rank, f.right.cols())};
  for (std::size_t i = 0; i < f.left.rows(); ++i)
    for (std::size_t k = 0; k < f.rank(); ++k) out.left(i, k) = f.left(i, k);
  for (std::size_t k = 0; k < f.rank(); ++k)
    for (std::size_t j = 0; j < f.right.cols(); ++j) out.right(k, j) = f.right(k, j);
  return out;
}

void check_factor(const LowRank& f, std::size_t m, std::size_t n, std::size_t rank,
                  const char* which) {
  if (f.left.rows() != m || f.left.cols() != rank || f.right.rows() != rank ||
      f.right.cols() != n) {
    throw ShapeError(std::string("aux factor ") + which + " has shapes " +
                     f.left.shape_string() + " and " + f.right.shape_string() +
                     ", expected " + std::to_string(m) + "x" + std::to_string(rank) + " and " +
                     std::to_string(rank) + "x" + std::to_string(n));
  }
}

void check_aux(const AuxFactors& aux, const LayerDims& d, bool attention) {
  const std::size_t k = aux.rank();
  check_factor(aux.w1, d.d_out, d.d, k, "w1");
  check_factor(aux.w2, d.t, d.t_out, k, "w2");
  if (attention != aux.w.has_value()) {
    throw ShapeError(attention ? "attention layer needs an attention aux factor"
                               : "bilinear layer cannot carry an attention aux factor");
  }
  if (aux.w) check_factor(*aux.w, d.t, d.t, k, "w");
}

// W + L R, counting the K-inner product.
Matrix materialize(const Matrix& w, const LowRank& f, OpCounter* counter) {
  Matrix out = w;
  matmul_accumulate(f.left, f.right, out, counter);
  return out;
}

void check_input(const LayerDims& d, const Matrix& x) {
  if (x.rows() != d.d || x.cols() != d.t) {
    throw ShapeError("augmented layer expects input " + std::to_string(d.d) + "x" +
                     std::to_string(d.t) + ", got " + x.shape_string());
  }
}

}  // namespace

namespace detail {

AugOutput forward_is1(const Matrix& w1, const Matrix* w, const Matrix& w2, const Matrix& bias,
                      double lambda, Activation act, const AuxFactors& aux, const Matrix& x,
                      Mode mode, OpCounter* counter) {
  Matrix w1n = materialize(w1, aux.w1, counter);
  Matrix wn = w != nullptr ? materialize(*w, *aux.w, counter) : Matrix();
  Matrix w2n = materialize(w2, aux.w2, counter);

  AugCache c;
  c.strategy = Strategy::is1;
  c.core.x_bar = matmul(w1n, x, counter);
  if (w != nullptr) {
    c.core.e = matmul(c.core.x_bar, wn, counter);
    c.core.a = row_softmax(c.core.e);
    c.core.x_tilde = detail::blend(c.core.x_bar, c.core.a, lambda);
  } else {
    c.core.x_tilde = c.core.x_bar;
  }
  Matrix y = detail::output_step(matmul(c.core.x_tilde, w2n, counter), bias, act,
                                 &c.core.pre_activation, counter);
  AugOutput out;
  if (mode == Mode::train) {
    c.core.x = x;
    c.core.output = y;
    c.w1_new = std::move(w1n);
    c.w_new = std::move(wn);
    c.w2_new = std::move(w2n);
    out.cache = std::move(c);
  }
  out.y = std::move(y);
  return out;
}

AugOutput forward_is2(const Matrix& w1, const Matrix* w, const Matrix& w2, const Matrix& bias,
                      double lambda, Activation act, const AuxFactors& aux, const Matrix& x,
                      Mode mode, OpCounter* counter) {
  AugCache c;
  c.strategy = Strategy::is2;
  // X_bar = W1 X + L1 (R1 X)
  c.core.x_bar = matmul(w1, x, counter);
  c.r1_x = matmul(aux.w1.right, x, counter);
  matmul_accumulate(aux.w1.left, c.r1_x, c.core.x_bar, counter);
  if (w != nullptr) {
    // E = X_bar W + (X_bar L) R
    c.core.e = matmul(c.core.x_bar, *w, counter);
    c.x_bar_l = matmul(c.core.x_bar, aux.w->left, counter);
    matmul_accumulate(c.x_bar_l, aux.w->right, c.core.e, counter);
    c.core.a = row_softmax(c.core.e);
    c.core.x_tilde = detail::blend(c.core.x_bar, c.core.a, lambda);
  } else {
    c.core.x_tilde = c.core.x_bar;
  }
  // Y = phi(X_tilde W2 + (X_tilde L2) R2 + B)
  Matrix product = matmul(c.core.x_tilde, w2, counter);
  c.x_tilde_l2 = matmul(c.core.x_tilde, aux.w2.left, counter);
  matmul_accumulate(c.x_tilde_l2, aux.w2.right, product, counter);
  Matrix y = detail::output_step(std::move(product), bias, act, &c.core.pre_activation, counter);
  AugOutput out;
  if (mode == Mode::train) {
    c.core.x = x;
    c.core.output = y;
    out.cache = std::move(c);
  }
  out.y = std::move(y);
  return out;
}

}  // namespace detail

AuxFactors init_aux(const LayerDims& dims, std::size_t rank, bool attention, Rng& rng,
                    double scale) {
  check_rank(dims, rank);
  AuxFactors a;
  a.w1 = make_factor(dims.d_out, dims.d, rank, &rng, scale);
  if (attention) a.w = make_factor(dims.t, dims.t, rank, &rng, scale);
  a.w2 = make_factor(dims.t, dims.t_out, rank, &rng, scale);
  return a;
}

AuxFactors zero_aux(const LayerDims& dims, std::size_t rank, bool attention) {
  check_rank(dims, rank);
  AuxFactors a;
  a.w1 = make_factor(dims.d_out, dims.d, rank, nullptr, 0.0);
  if (attention) a.w = make_factor(dims.t, dims.t, rank, nullptr, 0.0);
  a.w2 = make_factor(dims.t, dims.t_out, rank, nullptr, 0.0);
  return a;
}

AuxFactors pad_rank(const AuxFactors& aux, std::size_t rank) {
  if (rank < aux.rank()) throw DomainError("pad_rank cannot shrink the rank");
  AuxFactors out;
  out.w1 = pad(aux.w1, rank);
  if (aux.w) out.w = pad(*aux.w, rank);
  out.w2 = pad(aux.w2, rank);
  return out;
}

AugOutput aug_forward_is1(const AugmentedTablLayer& l, const Matrix& x, Mode mode,
                          OpCounter* counter) {
  check_input(l.base.dims(), x);
  check_aux(l.aux, l.base.dims(), true);
  return detail::forward_is1(l.base.w1, &l.base.w, l.base.w2, l.base.bias, l.base.lambda,
                     l.base.activation, l.aux, x, mode, counter);
}

AugOutput aug_forward_is2(const AugmentedTablLayer& l, const Matrix& x, Mode mode,
                          OpCounter* counter) {
  check_input(l.base.dims(), x);
  check_aux(l.aux, l.base.dims(), true);
  return detail::forward_is2(l.base.w1, &l.base.w, l.base.w2, l.base.bias, l.base.lambda,
                     l.base.activation, l.aux, x, mode, counter);
}

AugOutput aug_forward(const AugmentedTablLayer& l, const Matrix& x, Mode mode,
                      OpCounter* counter) {
  return l.strategy == Strategy::is1 ? aug_forward_is1(l, x, mode, counter)
                                     : aug_forward_is2(l, x, mode, counter);
}

AugOutput aug_forward(const AugmentedBlLayer& l, const Matrix& x, Mode mode,
                      OpCounter* counter) {
  check_input(l.base.dims(), x);
  check_aux(l.aux, l.base.dims(), false);
  const auto& b = l.base;
  return l.strategy == Strategy::is1
             ? detail::forward_is1(b.w1, nullptr, b.w2, b.bias, 0.0, b.activation, l.aux, x, mode,
                           counter)
             : detail::forward_is2(b.w1, nullptr, b.w2, b.bias, 0.0, b.activation, l.aux, x, mode,
                           counter);
}

namespace {

void require_aug_cache(const std::optional<AugCache>& cache, Strategy s, const char* op) {
  if (!cache) {
    throw StateError(std::string(op) + ": no cache; run the forward pass in train mode first");
  }
  if (cache->strategy != s) {
    throw StateError(std::string(op) + ": cache was produced by a different strategy");
  }
}

}  // namespace

AuxGrads aug_backward(const AugmentedTablLayer& l, const std::optional<AugCache>& cache,
                      const Matrix& dy) {
  require_aug_cache(cache, l.strategy, "aug_backward");
  detail::AuxGradAccumulator acc(l.aux, l.strategy, l.base.dims());
  double d_lambda = 0.0;
  Matrix dx;
  if (l.strategy == Strategy::is1) {
    dx = acc.accumulate(cache->w1_new, &cache->w_new, cache->w2_new, l.base.lambda,
                        l.base.activation, l.aux, *cache, dy, &d_lambda);
  } else {
    dx = acc.accumulate(l.base.w1, &l.base.w, l.base.w2, l.base.lambda, l.base.activation,
                        l.aux, *cache, dy, &d_lambda);
  }
  AuxGrads g = acc.finish(l.aux);
  g.lambda = l.train_lambda ? d_lambda : 0.0;
  g.dx = std::move(dx);
  return g;
}

AuxGrads aug_backward(const AugmentedBlLayer& l, const std::optional<AugCache>& cache,
                      const Matrix& dy) {
  require_aug_cache(cache, l.strategy, "aug_backward");
  detail::AuxGradAccumulator acc(l.aux, l.strategy, l.base.dims());
  Matrix dx;
  if (l.strategy == Strategy::is1) {
    dx = acc.accumulate(cache->w1_new, nullptr, cache->w2_new, 0.0, l.base.activation, l.aux,
                        *cache, dy, nullptr);
  } else {
    dx = acc.accumulate(l.base.w1, nullptr, l.base.w2, 0.0, l.base.activation, l.aux, *cache,
                        dy, nullptr);
  }
  AuxGrads g = acc.finish(l.aux);
  g.dx = std::move(dx);
  return g;
}

namespace detail {

AuxGradAccumulator::AuxGradAccumulator(const AuxFactors& aux, Strategy strategy,
                                       const LayerDims& dims)
    : strategy_(strategy), attention_(aux.w.has_value()) {
  if (strategy_ == Strategy::is1) {
    g_w1_ = Matrix(dims.d_out, dims.d);
    if (attention_) g_w_ = Matrix(dims.t, dims.t);
    g_w2_ = Matrix(dims.t, dims.t_out);
  } else {
    const std::size_t k = aux.rank();
    factored_.w1 = make_factor(dims.d_out, dims.d, k, nullptr, 0.0);
    if (attention_) factored_.w = make_factor(dims.t, dims.t, k, nullptr, 0.0);
    factored_.w2 = make_factor(dims.t, dims.t_out, k, nullptr, 0.0);
  }
}

Matrix AuxGradAccumulator::accumulate(const Matrix& w1, const Matrix* w, const Matrix& w2,
                                      double lambda, Activation act, const AuxFactors& aux,
                                      const AugCache& cache, const Matrix& dy,
                                      double* lambda_grad) {
  const LayerCache& c = cache.core;
  require_same_shape(dy, c.output, "aug_backward");
  const Matrix dz = activation_backward(c.pre_activation, c.output, dy, act);
  const bool is1 = strategy_ == Strategy::is1;

  Matrix d_x_tilde = matmul_nt(dz, w2);
  if (is1) {
    matmul_accumulate(transpose(c.x_tilde), dz, g_w2_);
  } else {
    const Matrix dz_r2 = matmul_nt(dz, aux.w2.right);  // D' x K
    matmul_accumulate(transpose(c.x_tilde), dz_r2, factored_.w2.left);
    matmul_accumulate(transpose(cache.x_tilde_l2), dz, factored_.w2.right);
    matmul_accumulate(dz_r2, transpose(aux.w2.left), d_x_tilde);
  }

  Matrix d_x_bar;
  if (attention_) {
    auto att = attention_backward(d_x_tilde, c.x_bar, c.a, lambda);
    if (lambda_grad != nullptr) *lambda_grad += att.d_lambda;
    d_x_bar = std::move(att.d_x_bar);
    matmul_accumulate(att.d_e, transpose(*w), d_x_bar);
    if (is1) {
      matmul_accumulate(transpose(c.x_bar), att.d_e, g_w_);
    } else {
      const Matrix de_r = matmul_nt(att.d_e, aux.w->right);  // D' x K
      matmul_accumulate(transpose(c.x_bar), de_r, factored_.w->left);
      matmul_accumulate(transpose(cache.x_bar_l), att.d_e, factored_.w->right);
      matmul_accumulate(de_r, transpose(aux.w->left), d_x_bar);
    }
  } else {
    d_x_bar = std::move(d_x_tilde);
  }

  if (is1) {
    matmul_accumulate(d_x_bar, transpose(c.x), g_w1_);
    return matmul_tn(w1, d_x_bar);
  }
  const Matrix l1t_dxb = matmul_tn(aux.w1.left, d_x_bar);  // K x T
  matmul_accumulate(d_x_bar, transpose(cache.r1_x), factored_.w1.left);
  matmul_accumulate(l1t_dxb, transpose(c.x), factored_.w1.right);
  Matrix dx = matmul_tn(w1, d_x_bar);
  matmul_accumulate(transpose(aux.w1.right), l1t_dxb, dx);
  return dx;
}

AuxGrads AuxGradAccumulator::finish(const AuxFactors& aux) const {
  if (strategy_ == Strategy::is2) return factored_;
  AuxGrads g;
  // d/dL = G R^T, d/dR = L^T G for W_aux = L R.
  auto project = [](const Matrix& dense, const LowRank& f) {
    return LowRank{matmul_nt(dense, f.right), matmul_tn(f.left, dense)};
  };
  g.w1 = project(g_w1_, aux.w1);
  if (attention_) g.w = project(g_w_, *aux.w);
  g.w2 = project(g_w2_, aux.w2);
  return g;
}

}  // namespace detail

TablLayerParams fold(const AugmentedTablLayer& l, OpCounter* counter) {
  check_aux(l.aux, l.base.dims(), true);
  TablLayerParams out = l.base;
  matmul_accumulate(l.aux.w1.left, l.aux.w1.right, out.w1, counter);
  matmul_accumulate(l.aux.w->left, l.aux.w->right, out.w, counter);
  matmul_accumulate(l.aux.w2.left, l.aux.w2.right, out.w2, counter);
  return out;
}

BlLayerParams fold(const AugmentedBlLayer& l, OpCounter* counter) {
  check_aux(l.aux, l.base.dims(), false);
  BlLayerParams out = l.base;
  matmul_accumulate(l.aux.w1.left, l.aux.w1.right, out.w1, counter);
  matmul_accumulate(l.aux.w2.left, l.aux.w2.right, out.w2, counter);
  return out;
}

std::uint64_t aux_param_count(const LayerDims& d, std::size_t rank, bool attention) {
  const std::uint64_t k = rank;
  std::uint64_t n = k * (d.d_out + d.d) + k * (d.t + d.t_out);
  if (attention) n += k * (2 * d.t);
  return n;
}

BaseParamCount base_param_count(const LayerDims& d, bool attention) {
  const std::uint64_t common = d.d_out * d.d + d.t * d.t_out + d.d_out * d.t_out;
  if (!attention) return {common, common};
  // attention matrix + lambda
  return {common + d.t * d.t - d.t + 1, common + d.t * d.t + 1};
}

MacBreakdown base_macs(const LayerDims& d, std::uint64_t n, bool attention) {
  MacBreakdown m;
  m.feature = n * d.d * d.d_out * d.t;
  if (attention) m.attention = n * d.d_out * d.t * d.t;
  m.output = n * d.d_out * d.t * d.t_out + 2 * n * d.d_out * d.t_out;
  return m;
}

MacBreakdown is1_macs(const LayerDims& d, std::size_t rank, std::uint64_t n, bool attention) {
  MacBreakdown m = base_macs(d, n, attention);
  const std::uint64_t k = rank;
  m.materialize = k * (d.d_out * d.d + d.t * d.t_out);
  if (attention) m.materialize += k * d.t * d.t;
  return m;
}

MacBreakdown is2_macs(const LayerDims& d, std::size_t rank, std::uint64_t n, bool attention) {
  const std::uint64_t k = rank;
  MacBreakdown m;
  m.feature = n * d.d * d.d_out * d.t + n * d.d * k * d.t + n * k * d.t * d.d_out;
  if (attention) m.attention = n * d.d_out * d.t * d.t + n * d.d_out * d.t * k + n * d.d_out * k * d.t;
  m.output = n * d.d_out * d.t * d.t_out + n * d.d_out * d.t * k + n * d.d_out * k * d.t_out +
             2 * n * d.d_out * d.t_out;
  return m;
}

}  // namespace tabl
