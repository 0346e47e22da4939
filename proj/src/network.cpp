#include "tabl/network.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "tabl/errors.hpp"
#include "tabl/model_io.hpp"

namespace tabl {

std::string_view layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::bl: return "bl";
    case LayerKind::tabl: return "tabl";
    case LayerKind::conv: return "conv";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

Topology bilinear_topology(std::string name,
                           const std::vector<std::pair<std::size_t, std::size_t>>& hidden,
                           std::size_t classes) {
  Topology t;
  t.name = std::move(name);
  for (auto [d, tt] : hidden) t.layers.push_back({LayerKind::bl, d, tt, Activation::relu});
  t.layers.push_back({LayerKind::tabl, classes, 1, Activation::softmax_columns});
  return t;
}

Topology cnn_topology(std::string name, const CnnArchSpec& arch) {
  if (arch.layers.empty()) throw ConfigError("CNN architecture has no convolution layers");
  Topology t;
  t.name = std::move(name);
  for (const ConvSpec& c : arch.layers) {
    t.layers.push_back({LayerKind::conv, c.filters, c.kernel, arch.hidden_activation,
                        arch.padding});
  }
  t.layers.push_back({LayerKind::dense, arch.classes, 1, Activation::softmax_columns});
  return t;
}

Topology parse_bilinear_topology(std::string_view text, std::string name) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("cannot parse topology '" + std::string(text) + "': " + e.what());
  }
  if (!j.is_array() || j.size() < 1) throw ConfigError("topology must be a list of [D', T'] pairs");
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() ||
        !e[1].is_number_unsigned()) {
      throw ConfigError("topology entries must be [D', T'] pairs of positive integers");
    }
    dims.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
  }
  const auto last = dims.back();
  if (last.second != 1) throw ConfigError("the classifier layer must have T' = 1");
  dims.pop_back();
  Topology t = bilinear_topology(std::move(name), dims, last.first);
  chain_shapes(t);
  return t;
}

std::string describe(const Topology& t) {
  std::ostringstream os;
  os << t.name << " (" << t.input_d << "," << t.input_t << ")";
  for (const LayerSpec& l : t.layers) {
    os << " -> " << layer_kind_name(l.kind) << "(" << l.a;
    if (l.kind != LayerKind::dense) os << "," << l.b;
    os << ")";
  }
  return os.str();
}

const std::vector<Topology>& registry() {
  static const std::vector<Topology> topologies = [] {
    std::vector<Topology> r;
    r.push_back(bilinear_topology("joint_all", {{60, 10}, {120, 5}}));
    r.push_back(bilinear_topology("base_stock1", {{60, 5}, {200, 10}}));
    r.push_back(bilinear_topology("base_stock2", {{60, 10}, {120, 5}}));
    r.push_back(bilinear_topology("base_stock3", {{60, 5}, {120, 10}, {50, 5}}));
    r.push_back(bilinear_topology("base_stock4", {{60, 10}, {200, 10}}));
    r.push_back(bilinear_topology("base_stock5", {{60, 10}, {200, 10}}));
    r.push_back(cnn_topology("cnn", default_cnn_arch()));
    r.push_back(bilinear_topology("compact", {{20, 5}}));
    return r;
  }();
  return topologies;
}

std::vector<std::string> registry_names() {
  std::vector<std::string> names;
  for (const Topology& t : registry()) names.push_back(t.name);
  return names;
}

Topology lookup_topology(std::string_view name) {
  for (const Topology& t : registry())
    if (t.name == name) return t;
  std::string known;
  for (const auto& n : registry_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown topology '" + std::string(name) + "' (known: " + known + ")");
}

std::vector<LayerDims> chain_shapes(const Topology& t) {
  if (t.layers.empty()) throw ShapeError("topology '" + t.name + "' has no layers");
  if (t.input_d == 0 || t.input_t == 0) throw ShapeError("input shape must be positive");
  std::vector<LayerDims> dims;
  std::size_t d = t.input_d, tt = t.input_t;
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    const LayerSpec& s = t.layers[i];
    if (s.a == 0 || s.b == 0) {
      throw ShapeError("layer " + std::to_string(i) + " of '" + t.name + "' has a zero dimension");
    }
    LayerDims ld{d, tt, 0, 0};
    switch (s.kind) {
      case LayerKind::bl:
      case LayerKind::tabl:
        ld.d_out = s.a;
        ld.t_out = s.b;
        break;
      case LayerKind::conv: {
        Conv1dParams probe;
        probe.kernel = s.b;
        probe.padding = s.padding;
        ld.d_out = s.a;
        ld.t_out = probe.output_length(tt);
        if (ld.t_out == 0) {
          throw ShapeError("conv layer " + std::to_string(i) + " kernel " + std::to_string(s.b) +
                           " does not fit length " + std::to_string(tt));
        }
        break;
      }
      case LayerKind::dense:
        if (i + 1 != t.layers.size()) throw ShapeError("a dense head must be the last layer");
        ld.d_out = s.a;
        ld.t_out = 1;
        break;
    }
    dims.push_back(ld);
    d = ld.d_out;
    tt = ld.t_out;
  }
  if (tt != 1) {
    throw ShapeError("topology '" + t.name + "' ends in (" + std::to_string(d) + "," +
                     std::to_string(tt) + "), expected a column output");
  }
  return dims;
}

Model build(const Topology& topology, std::uint64_t seed) {
  Model m;
  m.topology = topology;
  const std::vector<LayerDims> dims = chain_shapes(topology);
  Rng rng(seed);
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const LayerSpec& s = topology.layers[i];
    NetLayer l{s, dims[i], BlLayerParams{}, {}, {}, {}};
    switch (s.kind) {
      case LayerKind::bl: l.params = init_bl(dims[i], s.activation, rng); break;
      case LayerKind::tabl: l.params = init_tabl(dims[i], s.activation, rng); break;
      case LayerKind::conv:
        l.params = init_conv(s.a, dims[i].d, s.b, s.activation, rng, s.padding);
        break;
      case LayerKind::dense:
        l.params = init_dense(s.a, dims[i].d * dims[i].t, s.activation, rng);
        break;
    }
    m.layers.push_back(std::move(l));
  }
  return m;
}

Model augment(const Model& base, std::size_t rank, Strategy strategy, std::uint64_t seed,
              bool train_lambda) {
  if (base.adapted()) throw StateError("model already carries auxiliary connections");
  if (rank == 0) throw DomainError("auxiliary rank must be at least 1");
  Model m = base;
  m.rank = rank;
  m.strategy = strategy;
  m.train_lambda = train_lambda;
  m.base_hash = content_hash(base);
  Rng rng(seed);
  for (NetLayer& l : m.layers) {
    switch (l.spec.kind) {
      case LayerKind::bl:
      case LayerKind::tabl:
        l.aux = init_aux(l.dims, std::min(rank, max_rank(l.dims)), l.spec.kind == LayerKind::tabl,
                         rng);
        break;
      case LayerKind::conv: l.cp = init_cp_aux(std::get<Conv1dParams>(l.params), rank, rng); break;
      case LayerKind::dense: {
        const auto& p = std::get<DenseParams>(l.params);
        const std::size_t k = std::min({rank, p.w.rows(), p.w.cols()});
        LowRank f{Matrix(p.w.rows(), k), Matrix(k, p.w.cols())};
        for (double& v : f.left.values()) v = rng.uniform(-1e-2, 1e-2);
        l.dense_aux = std::move(f);
        break;
      }
    }
  }
  return m;
}

Model folded(const Model& model) {
  Model out = base_of(model);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const NetLayer& src = model.layers[i];
    NetLayer& dst = out.layers[i];
    if (!src.has_aux()) continue;
    switch (src.spec.kind) {
      case LayerKind::bl:
        dst.params = fold(AugmentedBlLayer{std::get<BlLayerParams>(src.params), *src.aux});
        break;
      case LayerKind::tabl:
        dst.params = fold(AugmentedTablLayer{std::get<TablLayerParams>(src.params), *src.aux});
        break;
      case LayerKind::conv:
        dst.params = fold_conv(std::get<Conv1dParams>(src.params), *src.cp);
        break;
      case LayerKind::dense:
        dst.params = fold_dense(std::get<DenseParams>(src.params), *src.dense_aux);
        break;
    }
  }
  return out;
}

Model base_of(const Model& model) {
  Model out = model;
  out.rank = 0;
  out.train_lambda = false;
  out.base_hash.clear();
  for (NetLayer& l : out.layers) {
    l.aux.reset();
    l.cp.reset();
    l.dense_aux.reset();
  }
  return out;
}

std::vector<ParamRef> parameters(Model& model) {
  std::vector<ParamRef> refs;
  const bool adapted = model.adapted();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    NetLayer& l = model.layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    auto add = [&](bool trainable) {
      return [&, trainable](std::string_view name, std::span<double> v, ParamRole role) {
        bool t = trainable;
        if (role == ParamRole::unit_interval && adapted) t = model.train_lambda;
        refs.push_back({prefix + std::string(name), v, role, t});
      };
    };
    std::visit([&](auto& p) { visit_params(p, add(!adapted)); }, l.params);
    if (l.aux) visit_params(*l.aux, add(true));
    if (l.cp) visit_params(*l.cp, add(true));
    if (l.dense_aux) visit_params(*l.dense_aux, add(true));
  }
  return refs;
}

namespace {

// Effective bilinear weights for one pass: IS1 adapted layers use the
// materialized W + W_aux, computed once per batch.
struct Plan {
  std::vector<std::optional<LayerParams>> materialized;
};

Plan make_plan(const Model& model, OpCounter* counter) {
  Plan plan;
  plan.materialized.resize(model.layers.size());
  if (!model.adapted() || model.strategy != Strategy::is1) return plan;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const NetLayer& l = model.layers[i];
    if (!l.aux) continue;
    if (l.spec.kind == LayerKind::tabl) {
      plan.materialized[i] =
          fold(AugmentedTablLayer{std::get<TablLayerParams>(l.params), *l.aux}, counter);
    } else {
      plan.materialized[i] =
          fold(AugmentedBlLayer{std::get<BlLayerParams>(l.params), *l.aux}, counter);
    }
  }
  return plan;
}

using Cache = std::variant<LayerCache, AugCache, ConvCache, DenseCache>;

struct StepResult {
  Matrix y;
  Cache cache;
};

template <class Out>
StepResult take(Out&& out) {
  StepResult r;
  r.y = std::move(out.y);
  if (out.cache) r.cache = std::move(*out.cache);
  return r;
}

StepResult layer_forward(const Model& model, const Plan& plan, std::size_t i, const Matrix& x,
                         Mode mode, OpCounter* counter) {
  const NetLayer& l = model.layers[i];
  if (plan.materialized[i]) {
    const LayerParams& p = *plan.materialized[i];
    LayerOutput out = l.spec.kind == LayerKind::tabl
                          ? tabl_forward(std::get<TablLayerParams>(p), x, mode, counter)
                          : bl_forward(std::get<BlLayerParams>(p), x, mode, counter);
    StepResult r;
    r.y = std::move(out.y);
    if (out.cache) {
      AugCache c;
      c.strategy = Strategy::is1;
      c.core = std::move(*out.cache);
      r.cache = std::move(c);
    }
    return r;
  }
  switch (l.spec.kind) {
    case LayerKind::bl: {
      const auto& p = std::get<BlLayerParams>(l.params);
      if (l.aux) {
        return take(detail::forward_is2(p.w1, nullptr, p.w2, p.bias, 0.0, p.activation, *l.aux,
                                        x, mode, counter));
      }
      return take(bl_forward(p, x, mode, counter));
    }
    case LayerKind::tabl: {
      const auto& p = std::get<TablLayerParams>(l.params);
      if (l.aux) {
        return take(detail::forward_is2(p.w1, &p.w, p.w2, p.bias, p.lambda, p.activation, *l.aux,
                                        x, mode, counter));
      }
      return take(tabl_forward(p, x, mode, counter));
    }
    case LayerKind::conv: {
      const auto& p = std::get<Conv1dParams>(l.params);
      if (l.cp) return take(aug_conv_forward(p, *l.cp, x, mode, counter));
      return take(conv1d_forward(p, x, mode, counter));
    }
    case LayerKind::dense: {
      const auto& p = std::get<DenseParams>(l.params);
      if (l.dense_aux) return take(aug_dense_forward(p, *l.dense_aux, x, mode, counter));
      return take(dense_forward(p, x, mode, counter));
    }
  }
  throw StateError("unknown layer kind");
}

void check_input(const Model& model, const Matrix& x) {
  if (x.rows() != model.topology.input_d || x.cols() != model.topology.input_t) {
    throw ShapeError("model expects input " + std::to_string(model.topology.input_d) + "x" +
                     std::to_string(model.topology.input_t) + ", got " + x.shape_string());
  }
}

void add_into(std::vector<double>& dst, std::span<const double> src) {
  if (dst.empty()) dst.assign(src.size(), 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

std::vector<Matrix> predict(const Model& model, std::span<const Matrix> xs, OpCounter* counter) {
  const Plan plan = make_plan(model, counter);
  std::vector<Matrix> out;
  out.reserve(xs.size());
  for (const Matrix& x : xs) {
    check_input(model, x);
    Matrix h = x;
    for (std::size_t i = 0; i < model.layers.size(); ++i)
      h = layer_forward(model, plan, i, h, Mode::infer, counter).y;
    out.push_back(std::move(h));
  }
  return out;
}

Matrix predict_one(const Model& model, const Matrix& x, OpCounter* counter) {
  return std::move(predict(model, std::span<const Matrix>(&x, 1), counter).front());
}

double relu_margin(const Model& model, const Matrix& x) {
  check_input(model, x);
  const Plan plan = make_plan(model, nullptr);
  double margin = std::numeric_limits<double>::infinity();
  Matrix h = x;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].spec.activation == Activation::relu) {
      Model linear = model;
      Plan linear_plan = plan;
      auto to_identity = [](auto& p) { p.activation = Activation::identity; };
      std::visit(to_identity, linear.layers[i].params);
      if (linear_plan.materialized[i]) std::visit(to_identity, *linear_plan.materialized[i]);
      const Matrix z = layer_forward(linear, linear_plan, i, h, Mode::infer, nullptr).y;
      for (double v : z.values()) margin = std::min(margin, std::abs(v));
    }
    h = layer_forward(model, plan, i, h, Mode::infer, nullptr).y;
  }
  return margin;
}

double batch_gradient(const Model& model, std::span<const Matrix> xs, const OutputLoss& loss,
                      std::vector<std::vector<double>>& grads, OpCounter* counter) {
  Model& mutable_view = const_cast<Model&>(model);  // parameters() only hands out spans
  const std::vector<ParamRef> refs = parameters(mutable_view);
  grads.assign(refs.size(), {});

  // Index of each layer's first tensor in parameters() order.
  std::vector<std::size_t> first(model.layers.size() + 1, 0);
  {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      first[i] = idx;
      const std::string prefix = "layer" + std::to_string(i) + ".";
      while (idx < refs.size() && refs[idx].name.rfind(prefix, 0) == 0) ++idx;
    }
    first[model.layers.size()] = idx;
  }
  const Plan plan = make_plan(model, counter);

  std::vector<std::optional<detail::AuxGradAccumulator>> accs(model.layers.size());
  std::vector<double> lambda_grads(model.layers.size(), 0.0);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const NetLayer& l = model.layers[i];
    if (l.aux) accs[i].emplace(*l.aux, plan.materialized[i] ? Strategy::is1 : Strategy::is2, l.dims);
  }

  double total = 0.0;
  std::vector<StepResult> steps(model.layers.size());
  for (std::size_t s = 0; s < xs.size(); ++s) {
    check_input(model, xs[s]);
    const Matrix* h = &xs[s];
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      steps[i] = layer_forward(model, plan, i, *h, Mode::train, counter);
      h = &steps[i].y;
    }
    Matrix dy(h->rows(), h->cols());
    total += loss(s, *h, dy);

    for (std::size_t i = model.layers.size(); i-- > 0;) {
      const NetLayer& l = model.layers[i];
      std::size_t idx = first[i];
      auto accumulate = [&](auto& g) {
        visit_grads(g, [&](std::span<double> v) { add_into(grads[idx++], v); });
      };
      Matrix dx;
      if (l.aux) {
        const AugCache& c = std::get<AugCache>(steps[i].cache);
        double* lam = (l.spec.kind == LayerKind::tabl && model.train_lambda) ? &lambda_grads[i]
                                                                            : nullptr;
        if (plan.materialized[i]) {
          const LayerParams& p = *plan.materialized[i];
          if (l.spec.kind == LayerKind::tabl) {
            const auto& t = std::get<TablLayerParams>(p);
            dx = accs[i]->accumulate(t.w1, &t.w, t.w2, t.lambda, t.activation, *l.aux, c, dy, lam);
          } else {
            const auto& b = std::get<BlLayerParams>(p);
            dx = accs[i]->accumulate(b.w1, nullptr, b.w2, 0.0, b.activation, *l.aux, c, dy, lam);
          }
        } else if (l.spec.kind == LayerKind::tabl) {
          const auto& t = std::get<TablLayerParams>(l.params);
          dx = accs[i]->accumulate(t.w1, &t.w, t.w2, t.lambda, t.activation, *l.aux, c, dy, lam);
        } else {
          const auto& b = std::get<BlLayerParams>(l.params);
          dx = accs[i]->accumulate(b.w1, nullptr, b.w2, 0.0, b.activation, *l.aux, c, dy, lam);
        }
      } else if (l.cp) {
        CpGrads g = aug_conv_backward(std::get<Conv1dParams>(l.params), *l.cp,
                                      std::get<ConvCache>(steps[i].cache), dy);
        idx += 2;  // frozen filters, bias
        accumulate(g);
        dx = std::move(g.dx);
      } else if (l.dense_aux) {
        const LayerDims& d = l.dims;
        DenseAuxGrads g = aug_dense_backward(std::get<DenseParams>(l.params), *l.dense_aux,
                                             std::get<DenseCache>(steps[i].cache), dy, d.d, d.t);
        idx += 2;
        accumulate(g);
        dx = std::move(g.dx);
      } else {
        switch (l.spec.kind) {
          case LayerKind::bl: {
            BlGrads g = bl_backward(std::get<BlLayerParams>(l.params),
                                    std::get<LayerCache>(steps[i].cache), dy);
            accumulate(g);
            dx = std::move(g.dx);
            break;
          }
          case LayerKind::tabl: {
            TablGrads g = tabl_backward(std::get<TablLayerParams>(l.params),
                                        std::get<LayerCache>(steps[i].cache), dy);
            accumulate(g);
            dx = std::move(g.dx);
            break;
          }
          case LayerKind::conv: {
            ConvGrads g = conv1d_backward(std::get<Conv1dParams>(l.params),
                                          std::get<ConvCache>(steps[i].cache), dy);
            accumulate(g);
            dx = std::move(g.dx);
            break;
          }
          case LayerKind::dense: {
            const LayerDims& d = l.dims;
            DenseGrads g = dense_backward(std::get<DenseParams>(l.params),
                                          std::get<DenseCache>(steps[i].cache), dy, d.d, d.t);
            accumulate(g);
            dx = std::move(g.dx);
            break;
          }
        }
      }
      dy = std::move(dx);
    }
  }

  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const NetLayer& l = model.layers[i];
    if (!l.aux) continue;
    AuxGrads g = accs[i]->finish(*l.aux);
    // Base tensors come first: w1, (w), w2, bias, (lambda).
    std::size_t idx = first[i];
    const bool tabl = l.spec.kind == LayerKind::tabl;
    if (tabl && model.train_lambda) grads[idx + 4].assign(1, lambda_grads[i]);
    idx += tabl ? 5 : 3;
    visit_grads(g, [&](std::span<double> v) { add_into(grads[idx++], v); });
  }

  // Frozen tensors carry no gradient.
  for (std::size_t r = 0; r < refs.size(); ++r) {
    if (!refs[r].trainable) grads[r].clear();
    else if (grads[r].empty()) grads[r].assign(refs[r].values.size(), 0.0);
  }
  return total;
}

ParamLedger count_params(const Model& model) {
  ParamLedger ledger;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const NetLayer& l = model.layers[i];
    ParamLedgerRow row;
    row.layer = std::to_string(i) + ":" + std::string(layer_kind_name(l.spec.kind)) + "(" +
                std::to_string(l.dims.d_out) + "," + std::to_string(l.dims.t_out) + ")";
    switch (l.spec.kind) {
      case LayerKind::bl:
      case LayerKind::tabl: {
        const bool att = l.spec.kind == LayerKind::tabl;
        BaseParamCount b = base_param_count(l.dims, att);
        row.base_trainable = b.trainable;
        row.base_with_diagonal = b.with_diagonal;
        if (l.aux) row.aux = aux_param_count(l.dims, l.aux->rank(), att);
        break;
      }
      case LayerKind::conv:
        row.base_trainable = row.base_with_diagonal =
            conv_param_count(std::get<Conv1dParams>(l.params));
        if (l.cp) row.aux = cp_param_count(*l.cp);
        break;
      case LayerKind::dense: {
        const auto& p = std::get<DenseParams>(l.params);
        row.base_trainable = row.base_with_diagonal = p.w.size() + p.bias.size();
        if (l.dense_aux) row.aux = l.dense_aux->left.size() + l.dense_aux->right.size();
        break;
      }
    }
    ledger.base_trainable += row.base_trainable;
    ledger.base_with_diagonal += row.base_with_diagonal;
    ledger.aux += row.aux;
    ledger.rows.push_back(std::move(row));
  }
  return ledger;
}

MacLedger count_macs(const Model& model, std::uint64_t n) {
  MacLedger ledger;
  const bool is1 = model.adapted() && model.strategy == Strategy::is1;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const NetLayer& l = model.layers[i];
    const LayerDims& d = l.dims;
    std::uint64_t macs = 0;
    switch (l.spec.kind) {
      case LayerKind::bl:
      case LayerKind::tabl: {
        const bool att = l.spec.kind == LayerKind::tabl;
        if (!l.aux) macs = base_macs(d, n, att).total();
        else if (is1) macs = is1_macs(d, l.aux->rank(), n, att).total();
        else macs = is2_macs(d, l.aux->rank(), n, att).total();
        break;
      }
      case LayerKind::conv: {
        const std::uint64_t taps = d.d * l.spec.b;
        macs = n * d.d_out * taps * d.t_out;
        if (l.cp) macs += n * (l.cp->rank() * taps * d.t_out + d.d_out * l.cp->rank() * d.t_out);
        break;
      }
      case LayerKind::dense: {
        const std::uint64_t f = d.d * d.t;
        macs = n * d.d_out * f;
        if (l.dense_aux) {
          const std::uint64_t k = l.dense_aux->rank();
          macs += n * (k * f + d.d_out * k);
        }
        break;
      }
    }
    ledger.rows.push_back({std::to_string(i) + ":" + std::string(layer_kind_name(l.spec.kind)),
                           macs});
    ledger.total += macs;
  }
  return ledger;
}

}  // namespace tabl
