#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tabl/adapters.hpp"
#include "tabl/conv.hpp"
#include "tabl/layers.hpp"

namespace tabl {

enum class LayerKind : std::uint8_t { bl = 0, tabl = 1, conv = 2, dense = 3 };

std::string_view layer_kind_name(LayerKind k);

/// One layer of a topology. For bl/tabl, (a, b) = (D', T'); for conv,
/// (filters, kernel); for dense, a = number of classes.
struct LayerSpec {
  LayerKind kind = LayerKind::bl;
  std::size_t a = 0;
  std::size_t b = 0;
  Activation activation = Activation::relu;
  Padding padding = Padding::same;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Topology {
  std::string name;
  std::size_t input_d = 40;
  std::size_t input_t = 10;
  std::vector<LayerSpec> layers;

  friend bool operator==(const Topology&, const Topology&) = default;
};

/// Hidden BL layers with ReLU followed by a (3,1) TABL softmax classifier.
Topology bilinear_topology(std::string name,
                           const std::vector<std::pair<std::size_t, std::size_t>>& hidden,
                           std::size_t classes = 3);
Topology cnn_topology(std::string name, const CnnArchSpec& arch);

/// Parses "[[60,10],[120,5],[3,1]]" (the last entry must be the classifier).
Topology parse_bilinear_topology(std::string_view text, std::string name = "custom");
std::string describe(const Topology& t);

const std::vector<Topology>& registry();
std::vector<std::string> registry_names();
/// Throws ConfigError for unknown names.
Topology lookup_topology(std::string_view name);

/// Per-layer input/output shapes; throws ShapeError if the layers do not chain
/// or the network does not end in a (classes, 1) output.
std::vector<LayerDims> chain_shapes(const Topology& t);

using LayerParams = std::variant<BlLayerParams, TablLayerParams, Conv1dParams, DenseParams>;

struct NetLayer {
  LayerSpec spec;
  LayerDims dims;
  LayerParams params;
  std::optional<AuxFactors> aux;      // bl / tabl
  std::optional<CpAuxFilters> cp;     // conv
  std::optional<LowRank> dense_aux;   // dense

  bool has_aux() const { return aux || cp || dense_aux; }
};

struct Model {
  Topology topology;
  std::vector<NetLayer> layers;
  std::size_t rank = 0;  // 0: plain model
  Strategy strategy = Strategy::is2;
  bool train_lambda = false;
  std::string base_hash;  // content hash of the frozen base, set when adapted

  bool adapted() const { return rank > 0; }
  std::size_t classes() const { return topology.layers.back().a; }
};

Model build(const Topology& topology, std::uint64_t seed);

/// Freezes the model and attaches rank-min(K, layer max) auxiliary factors to
/// every layer. Dense heads get a two-factor aux, conv layers a CP aux.
Model augment(const Model& base, std::size_t rank, Strategy strategy, std::uint64_t seed,
              bool train_lambda = false);
/// Plain model with every auxiliary product added into its base weights.
Model folded(const Model& model);
/// The frozen base of an adapted model (aux dropped).
Model base_of(const Model& model);

struct ParamRef {
  std::string name;
  std::span<double> values;
  ParamRole role = ParamRole::dense;
  bool trainable = true;
};

/// Every stored tensor, layer by layer: base tensors then aux tensors. Base
/// tensors of an adapted model are not trainable (lambda optionally is).
std::vector<ParamRef> parameters(Model& model);

/// Inference on a batch. IS1 models materialize W + W_aux once per call.
std::vector<Matrix> predict(const Model& model, std::span<const Matrix> xs,
                            OpCounter* counter = nullptr);
Matrix predict_one(const Model& model, const Matrix& x, OpCounter* counter = nullptr);

/// Smallest |pre-activation| over every ReLU unit for input `x`; infinity
/// when the network has no ReLU. Finite-difference checks need this margin
/// to exceed the step size.
double relu_margin(const Model& model, const Matrix& x);

/// Loss callback: given the network output for sample `i`, returns the loss
/// and writes dL/dY into `dy`.
using OutputLoss = std::function<double(std::size_t i, const Matrix& y, Matrix& dy)>;

/// Forward + backward over a batch. `grads` is resized to match parameters();
/// frozen tensors get an empty gradient. Returns the summed loss.
double batch_gradient(const Model& model, std::span<const Matrix> xs, const OutputLoss& loss,
                      std::vector<std::vector<double>>& grads, OpCounter* counter = nullptr);

/// Per-layer parameter ledger.
struct ParamLedgerRow {
  std::string layer;
  std::uint64_t base_trainable = 0;
  std::uint64_t base_with_diagonal = 0;
  std::uint64_t aux = 0;
};
struct ParamLedger {
  std::vector<ParamLedgerRow> rows;
  std::uint64_t base_trainable = 0;
  std::uint64_t base_with_diagonal = 0;
  std::uint64_t aux = 0;
  // A folded model has exactly the base's shape.
  std::uint64_t folded_trainable() const { return base_trainable; }
};
ParamLedger count_params(const Model& model);

struct MacLedgerRow {
  std::string layer;
  std::uint64_t macs = 0;
};
struct MacLedger {
  std::vector<MacLedgerRow> rows;
  std::uint64_t total = 0;
};
/// Closed-form forward MACs for a batch of N, matching predict()'s counter.
MacLedger count_macs(const Model& model, std::uint64_t batch);

}  // namespace tabl
