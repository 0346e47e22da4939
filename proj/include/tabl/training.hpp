#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "tabl/data.hpp"
#include "tabl/network.hpp"

namespace tabl {

/// L = -(beta / N_label) * log(max(p_label, floor)).
class WeightedEntropyLoss {
 public:
  WeightedEntropyLoss(std::array<double, 3> class_counts, double beta = 1e6, double floor = 1e-12);
  /// Counts from training labels; absent classes count as 1.
  static WeightedEntropyLoss from_labels(std::span<const int> labels, double beta = 1e6);

  double weight(int label) const;
  double loss(const Matrix& probs, int label) const;
  /// Returns the loss and writes dL/dprobs.
  double loss_and_grad(const Matrix& probs, int label, Matrix& grad) const;

  const std::array<double, 3>& counts() const { return counts_; }
  double beta() const { return beta_; }

 private:
  std::array<double, 3> counts_;
  double beta_;
  double floor_;
};

/// Per-entry trainable flags, aligned with parameters(model).
struct FreezeMask {
  std::vector<std::vector<std::uint8_t>> trainable;

  /// Frozen tensors are all-zero; the fixed diagonal of W is always frozen.
  static FreezeMask from(const std::vector<ParamRef>& params);
  std::size_t trainable_count() const;
};

struct AdamState {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam on the masked entries; lambda clamped to [0, 1] after.
void adam_step(AdamState& state, std::vector<ParamRef>& params,
               const std::vector<std::vector<double>>& grads, const FreezeMask& mask);

class PlateauScheduler {
 public:
  enum class Outcome { improved, waiting, reduced, exhausted };

  PlateauScheduler(double lr, std::size_t patience = 5, double factor = 0.5, double min_lr = 1e-6,
                   double threshold = 1e-4);

  /// Improvement means val_loss < best * (1 - threshold). After `patience`
  /// epochs without one, lr is multiplied by `factor` (not below min_lr);
  /// `exhausted` once a reduction is due at min_lr.
  Outcome step(double val_loss);

  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double min_lr_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

struct TrainConfig {
  std::size_t max_epochs = 200;
  std::size_t batch_size = 256;
  double lr = 0.01;
  double beta = 1e6;
  std::size_t plateau_patience = 5;
  double plateau_factor = 0.5;
  double plateau_threshold = 1e-4;
  double min_lr = 1e-6;
  std::size_t early_stop = 20;  // epochs without improvement
  std::uint64_t seed = 1;
  std::ostream* log = nullptr;  // one line per epoch when set
  std::string log_prefix;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double train_f1 = 0.0;  // running, over the epoch's mini-batches
  double val_f1 = 0.0;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;  // epoch 0 is the initial model
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t epochs_run = 0;
  double final_lr = 0.0;
  std::string stop_reason;

  std::string csv() const;
};

/// Mini-batch Adam training of the trainable parameters. The model ends at
/// its best-validation checkpoint (epoch 0 included). With an empty
/// validation set the training loss drives selection and scheduling.
TrainingReport train(Model& model, const SampleSet& train_set, const SampleSet& val_set,
                     const TrainConfig& cfg);

struct Evaluation {
  double loss = 0.0;  // mean
  std::vector<int> predictions;
  double f1 = 0.0;
};
Evaluation evaluate(const Model& model, const SampleSet& set, const WeightedEntropyLoss& loss);

struct GradCheckGroup {
  std::string name;
  bool has_gradient = true;  // false for frozen tensors
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};
struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  bool passed(double tolerance) const { return max_rel_error < tolerance; }
  std::string text() const;
};

/// Central differences (h = 1e-5) of the loss on one sample versus
/// batch_gradient, for every trainable tensor. `max_entries` caps the number
/// of entries probed per tensor (0 = all), spread evenly.
GradCheckReport gradient_check(Model& model, const Matrix& x, int label,
                               const WeightedEntropyLoss& loss, std::size_t max_entries = 0,
                               double h = 1e-5);
/// Same, for an arbitrary differentiable output loss (sample index 0).
GradCheckReport gradient_check(Model& model, const Matrix& x, const OutputLoss& loss,
                               std::size_t max_entries = 0, double h = 1e-5);

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

}  // namespace tabl
