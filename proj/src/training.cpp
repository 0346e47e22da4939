#include "tabl/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "tabl/errors.hpp"
#include "tabl/metrics.hpp"
#include "tabl/model_io.hpp"

namespace tabl {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

WeightedEntropyLoss::WeightedEntropyLoss(std::array<double, 3> class_counts, double beta,
                                         double floor)
    : counts_(class_counts), beta_(beta), floor_(floor) {
  for (double c : counts_)
    if (!(c > 0.0)) throw DomainError("class counts must be positive");
  if (!(beta_ > 0.0)) throw DomainError("beta must be positive");
  if (!(floor_ > 0.0)) throw DomainError("probability floor must be positive");
}

WeightedEntropyLoss WeightedEntropyLoss::from_labels(std::span<const int> labels, double beta) {
  std::array<double, 3> counts{0.0, 0.0, 0.0};
  for (int l : labels) {
    if (l < 0 || l > 2) throw DomainError("label " + std::to_string(l) + " is outside {0, 1, 2}");
    counts[static_cast<std::size_t>(l)] += 1.0;
  }
  for (double& c : counts) c = std::max(c, 1.0);
  return WeightedEntropyLoss(counts, beta);
}

double WeightedEntropyLoss::weight(int label) const {
  if (label < 0 || label > 2) throw DomainError("label " + std::to_string(label) + " is outside {0, 1, 2}");
  return beta_ / counts_[static_cast<std::size_t>(label)];
}

double WeightedEntropyLoss::loss(const Matrix& probs, int label) const {
  Matrix g;
  return loss_and_grad(probs, label, g);
}

double WeightedEntropyLoss::loss_and_grad(const Matrix& probs, int label, Matrix& grad) const {
  if (probs.size() != 3) throw ShapeError("loss expects 3 class probabilities, got " + probs.shape_string());
  const double w = weight(label);
  grad = Matrix(probs.rows(), probs.cols());
  const double p = probs.values()[static_cast<std::size_t>(label)];
  if (p > floor_) {
    grad.values()[static_cast<std::size_t>(label)] = -w / p;
    return -w * std::log(p);
  }
  return -w * std::log(floor_);
}

FreezeMask FreezeMask::from(const std::vector<ParamRef>& params) {
  FreezeMask mask;
  for (const ParamRef& p : params) {
    std::vector<std::uint8_t> flags(p.values.size(), p.trainable ? 1 : 0);
    if (p.role == ParamRole::fixed_diagonal) {
      const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(p.values.size()))));
      for (std::size_t i = 0; i < n; ++i) flags[i * (n + 1)] = 0;
    }
    mask.trainable.push_back(std::move(flags));
  }
  return mask;
}

std::size_t FreezeMask::trainable_count() const {
  std::size_t n = 0;
  for (const auto& t : trainable) n += static_cast<std::size_t>(std::count(t.begin(), t.end(), 1));
  return n;
}

void adam_step(AdamState& s, std::vector<ParamRef>& params,
               const std::vector<std::vector<double>>& grads, const FreezeMask& mask) {
  if (grads.size() != params.size() || mask.trainable.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " tensors, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(mask.trainable.size()) + " masks");
  }
  if (s.m.empty()) {
    for (const ParamRef& p : params) {
      s.m.emplace_back(p.values.size(), 0.0);
      s.v.emplace_back(p.values.size(), 0.0);
    }
  }
  if (s.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::span<double> w = params[t].values;
    const auto& flags = mask.trainable[t];
    if (flags.size() != w.size() || s.m[t].size() != w.size()) {
      throw ShapeError("adam_step: tensor " + params[t].name + " changed size");
    }
    if (grads[t].empty()) {
      if (std::find(flags.begin(), flags.end(), 1) != flags.end()) {
        throw ShapeError("adam_step: trainable tensor " + params[t].name + " has no gradient");
      }
      continue;
    }
    if (grads[t].size() != w.size()) {
      throw ShapeError("adam_step: gradient for " + params[t].name + " has " +
                       std::to_string(grads[t].size()) + " entries, expected " +
                       std::to_string(w.size()));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!flags[i]) continue;
      const double g = grads[t][i];
      s.m[t][i] = s.beta1 * s.m[t][i] + (1.0 - s.beta1) * g;
      s.v[t][i] = s.beta2 * s.v[t][i] + (1.0 - s.beta2) * g * g;
      const double mhat = s.m[t][i] / c1;
      const double vhat = s.v[t][i] / c2;
      w[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
    if (params[t].role == ParamRole::unit_interval)
      for (double& v : w) v = std::clamp(v, 0.0, 1.0);
  }
}

PlateauScheduler::PlateauScheduler(double lr, std::size_t patience, double factor, double min_lr,
                                   double threshold)
    : lr_(lr), patience_(patience), factor_(factor), min_lr_(min_lr), threshold_(threshold) {
  if (!(lr > 0.0)) throw DomainError("learning rate must be positive");
  if (!(factor > 0.0 && factor < 1.0)) throw DomainError("plateau factor must be in (0, 1)");
  if (min_lr < 0.0 || threshold < 0.0) throw DomainError("min_lr and threshold must be non-negative");
  lr_ = std::max(lr_, min_lr_);
}

PlateauScheduler::Outcome PlateauScheduler::step(double val_loss) {
  if (val_loss < best_ * (1.0 - threshold_) || best_ == std::numeric_limits<double>::infinity()) {
    best_ = val_loss;
    bad_epochs_ = 0;
    return Outcome::improved;
  }
  if (++bad_epochs_ < patience_) return Outcome::waiting;
  bad_epochs_ = 0;
  if (lr_ <= min_lr_) return Outcome::exhausted;
  lr_ = std::max(lr_ * factor_, min_lr_);
  return Outcome::reduced;
}

std::string TrainingReport::csv() const {
  std::string out = "epoch,train_loss,val_loss,lr,train_f1,val_f1\n";
  char buf[256];
  for (const EpochRecord& r : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.train_loss,
                  r.val_loss, r.lr, r.train_f1, r.val_f1);
    out += buf;
  }
  return out;
}

Evaluation evaluate(const Model& model, const SampleSet& set, const WeightedEntropyLoss& loss) {
  Evaluation ev;
  if (set.empty()) return ev;
  const std::vector<Matrix> ys = predict(model, set.xs);
  ev.predictions = predicted_labels(ys);
  double total = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) total += loss.loss(ys[i], set.labels[i]);
  ev.loss = total / static_cast<double>(ys.size());
  ev.f1 = metrics(confusion(set.labels, ev.predictions)).f1;
  return ev;
}

namespace {

std::vector<std::vector<double>> snapshot(const std::vector<ParamRef>& params) {
  std::vector<std::vector<double>> out;
  for (const ParamRef& p : params) out.emplace_back(p.values.begin(), p.values.end());
  return out;
}

void restore(std::vector<ParamRef>& params, const std::vector<std::vector<double>>& saved) {
  for (std::size_t t = 0; t < params.size(); ++t)
    std::copy(saved[t].begin(), saved[t].end(), params[t].values.begin());
}

std::string frozen_digest(const std::vector<ParamRef>& params) {
  std::string bytes;
  for (const ParamRef& p : params) {
    if (p.trainable) continue;
    bytes.append(reinterpret_cast<const char*>(p.values.data()), p.values.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

}  // namespace

TrainingReport train(Model& model, const SampleSet& train_set, const SampleSet& val_set,
                     const TrainConfig& cfg) {
  if (train_set.empty()) throw DomainError("cannot train on an empty dataset");
  if (cfg.batch_size == 0) throw DomainError("batch size must be positive");
  const WeightedEntropyLoss loss = WeightedEntropyLoss::from_labels(train_set.labels, cfg.beta);
  const SampleSet& selection = val_set.empty() ? train_set : val_set;

  std::vector<ParamRef> params = parameters(model);
  const FreezeMask mask = FreezeMask::from(params);
  const std::string frozen_before = frozen_digest(params);
  AdamState adam;
  adam.lr = cfg.lr;
  PlateauScheduler sched(cfg.lr, cfg.plateau_patience, cfg.plateau_factor, cfg.min_lr,
                         cfg.plateau_threshold);
  Rng rng(cfg.seed);

  TrainingReport report;
  auto log_epoch = [&](const EpochRecord& r) {
    if (!cfg.log) return;
    char buf[200];
    std::snprintf(buf, sizeof buf, "epoch %3zu train_loss %.6g val_loss %.6g lr %.3g train_f1 %.4f val_f1 %.4f",
                  r.epoch, r.train_loss, r.val_loss, r.lr, r.train_f1, r.val_f1);
    *cfg.log << cfg.log_prefix << buf << "\n";
  };

  {
    const Evaluation tr = evaluate(model, train_set, loss);
    const Evaluation va = evaluate(model, selection, loss);
    report.epochs.push_back({0, tr.loss, va.loss, sched.lr(), tr.f1, va.f1});
    log_epoch(report.epochs.back());
    sched.step(va.loss);
  }
  report.best_val_loss = report.epochs[0].val_loss;
  std::vector<std::vector<double>> best = snapshot(params);
  std::size_t since_improvement = 0;
  report.stop_reason = cfg.max_epochs == 0 ? "no epochs requested" : "max epochs reached";

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> grads;
  std::vector<Matrix> batch;
  std::vector<int> batch_labels;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::vector<int> seen_labels, seen_preds;
    seen_labels.reserve(order.size());
    seen_preds.reserve(order.size());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      batch_labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(train_set.xs[order[k]]);
        batch_labels.push_back(train_set.labels[order[k]]);
      }
      OutputLoss fn = [&](std::size_t i, const Matrix& y, Matrix& dy) {
        seen_labels.push_back(batch_labels[i]);
        seen_preds.push_back(argmax_label(y));
        return loss.loss_and_grad(y, batch_labels[i], dy);
      };
      loss_sum += batch_gradient(model, batch, fn, grads);
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& g : grads)
        for (double& v : g) v *= inv;
      adam_step(adam, params, grads, mask);
    }
    if (frozen_digest(params) != frozen_before) {
      throw IntegrityError("frozen parameters changed during training");
    }
    const Evaluation va = evaluate(model, selection, loss);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), va.loss, adam.lr,
                    metrics(confusion(seen_labels, seen_preds)).f1, va.f1};
    report.epochs.push_back(rec);
    report.epochs_run = epoch;
    log_epoch(rec);

    if (va.loss < report.best_val_loss) {
      report.best_val_loss = va.loss;
      report.best_epoch = epoch;
      best = snapshot(params);
    }
    const auto outcome = sched.step(va.loss);
    since_improvement = outcome == PlateauScheduler::Outcome::improved ? 0 : since_improvement + 1;
    if (outcome == PlateauScheduler::Outcome::exhausted) {
      report.stop_reason = "learning rate exhausted";
      break;
    }
    adam.lr = sched.lr();
    if (since_improvement >= cfg.early_stop) {
      report.stop_reason = "no improvement for " + std::to_string(cfg.early_stop) + " epochs";
      break;
    }
  }
  restore(params, best);
  report.final_lr = adam.lr;
  return report;
}

std::string GradCheckReport::text() const {
  std::string out;
  char buf[256];
  for (const GradCheckGroup& g : groups) {
    if (!g.has_gradient) {
      std::snprintf(buf, sizeof buf, "%-28s no gradient (frozen)\n", g.name.c_str());
    } else {
      std::snprintf(buf, sizeof buf, "%-28s %6zu entries  max rel err %.3e\n", g.name.c_str(),
                    g.checked, g.max_rel_error);
    }
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "max rel err %.3e\n", max_rel_error);
  return out + buf;
}

GradCheckReport gradient_check(Model& model, const Matrix& x, int label,
                               const WeightedEntropyLoss& loss, std::size_t max_entries, double h) {
  OutputLoss fn = [&](std::size_t, const Matrix& y, Matrix& dy) {
    return loss.loss_and_grad(y, label, dy);
  };
  return gradient_check(model, x, fn, max_entries, h);
}

GradCheckReport gradient_check(Model& model, const Matrix& x, const OutputLoss& fn,
                               std::size_t max_entries, double h) {
  std::vector<std::vector<double>> grads;
  batch_gradient(model, std::span<const Matrix>(&x, 1), fn, grads);
  auto value = [&] {
    Matrix scratch;
    return fn(0, predict_one(model, x), scratch);
  };

  std::vector<ParamRef> params = parameters(model);
  const FreezeMask mask = FreezeMask::from(params);
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    GradCheckGroup g;
    g.name = params[t].name;
    if (!params[t].trainable) {
      g.has_gradient = false;
      report.groups.push_back(g);
      continue;
    }
    std::vector<std::size_t> entries;
    for (std::size_t i = 0; i < params[t].values.size(); ++i)
      if (mask.trainable[t][i]) entries.push_back(i);
    if (max_entries > 0 && entries.size() > max_entries) {
      std::vector<std::size_t> picked;
      for (std::size_t k = 0; k < max_entries; ++k) picked.push_back(entries[k * entries.size() / max_entries]);
      entries = std::move(picked);
    }
    for (std::size_t i : entries) {
      double& w = params[t].values[i];
      const double saved = w;
      w = saved + h;
      const double up = value();
      w = saved - h;
      const double down = value();
      w = saved;
      g.max_rel_error = std::max(g.max_rel_error, relative_error(grads[t][i], (up - down) / (2.0 * h)));
    }
    g.checked = entries.size();
    report.max_rel_error = std::max(report.max_rel_error, g.max_rel_error);
    report.groups.push_back(g);
  }
  return report;
}

}  // namespace tabl
