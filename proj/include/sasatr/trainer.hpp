#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "sasatr/chip.hpp"
#include "sasatr/error.hpp"
#include "sasatr/io.hpp"
#include "sasatr/nn/model.hpp"
#include "sasatr/nn/optimizer.hpp"
#include "sasatr/nn/serialize.hpp"
#include "sasatr/representations.hpp"
#include "sasatr/rng.hpp"
#include "sasatr/stats.hpp"
#include "sasatr/synth.hpp"

namespace sasatr::train {

using Logger = std::function<void(const std::string&)>;

struct TrainConfig {
  ReprSet reprs{Representation::magnitude};
  double learning_rate = 1e-3;
  double dropout_rate = 0.5;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 1;
  Split early_stop_split = Split::validation;
  std::size_t steps_per_epoch = 0;  // 0: ceil(2 * majority / batch_size)
  std::size_t input_side = 64;
  double crop_fraction = 0.8;
  ReprOptions repr_options;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw InvalidParameter("learning_rate must be positive");
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) throw InvalidParameter("dropout_rate must lie in [0,1)");
  if (c.batch_size < 2 || c.batch_size % 2 != 0) throw InvalidParameter("batch_size must be even and >= 2");
  if (c.max_epochs < 1) throw InvalidParameter("max_epochs must be >= 1");
  if (c.patience < 1) throw InvalidParameter("patience must be >= 1");
  if (c.early_stop_split == Split::train) throw InvalidParameter("early stopping cannot monitor the training split");
  if (!(c.crop_fraction > 0.0 && c.crop_fraction <= 1.0)) throw InvalidParameter("crop_fraction must lie in (0,1]");
  if (nn::tap_side(c.input_side) == 0) throw InvalidParameter("input_side too small for the network");
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double monitored_auc = 0.0;
  double seconds = 0.0;
};

// ---- augmentation ---------------------------------------------------------------

/// Reverses the row order (cross-range flip).
inline ComplexChip augment_vflip(const ComplexChip& chip) {
  ComplexChip out(chip.height(), chip.width(), chip.extent_m);
  const std::size_t w = chip.width();
  for (std::size_t r = 0; r < chip.height(); ++r)
    std::copy_n(chip.pixels.data.begin() + static_cast<std::ptrdiff_t>((chip.height() - 1 - r) * w), w,
                out.pixels.data.begin() + static_cast<std::ptrdiff_t>(r * w));
  return out;
}

inline std::pair<std::size_t, std::size_t> crop_dims(const ComplexChip& chip, double fraction) {
  const auto h = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(chip.height())));
  const auto w = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(chip.width())));
  if (h < kMinChipSide || w < kMinChipSide)
    throw ShapeError("a " + io::fmt(fraction, 2) + " crop of a " + std::to_string(chip.height()) + "x" +
                     std::to_string(chip.width()) + " chip is smaller than 16x16");
  return {h, w};
}

inline ComplexChip crop_window(const ComplexChip& chip, std::size_t r0, std::size_t c0, std::size_t h, std::size_t w) {
  if (r0 + h > chip.height() || c0 + w > chip.width()) throw ShapeError("crop window outside the chip");
  ComplexChip out(h, w, chip.extent_m * static_cast<double>(w) / static_cast<double>(chip.width()));
  for (std::size_t r = 0; r < h; ++r)
    std::copy_n(chip.pixels.data.begin() + static_cast<std::ptrdiff_t>((r0 + r) * chip.width() + c0), w,
                out.pixels.data.begin() + static_cast<std::ptrdiff_t>(r * w));
  return out;
}

/// Window of round(fraction*h) x round(fraction*w) at a uniform offset.
inline ComplexChip augment_random_crop(const ComplexChip& chip, double fraction, Rng& rng) {
  const auto [h, w] = crop_dims(chip, fraction);
  const auto r0 = static_cast<std::size_t>(rng.below(chip.height() - h + 1));
  const auto c0 = static_cast<std::size_t>(rng.below(chip.width() - w + 1));
  return crop_window(chip, r0, c0, h, w);
}

inline ComplexChip center_crop(const ComplexChip& chip, double fraction) {
  const auto [h, w] = crop_dims(chip, fraction);
  return crop_window(chip, (chip.height() - h) / 2, (chip.width() - w) / 2, h, w);
}

// ---- network inputs ------------------------------------------------------------

/// Representation of an already-cropped chip, resized to side x side.
inline std::vector<float> network_plane(const ComplexChip& cropped, Representation r, std::size_t side,
                                        const ReprOptions& opt) {
  const auto rep = resize_bilinear(extract(cropped, r, opt), side, side);
  std::vector<float> out(rep.values.size());
  std::transform(rep.values.data.begin(), rep.values.data.end(), out.begin(),
                 [](double v) { return static_cast<float>(v); });
  return out;
}

/// Chips with their labels and metadata.
struct LabeledChips {
  std::vector<ComplexChip> chips;
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::vector<std::string> trials;

  std::size_t size() const noexcept { return chips.size(); }
  void push_back(ComplexChip c, int label, std::string id = {}, std::string trial = {}) {
    chips.push_back(std::move(c));
    labels.push_back(label);
    ids.push_back(std::move(id));
    trials.push_back(std::move(trial));
  }
  LabeledChips subset(const std::vector<std::size_t>& idx) const {
    LabeledChips s;
    for (auto i : idx) s.push_back(chips.at(i), labels[i], ids[i], trials[i]);
    return s;
  }
};

/// Reads every chip of `split` listed in the manifest under `dir`.
inline LabeledChips load_split(const std::filesystem::path& dir, const std::vector<ChipRecord>& records, Split split) {
  LabeledChips out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(io::read_chip(dir / r.path), r.label, r.chip_id, r.trial_name);
  return out;
}

/// Center-cropped, resized representation planes for evaluation, one plane
/// set per representation so configurations can share them.
struct PreparedSet {
  std::size_t side = 0;
  std::map<Representation, std::vector<float>> planes;  // n * side * side each
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::vector<std::string> trials;

  std::size_t size() const noexcept { return labels.size(); }
};

inline PreparedSet prepare_eval_set(const LabeledChips& data, const std::vector<Representation>& reprs,
                                    std::size_t side, double crop_fraction, const ReprOptions& opt) {
  PreparedSet p{side, {}, data.labels, data.ids, data.trials};
  const std::size_t plane = side * side;
  for (auto r : reprs) p.planes[r].resize(data.size() * plane);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto cropped = center_crop(data.chips[i], crop_fraction);
    for (auto r : reprs) {
      const auto v = network_plane(cropped, r, side, opt);
      std::copy(v.begin(), v.end(), p.planes[r].begin() + static_cast<std::ptrdiff_t>(i * plane));
    }
  }
  return p;
}

inline std::vector<nn::Tensor<float>> gather_inputs(const PreparedSet& set, const ReprSet& reprs, std::size_t begin,
                                                    std::size_t end) {
  const std::size_t plane = set.side * set.side;
  std::vector<nn::Tensor<float>> inputs;
  for (auto r : reprs.members()) {
    const auto it = set.planes.find(r);
    if (it == set.planes.end())
      throw InvalidParameter("prepared set lacks the " + std::string(short_name(r)) + " representation");
    nn::Tensor<float> t({end - begin, set.side, set.side, 1});
    std::copy(it->second.begin() + static_cast<std::ptrdiff_t>(begin * plane),
              it->second.begin() + static_cast<std::ptrdiff_t>(end * plane), t.values().begin());
    inputs.push_back(std::move(t));
  }
  return inputs;
}

inline constexpr std::size_t kEvalBatch = 64;

/// Eval-mode scores in (0,1), in input order.
inline std::vector<double> predict(const nn::Model<float>& model, const PreparedSet& set) {
  if (set.side != model.input_side())
    throw ShapeError("prepared inputs are " + std::to_string(set.side) + " pixels but the model expects " +
                     std::to_string(model.input_side()));
  std::vector<double> scores;
  scores.reserve(set.size());
  for (std::size_t b = 0; b < set.size(); b += kEvalBatch) {
    const auto e = std::min(set.size(), b + kEvalBatch);
    const auto out = model.forward(gather_inputs(set, model.reprs(), b, e), nn::Mode::eval);
    for (float s : out.scores.values()) scores.push_back(nn::clamp_probability(static_cast<double>(s)));
  }
  return scores;
}

/// Scores for raw chips with the standard eval preprocessing.
inline std::vector<double> predict(const nn::Model<float>& model, const LabeledChips& chips, const ReprSet& reprs,
                                   double crop_fraction = 0.8, const ReprOptions& opt = {}) {
  if (!(reprs == model.reprs()))
    throw InvalidParameter("model was trained on " + model.reprs().name() + " but " + reprs.name() + " was requested");
  return predict(model, prepare_eval_set(chips, reprs.members(), model.input_side(), crop_fraction, opt));
}

// ---- balanced batches -----------------------------------------------------------

struct Draw {
  std::size_t index = 0;
  int label = 0;
  bool flip = false;
};

/// Half of every batch from each class. The majority class is drawn without
/// replacement and reshuffled when exhausted; the minority class is drawn with
/// replacement and flipped with probability 0.5.
class BalancedSampler {
 public:
  BalancedSampler(const std::vector<int>& labels, std::size_t batch_size) : batch_(batch_size) {
    if (batch_size < 2 || batch_size % 2 != 0) throw InvalidParameter("batch_size must be even and >= 2");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) throw ConfigError("training data must contain both classes");
    majority_label_ = pos.size() > neg.size() ? 1 : 0;
    majority_ = majority_label_ == 1 ? pos : neg;
    minority_ = majority_label_ == 1 ? neg : pos;
    cursor_ = majority_.size();
  }

  std::size_t majority_count() const noexcept { return majority_.size(); }
  std::size_t minority_count() const noexcept { return minority_.size(); }
  int majority_label() const noexcept { return majority_label_; }
  std::size_t default_steps_per_epoch() const noexcept { return (2 * majority_.size() + batch_ - 1) / batch_; }

  std::vector<Draw> next(Rng& rng) {
    std::vector<Draw> batch;
    batch.reserve(batch_);
    for (std::size_t k = 0; k < batch_ / 2; ++k) {
      if (cursor_ == majority_.size()) {
        rng.shuffle(std::span(majority_));
        cursor_ = 0;
      }
      batch.push_back({majority_[cursor_++], majority_label_, false});
      const auto m = minority_[static_cast<std::size_t>(rng.below(minority_.size()))];
      batch.push_back({m, 1 - majority_label_, rng.bernoulli(0.5)});
    }
    return batch;
  }

 private:
  std::size_t batch_;
  int majority_label_ = 0;
  std::vector<std::size_t> majority_, minority_;
  std::size_t cursor_ = 0;
};

// ---- early stopping -------------------------------------------------------------

/// Stops once the best epoch has fallen out of the last `patience` epochs.
/// Ties keep the earlier epoch.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience < 1) throw InvalidParameter("patience must be >= 1");
  }

  /// Returns true when `epoch` is the new best.
  bool update(std::size_t epoch, double auc) {
    if (best_epoch_ == 0 || auc > best_) {
      best_ = auc;
      best_epoch_ = epoch;
      return true;
    }
    return false;
  }
  bool should_stop(std::size_t epoch) const noexcept { return best_epoch_ + patience_ <= epoch; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_auc = 0.0;
};

/// Epoch loop shared by training and the pilots. `run_epoch(epoch)` returns
/// the mean training loss, `monitor()` the monitored AUC; on return `model`
/// holds the best-AUC snapshot.
template <class T, class EpochFn, class MonitorFn>
FitResult fit(nn::Model<T>& model, std::size_t max_epochs, std::size_t patience, EpochFn&& run_epoch,
              MonitorFn&& monitor, const Logger& log = {}) {
  EarlyStopping stop(patience);
  FitResult res;
  nn::Model<T> best = model;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double loss = run_epoch(epoch);
    if (!std::isfinite(loss)) throw NumericError("epoch " + std::to_string(epoch), "non-finite training loss");
    const double auc = monitor();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back({epoch, loss, auc, secs});
    if (stop.update(epoch, auc)) best = model;
    if (log)
      log("epoch " + std::to_string(epoch) + " loss " + io::fmt(loss, 5) + " auc " + io::fmt(auc, 4) + " (" +
          io::fmt(secs, 1) + " s)");
    if (stop.should_stop(epoch)) break;
  }
  res.best_epoch = stop.best_epoch();
  res.best_auc = stop.best();
  model = std::move(best);
  return res;
}

// ---- training -------------------------------------------------------------------

/// Model, optimizer and batch stream for one run.
class Trainer {
 public:
  Trainer(const TrainConfig& config, const LabeledChips& data)
      : config_(config),
        data_(data),
        model_(config.reprs, config.input_side, config.dropout_rate, config.seed),
        optimizer_(config.learning_rate),
        sampler_(data.labels, config.batch_size),
        batch_rng_(Rng::derive(config.seed, "batches")),
        dropout_rng_(Rng::derive(config.seed, "dropout")) {
    validate(config);
    steps_ = config.steps_per_epoch ? config.steps_per_epoch : sampler_.default_steps_per_epoch();
  }

  nn::Model<float>& model() noexcept { return model_; }
  const BalancedSampler& sampler() const noexcept { return sampler_; }
  std::size_t steps_per_epoch() const noexcept { return steps_; }

  /// One optimizer step; returns the batch loss.
  double step() {
    const auto draws = sampler_.next(batch_rng_);
    const std::size_t side = config_.input_side;
    const std::size_t plane = side * side;
    std::vector<nn::Tensor<float>> inputs;
    for (std::size_t p = 0; p < config_.reprs.size(); ++p) inputs.emplace_back(nn::Shape{draws.size(), side, side, 1});
    std::vector<float> labels;
    for (std::size_t b = 0; b < draws.size(); ++b) {
      const auto& src = data_.chips[draws[b].index];
      const auto cropped = draws[b].flip ? augment_random_crop(augment_vflip(src), config_.crop_fraction, batch_rng_)
                                         : augment_random_crop(src, config_.crop_fraction, batch_rng_);
      for (std::size_t p = 0; p < config_.reprs.size(); ++p) {
        const auto v = network_plane(cropped, config_.reprs[p], side, config_.repr_options);
        std::copy(v.begin(), v.end(), inputs[p].values().begin() + static_cast<std::ptrdiff_t>(b * plane));
      }
      labels.push_back(static_cast<float>(draws[b].label));
    }
    const auto fwd = model_.forward(inputs, nn::Mode::train, &dropout_rng_);
    const auto lg = nn::sigmoid_bce(fwd.logits, labels);
    if (!std::isfinite(lg.loss)) throw NumericError("head/loss", "non-finite loss at step " + std::to_string(steps_done_));
    model_.zero_grad();
    model_.backward(fwd, lg.grad_logits);
    optimizer_.step(model_.params());
    ++steps_done_;
    return lg.loss;
  }

  /// Mean batch loss over one epoch.
  double run_epoch() {
    double sum = 0.0;
    for (std::size_t s = 0; s < steps_; ++s) sum += step();
    return sum / static_cast<double>(steps_);
  }

 private:
  TrainConfig config_;
  const LabeledChips& data_;
  nn::Model<float> model_;
  nn::RmsProp<float> optimizer_;
  BalancedSampler sampler_;
  Rng batch_rng_;
  Rng dropout_rng_;
  std::size_t steps_ = 0;
  std::size_t steps_done_ = 0;
};

struct TrainResult {
  nn::Model<float> model;  // best-AUC snapshot
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_auc = 0.0;
};

/// Trains on `data`, monitoring AUC on `monitored` after every epoch.
inline TrainResult train(const TrainConfig& config, const LabeledChips& data, const PreparedSet& monitored,
                         const Logger& log = {}) {
  validate(config);
  Trainer t(config, data);
  auto monitor = [&] { return stats::auc(predict(t.model(), monitored), monitored.labels); };
  auto r = fit(t.model(), config.max_epochs, config.patience, [&](std::size_t) { return t.run_epoch(); }, monitor, log);
  return {t.model(), std::move(r.history), r.best_epoch, r.best_auc};
}

// ---- pilots ---------------------------------------------------------------------

inline const std::vector<double> kPilotLearningRates{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
inline const std::vector<double> kPilotDropoutRates{0.0, 0.50, 0.66, 0.75, 0.90};
inline constexpr double kPilotFraction = 0.1;
inline constexpr std::size_t kPilotMinChips = 200;

/// Indices of round(fraction * count) members of each class (at least one).
inline std::vector<std::size_t> stratified_subset(const std::vector<int>& labels, double fraction, Rng& rng) {
  std::vector<std::size_t> out;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    if (idx.empty()) continue;
    rng.shuffle(std::span(idx));
    const auto k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))), 1, idx.size());
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline bool strictly_decreasing(const std::vector<double>& losses) {
  for (std::size_t i = 1; i < losses.size(); ++i)
    if (!(losses[i] < losses[i - 1])) return false;
  return true;
}

struct PilotCurve {
  double value = 0.0;
  std::vector<double> losses;
  double auc = 0.0;  // dropout pilot only
};

struct PilotResult {
  double chosen = 0.0;
  bool fallback = false;  // no candidate qualified
  std::vector<PilotCurve> curves;
};

/// Largest learning rate whose epoch losses strictly decrease; the smallest
/// candidate (flagged) when none does.
inline PilotResult select_learning_rate(std::vector<PilotCurve> curves) {
  if (curves.empty()) throw InvalidParameter("no learning-rate candidates");
  PilotResult r{0.0, true, std::move(curves)};
  double smallest = std::numeric_limits<double>::infinity();
  for (const auto& c : r.curves) {
    smallest = std::min(smallest, c.value);
    if (strictly_decreasing(c.losses) && (r.fallback || c.value > r.chosen)) {
      r.chosen = c.value;
      r.fallback = false;
    }
  }
  if (r.fallback) r.chosen = smallest;
  return r;
}

/// Highest pilot AUC; ties go to the larger rate.
inline PilotResult select_dropout(std::vector<PilotCurve> curves) {
  if (curves.empty()) throw InvalidParameter("no dropout candidates");
  PilotResult r{0.0, false, std::move(curves)};
  const PilotCurve* best = nullptr;
  for (const auto& c : r.curves)
    if (!best || c.auc > best->auc || (c.auc == best->auc && c.value > best->value)) best = &c;
  r.chosen = best->value;
  return r;
}

inline void check_pilot_subset(const LabeledChips& subset) {
  if (subset.size() < kPilotMinChips)
    throw ConfigError("pilot subset has " + std::to_string(subset.size()) + " chips, at least " +
                      std::to_string(kPilotMinChips) + " are needed");
}

inline PilotResult lr_pilot(const TrainConfig& base, const LabeledChips& subset,
                            const std::vector<double>& candidates = kPilotLearningRates, std::size_t epochs = 10,
                            const Logger& log = {}) {
  check_pilot_subset(subset);
  std::vector<PilotCurve> curves;
  for (double lr : candidates) {
    auto cfg = base;
    cfg.learning_rate = lr;
    Trainer t(cfg, subset);
    PilotCurve c{lr, {}, 0.0};
    for (std::size_t e = 0; e < epochs; ++e) c.losses.push_back(t.run_epoch());
    if (log) log("lr pilot " + io::fmt_sci(lr, 0) + (strictly_decreasing(c.losses) ? " monotonic" : " not monotonic"));
    curves.push_back(std::move(c));
  }
  auto r = select_learning_rate(std::move(curves));
  if (r.fallback && log) log("warning: no learning rate converged monotonically, using the smallest");
  return r;
}

inline PilotResult dropout_pilot(const TrainConfig& base, const LabeledChips& subset, const PreparedSet& monitored,
                                 const std::vector<double>& rates = kPilotDropoutRates, std::size_t epochs = 20,
                                 const Logger& log = {}) {
  check_pilot_subset(subset);
  std::vector<PilotCurve> curves;
  for (double rate : rates) {
    auto cfg = base;
    cfg.dropout_rate = rate;
    cfg.max_epochs = epochs;
    cfg.patience = epochs;
    const auto res = train(cfg, subset, monitored);
    PilotCurve c{rate, {}, res.best_auc};
    for (const auto& h : res.history) c.losses.push_back(h.train_loss);
    if (log) log("dropout pilot " + io::fmt(rate, 2) + " auc " + io::fmt(res.best_auc, 4));
    curves.push_back(std::move(c));
  }
  return select_dropout(std::move(curves));
}

// ---- artifacts ------------------------------------------------------------------

inline std::string encode_history(const std::vector<EpochRecord>& history) {
  std::string s = "epoch\ttrain_loss\tmonitored_auc\tseconds\n";
  for (const auto& h : history)
    s += io::join({std::to_string(h.epoch), io::fmt(h.train_loss, 6), io::fmt(h.monitored_auc, 6),
                   io::fmt(h.seconds, 3)}) +
         "\n";
  return s;
}

inline std::string encode_run_manifest(const TrainConfig& c, const TrainResult* result = nullptr) {
  std::string s;
  auto kv = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  kv("inputs", c.reprs.name());
  kv("learning_rate", io::fmt_sci(c.learning_rate, 6));
  kv("dropout", io::fmt(c.dropout_rate, 4));
  kv("batch_size", std::to_string(c.batch_size));
  kv("max_epochs", std::to_string(c.max_epochs));
  kv("patience", std::to_string(c.patience));
  kv("seed", std::to_string(c.seed));
  kv("early_stop_on", std::string(to_string(c.early_stop_split)));
  kv("steps_per_epoch", c.steps_per_epoch ? std::to_string(c.steps_per_epoch) : "auto");
  kv("input_side", std::to_string(c.input_side));
  kv("crop_fraction", io::fmt(c.crop_fraction, 4));
  kv("dynamic_range_db", io::fmt(c.repr_options.dynamic_range_db, 2));
  kv("psd_linear", c.repr_options.psd_linear ? "true" : "false");
  if (result) {
    kv("epochs_run", std::to_string(result->history.size()));
    kv("best_epoch", std::to_string(result->best_epoch));
    kv("best_auc", io::fmt(result->best_auc, 6));
  }
  return s;
}

}  // namespace sasatr::train
