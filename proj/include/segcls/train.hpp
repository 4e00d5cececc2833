#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "segcls/error.hpp"
#include "segcls/eval.hpp"
#include "segcls/network.hpp"
#include "segcls/rng.hpp"

namespace segcls::train {

enum class TaskMode { kMultiLabel, kSingleLabel };

inline std::string mode_name(TaskMode m) { return m == TaskMode::kMultiLabel ? "multi_label" : "single_label"; }

inline TaskMode parse_mode(const std::string& s) {
  if (s == "multi_label") return TaskMode::kMultiLabel;
  if (s == "single_label") return TaskMode::kSingleLabel;
  throw UsageError("mode must be multi_label or single_label, got '" + s + "'");
}

inline model::Activation activation_for(TaskMode m) {
  return m == TaskMode::kMultiLabel ? model::Activation::kSigmoid : model::Activation::kSoftmax;
}

struct OptimizerConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 60;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0015;
  double dropout_p = 0.5;

  void validate() const {
    if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("betas must be in [0, 1)");
    if (batch_size == 0) throw UsageError("batch size must be >= 1");
    if (!(weight_decay >= 0.0)) throw UsageError("weight decay must be non-negative");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw UsageError("dropout p must be in [0, 1)");
  }
};

/// Step decay on validation plateaus: multiply lr by `factor` after every
/// `patience` epochs without improvement; stop after 2 * patience.
struct DecaySchedule {
  double factor = 0.1;
  std::size_t patience = 3;

  void validate() const {
    if (!(factor > 0.0 && factor < 1.0)) throw UsageError("decay factor must be in (0, 1)");
    if (patience == 0) throw UsageError("patience must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Validation split

/// Clip-level split: round(fraction * N) clips go to validation. Returns
/// (train indices, validation indices), each in ascending order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n_clips,
                                                                                      double fraction,
                                                                                      std::uint64_t seed) {
  if (n_clips < 10) throw DataError("validation split needs at least 10 clips, got " + std::to_string(n_clips));
  if (!(fraction > 0.0 && fraction < 1.0)) throw UsageError("validation fraction must be in (0, 1)");
  std::vector<std::size_t> idx(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 7));
  rng.shuffle(idx);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_clips)));
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// One Adam update over all parameters. Weight decay
/// (w <- w - lr * wd * w) is applied before the moment update and only to
/// parameters flagged for decay.
template <typename T>
void adam_step(const std::vector<nn::Param<T>*>& params, AdamState<T>& state, const OptimizerConfig& cfg,
               double lr) {
  for (auto* p : params) {
    for (auto g : p->value.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter " + p->name);
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (auto* p : params) {
      state.m.emplace_back(p->value.size(), T(0));
      state.v.emplace_back(p->value.size(), T(0));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k]->value;
    auto grad = value.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != value.size()) throw UsageError("Adam moment shape does not match parameter " + params[k]->name);
    const bool decay = params[k]->decay && cfg.weight_decay != 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      double w = static_cast<double>(value[i]);
      const double g = static_cast<double>(grad[i]);
      if (decay) w -= lr * cfg.weight_decay * w;
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      w -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      value[i] = static_cast<T>(w);
    }
  }
}

// ---------------------------------------------------------------------------
// Data

/// Segment-level examples grouped into samples (clips).
template <typename T>
struct Dataset {
  Dims example_dims;  // e.g. (1, 64, 98)
  std::size_t classes = 0;
  std::vector<std::vector<T>> inputs;       // one per segment
  std::vector<std::size_t> segment_sample;  // segment -> sample index
  std::vector<std::string> sample_ids;
  std::vector<std::vector<int>> sample_labels;  // multi-hot per sample

  std::size_t segments() const { return inputs.size(); }
  std::size_t samples() const { return sample_ids.size(); }

  /// Keeps only the listed samples (and their segments), preserving order.
  Dataset subset(const std::vector<std::size_t>& sample_indices) const {
    Dataset out;
    out.example_dims = example_dims;
    out.classes = classes;
    std::vector<std::optional<std::size_t>> remap(samples());
    for (auto s : sample_indices) {
      remap.at(s) = out.sample_ids.size();
      out.sample_ids.push_back(sample_ids[s]);
      out.sample_labels.push_back(sample_labels[s]);
    }
    for (std::size_t i = 0; i < segments(); ++i) {
      if (auto r = remap[segment_sample[i]]) {
        out.inputs.push_back(inputs[i]);
        out.segment_sample.push_back(*r);
      }
    }
    return out;
  }
};

template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const Dataset<T>& data, std::span<const std::size_t> segs) {
  Dims xd{segs.size()};
  xd.insert(xd.end(), data.example_dims.begin(), data.example_dims.end());
  const std::size_t per = element_count(data.example_dims);
  Tensor<T> x(xd);
  Tensor<T> y({segs.size(), data.classes});
  for (std::size_t b = 0; b < segs.size(); ++b) {
    const auto& in = data.inputs[segs[b]];
    if (in.size() != per) throw DataError("segment input has the wrong size");
    std::copy(in.begin(), in.end(), x.ptr() + b * per);
    const auto& lab = data.sample_labels[data.segment_sample[segs[b]]];
    for (std::size_t c = 0; c < data.classes; ++c) y[b * data.classes + c] = static_cast<T>(lab[c]);
  }
  return {std::move(x), std::move(y)};
}

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t batches = 0;
  double seconds = 0.0;
};

/// One pass over shuffled mini-batches; the final short batch is kept.
template <typename T>
EpochStats train_epoch(nn::Network<T>& net, const Dataset<T>& data, const OptimizerConfig& cfg, Rng& rng,
                       AdamState<T>& adam, double lr) {
  if (data.segments() == 0) throw DataError("cannot train on an empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(data.segments());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  EpochStats stats;
  double loss_sum = 0.0;
  const auto params = net.params();
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    auto [x, y] = make_batch(data, std::span<const std::size_t>(order).subspan(start, end - start));
    net.zero_grad();
    const auto loss = nn::compute_loss(net.forward(x, nn::Mode::kTrain), y, net.loss_kind());
    if (!std::isfinite(static_cast<double>(loss.value))) throw NumericError("non-finite training loss");
    net.backward(loss.grad_logits);
    adam_step(params, adam, cfg, lr);
    loss_sum += static_cast<double>(loss.value);
    ++stats.batches;
  }
  stats.mean_loss = loss_sum / static_cast<double>(stats.batches);
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return stats;
}

/// Eval-mode activations for every segment, as double rows.
template <typename T>
std::vector<eval::ScoreRow> predict_segments(nn::Network<T>& net, const Dataset<T>& data,
                                             std::size_t batch = 128) {
  std::vector<eval::ScoreRow> out;
  out.reserve(data.segments());
  std::vector<std::size_t> idx(data.segments());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const std::size_t end = std::min(idx.size(), start + batch);
    auto [x, y] = make_batch(data, std::span<const std::size_t>(idx).subspan(start, end - start));
    const auto s = net.scores(x);
    for (std::size_t b = 0; b < end - start; ++b) {
      eval::ScoreRow row(data.classes);
      for (std::size_t c = 0; c < data.classes; ++c) row[c] = static_cast<double>(s[b * data.classes + c]);
      out.push_back(std::move(row));
    }
  }
  return out;
}

/// Sample-level score table: each sample's score is the mean of its
/// segments' scores.
template <typename T>
eval::ScoreTable sample_table(const Dataset<T>& data, const std::vector<eval::ScoreRow>& segment_scores) {
  std::vector<std::vector<eval::ScoreRow>> grouped(data.samples());
  for (std::size_t i = 0; i < segment_scores.size(); ++i) grouped[data.segment_sample[i]].push_back(segment_scores[i]);
  eval::ScoreTable t;
  for (std::size_t s = 0; s < data.samples(); ++s) {
    if (grouped[s].empty()) throw DataError("sample " + data.sample_ids[s] + " has no segments");
    t.sample_ids.push_back(data.sample_ids[s]);
    t.scores.push_back(eval::aggregate_sample_scores(grouped[s]));
    t.labels.push_back(data.sample_labels[s]);
  }
  return t;
}

/// Weighted AUC (multi-label) or accuracy (single-label) at sample level.
inline double validation_metric(const eval::ScoreTable& table, TaskMode mode) {
  return mode == TaskMode::kMultiLabel ? eval::weighted_auc(table).overall : eval::accuracy(table);
}

template <typename T>
double mean_loss(nn::Network<T>& net, const Dataset<T>& data, std::size_t batch = 128) {
  double total = 0.0;
  std::vector<std::size_t> idx(data.segments());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const std::size_t end = std::min(idx.size(), start + batch);
    auto [x, y] = make_batch(data, std::span<const std::size_t>(idx).subspan(start, end - start));
    const auto r = nn::compute_loss(net.forward(x, nn::Mode::kEval), y, net.loss_kind());
    total += static_cast<double>(r.value) * static_cast<double>(end - start);
  }
  return total / static_cast<double>(data.segments());
}

// ---------------------------------------------------------------------------
// fit

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double val_loss = 0.0;
  double best_val = 0.0;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},       {"lr", r.lr},           {"train_loss", r.train_loss},
          {"val_metric", r.val_metric}, {"val_loss", r.val_loss}, {"best_val", r.best_val},
          {"seconds", r.seconds}};
}

struct FitResult {
  std::vector<nn::NamedTensor> best_state;
  std::vector<EpochRecord> history;
  double final_lr = 0.0;
  bool early_stopped = false;
};

struct FitOptions {
  OptimizerConfig optimizer;
  DecaySchedule schedule;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 0;
  TaskMode mode = TaskMode::kMultiLabel;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Overrides the rate of every Dropout layer.
inline model::ModelSpec with_dropout(model::ModelSpec spec, double p) {
  for (auto& l : spec.layers) {
    if (auto* d = std::get_if<model::Dropout>(&l)) d->p = p;
  }
  return spec;
}

/// Trains until max_epochs or until the validation metric has not improved
/// for 2 * patience epochs. Returns the best-validation state; ties on the
/// metric are broken by lower validation loss.
template <typename T>
FitResult fit(nn::Network<T>& net, const Dataset<T>& train_set, const Dataset<T>& val_set, const FitOptions& opt) {
  opt.optimizer.validate();
  opt.schedule.validate();
  FitResult result;
  result.final_lr = opt.optimizer.learning_rate;
  result.best_state = net.state();
  if (opt.max_epochs == 0) return result;
  if (val_set.segments() == 0) throw DataError("validation set is empty");

  Rng rng(derive_seed(opt.seed, 3));
  AdamState<T> adam;
  double lr = opt.optimizer.learning_rate;
  std::optional<double> best_metric;
  double best_loss = 0.0;
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    const auto stats = train_epoch(net, train_set, opt.optimizer, rng, adam, lr);
    const auto t0 = std::chrono::steady_clock::now();
    const auto table = sample_table(val_set, predict_segments(net, val_set));
    const double metric = validation_metric(table, opt.mode);
    const double vloss = mean_loss(net, val_set);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = stats.mean_loss;
    rec.val_metric = metric;
    rec.val_loss = vloss;

    const bool improved = !best_metric || metric > *best_metric || (metric == *best_metric && vloss < best_loss);
    if (improved) {
      best_metric = metric;
      best_loss = vloss;
      result.best_state = net.state();
      stale = 0;
    } else {
      ++stale;
    }
    rec.best_val = *best_metric;
    rec.seconds = stats.seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);

    if (stale >= 2 * opt.schedule.patience) {
      result.early_stopped = true;
      break;
    }
    if (stale > 0 && stale % opt.schedule.patience == 0) lr *= opt.schedule.factor;
  }
  result.final_lr = lr;
  return result;
}

}  // namespace segcls::train
