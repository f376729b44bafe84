#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pren/model.hpp"
#include "pren/ops.hpp"
#include "pren/synthdata.hpp"
#include "pren/targets.hpp"

namespace pren {

/// Negative log-likelihood summed over the <eos>-terminated label; <pad>
/// positions contribute nothing.
template <typename T>
Tensor<T> compute_loss(const Tensor<T>& logits, const TargetSeq& target) {
  return cross_entropy_sum(logits, target.ids, target.mask);
}

/// Per-parameter ADADELTA accumulators.
template <typename T>
struct OptState {
  double rho = 0.9;
  double eps = 1e-6;
  std::map<std::string, std::vector<T>> sq_grad;   // E[g^2]
  std::map<std::string, std::vector<T>> sq_delta;  // E[dx^2]
};

/// ADADELTA: E[g^2] <- rho E[g^2] + (1-rho) g^2;
///           dx = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g;
///           E[dx^2] <- rho E[dx^2] + (1-rho) dx^2;  x <- x + lr * dx.
template <typename T>
void adadelta_step(ParamStore<T>& params, OptState<T>& state, double lr) {
  const T rho = static_cast<T>(state.rho);
  const T eps = static_cast<T>(state.eps);
  const T step = static_cast<T>(lr);
  for (auto& [name, p] : params.items()) {
    auto g = p.grad();
    for (T v : g) {
      if (!std::isfinite(v)) throw NumericError("adadelta: non-finite gradient in parameter '" + name + "'");
    }
    auto& eg = state.sq_grad[name];
    auto& ed = state.sq_delta[name];
    if (eg.size() != p.numel()) eg.assign(p.numel(), T(0));
    if (ed.size() != p.numel()) ed.assign(p.numel(), T(0));
    auto x = p.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      eg[i] = rho * eg[i] + (T(1) - rho) * g[i] * g[i];
      const T dx = -std::sqrt(ed[i] + eps) / std::sqrt(eg[i] + eps) * g[i];
      ed[i] = rho * ed[i] + (T(1) - rho) * dx * dx;
      x[i] += step * dx;
    }
  }
}

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& params, double max_norm) {
  double sq = 0;
  for (auto& [_, p] : params.items())
    for (T v : p.grad()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& [_, p] : params.items())
      for (auto& v : p.mutable_grad()) v *= f;
  }
  return norm;
}

/// Piecewise-constant learning rate: `initial` until the first drop epoch.
struct LrSchedule {
  double initial = 0.5;
  std::vector<std::pair<std::size_t, double>> drops{{2, 0.1}};  // (0-based epoch, lr)

  double at(std::size_t epoch) const {
    double lr = initial;
    for (const auto& [e, v] : drops)
      if (epoch >= e) lr = v;
    return lr;
  }
};

struct TrainOptions {
  std::size_t batch = 32;
  double clip = 5.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;      // global step count after this epoch
  double mean_loss = 0;       // mean per-sample loss over the epoch
  double lr = 0;
  std::vector<double> step_losses;  // mean per-sample loss of each batch
};

/// Batches hold one canvas shape each; the batch order interleaves
/// orientations randomly.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<LabeledSample>& data,
                                                          std::size_t batch, Rng& rng) {
  if (batch == 0) throw ConfigError("batch size must be positive");
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) groups[{data[i].height, data[i].width}].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [_, idx] : groups) {
    rng.shuffle(std::span(idx));
    for (std::size_t s = 0; s < idx.size(); s += batch)
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(s + batch, idx.size())));
  }
  rng.shuffle(std::span(batches));
  return batches;
}

/// Runs forward/backward on one batch, leaving the mean-of-sums gradient in
/// the parameters. Returns the mean per-sample loss.
template <typename T>
double accumulate_batch(Recognizer<T>& model, const std::vector<LabeledSample>& data,
                        const std::vector<std::size_t>& batch) {
  const T inv = T(1) / static_cast<T>(batch.size());
  double total = 0;
  for (std::size_t i : batch) {
    const auto& s = data[i];
    const auto target = make_targets(s.text, model.vocab(), model.config().L, s.id);
    auto loss = compute_loss(model.logits(s.image<T>(), target), target);
    const double v = static_cast<double>(loss.item());
    if (!std::isfinite(v)) throw NumericError("non-finite loss on sample " + s.id);
    total += v;
    backward(scale(loss, inv));
  }
  return total / static_cast<double>(batch.size());
}

template <typename T>
EpochMetrics train_epoch(Recognizer<T>& model, const std::vector<LabeledSample>& data, OptState<T>& opt,
                         double lr, Rng& rng, const TrainOptions& options, std::size_t step_offset = 0) {
  if (data.empty()) throw UsageError("train_epoch: empty dataset");
  EpochMetrics m;
  m.lr = lr;
  double total = 0;
  std::size_t count = 0;
  const auto batches = make_batches(data, options.batch, rng);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    model.params().zero_grad();
    double loss = 0;
    try {
      loss = accumulate_batch(model, data, batches[b]);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (batch " + std::to_string(step_offset + b) + ")");
    }
    clip_grad_norm(model.params(), options.clip);
    adadelta_step(model.params(), opt, lr);
    m.step_losses.push_back(loss);
    total += loss * static_cast<double>(batches[b].size());
    count += batches[b].size();
  }
  m.steps = step_offset + batches.size();
  m.mean_loss = total / static_cast<double>(count);
  return m;
}

struct SliceAccuracy {
  std::size_t correct = 0, total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Word accuracy. `horizontal` and `vertical` group samples by canvas shape
/// (skewed samples live on the horizontal canvas); `average` is their mean.
struct EvalReport {
  SliceAccuracy horizontal, vertical, skewed, overall;
  double average = 0;
  std::vector<std::string> predictions;
};

template <typename T>
EvalReport evaluate(const Recognizer<T>& model, const std::vector<LabeledSample>& data) {
  if (data.empty()) throw UsageError("evaluate: empty dataset");
  EvalReport r;
  for (const auto& s : data) {
    auto pred = model.recognize(s.image<T>());
    const bool ok = pred == s.text;
    auto& slice = s.height > s.width ? r.vertical : r.horizontal;
    slice.total++;
    slice.correct += ok;
    if (s.orientation == Orientation::skewed) {
      r.skewed.total++;
      r.skewed.correct += ok;
    }
    r.overall.total++;
    r.overall.correct += ok;
    r.predictions.push_back(std::move(pred));
  }
  if (r.horizontal.total && r.vertical.total)
    r.average = 0.5 * (r.horizontal.accuracy() + r.vertical.accuracy());
  else
    r.average = r.horizontal.total ? r.horizontal.accuracy() : r.vertical.accuracy();
  return r;
}

}  // namespace pren
