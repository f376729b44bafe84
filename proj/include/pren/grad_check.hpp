#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pren/random.hpp"
#include "pren/tensor.hpp"

namespace pren {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so entries whose true gradient
  /// is ~0 are judged by an absolute error of about floor * tolerance.
  double floor = 1e-6;
  /// Number of (parameter, element) probes; 0 checks every element.
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  bool passed = false;
  std::string diagnostic;  // set when a non-finite value was met
};

using NamedParam = std::pair<std::string, Tensor<double>>;

namespace detail {

inline std::string first_nonfinite_op(const Tensor<double>& root) {
  auto tape = Tape<double>::record(root);
  for (auto* n : tape.entries()) {
    for (double v : n->value) {
      if (!std::isfinite(v)) return std::string(n->op);
    }
  }
  return std::string(root.op_name());
}

}  // namespace detail

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences. `f` must rebuild the graph from `params` on each call.
template <typename F>
GradCheckReport grad_check(F&& f, std::vector<NamedParam> params, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  for (auto& [name, p] : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor<double> root = f();
  if (!std::isfinite(root.item())) {
    report.diagnostic = "non-finite loss produced by op '" + detail::first_nonfinite_op(root) + "'";
    return report;
  }
  backward(root);
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].second.numel(); ++j) probes.emplace_back(i, j);
  if (opt.samples > 0 && opt.samples < probes.size()) {
    Rng rng(opt.seed);
    rng.shuffle(std::span(probes));
    probes.resize(opt.samples);
    std::sort(probes.begin(), probes.end());
  }

  NoGradGuard no_grad;
  for (auto [pi, j] : probes) {
    auto& p = params[pi].second;
    auto data = p.data();
    const double orig = data[j];
    data[j] = orig + opt.step;
    const double fp = f().item();
    data[j] = orig - opt.step;
    const double fm = f().item();
    data[j] = orig;
    GradCheckEntry e;
    e.param = params[pi].first;
    e.index = j;
    e.analytic = analytic[pi][j];
    e.numeric = (fp - fm) / (2.0 * opt.step);
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(e.analytic)) {
      report.diagnostic = "non-finite value while probing '" + e.param + "'";
      report.entries.push_back(e);
      return report;
    }
    const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), opt.floor});
    e.rel_error = std::abs(e.analytic - e.numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  report.passed = report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace pren
