#pragma once

// Primitive representation learning. Both aggregators map one pyramid level
// to n primitive vectors of width d/3:
//
//   pooling:  p_i = Pool(conv2_i(phi(conv1(F))))      weights a_ij = 1/m
//   weighted: Z = phi(conv3(F)), H = sigmoid(conv4(F)), p_i = sum_xy H_ixy Z_xy
//
// The pooling aggregator's per-primitive sub-networks share one conv stack:
// conv2 emits n groups of d/3 channels and group i is primitive i.

#include <array>
#include <string>
#include <vector>

#include "pren/ops.hpp"
#include "pren/params.hpp"

namespace pren {

template <typename T>
struct PoolingAggregator {
  Conv<T> conv1, conv2;
  std::size_t n = 0, width = 0;

  PoolingAggregator() = default;
  PoolingAggregator(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t cin,
                    std::size_t n_, std::size_t width_)
      : conv1(ps, rng, name + ".conv1", cin, width_, 3, 2, 1),
        conv2(ps, rng, name + ".conv2", width_, n_ * width_, 3, 2, 1),
        n(n_),
        width(width_) {}

  /// Output of conv2 before pooling, [n*width x h' x w'].
  Tensor<T> pre_pool(const Tensor<T>& f) const { return conv2(swish(conv1(f))); }

  /// f: [c x h x w] -> [n x width].
  Tensor<T> operator()(const Tensor<T>& f, Tensor<T>* pre_pool_out = nullptr) const {
    auto z = pre_pool(f);
    if (pre_pool_out) *pre_pool_out = z;
    return reshape(global_avg_pool(z), {n, width});
  }
};

template <typename T>
struct WeightedOutput {
  Tensor<T> p;        // [n x width]
  Tensor<T> heatmaps; // [n x h x w], values in (0, 1)
};

template <typename T>
struct WeightedAggregator {
  Conv<T> conv3, conv4;
  std::size_t n = 0, width = 0;

  WeightedAggregator() = default;
  WeightedAggregator(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t cin,
                     std::size_t n_, std::size_t width_)
      : conv3(ps, rng, name + ".conv3", cin, width_, 3, 1, 1),
        conv4(ps, rng, name + ".conv4", cin, n_, 3, 1, 1),
        n(n_),
        width(width_) {}

  WeightedOutput<T> operator()(const Tensor<T>& f) const {
    const std::size_t m = f.dim(1) * f.dim(2);
    auto z = swish(conv3(f));
    auto h = sigmoid(conv4(f));
    // p = H_flat [n x m] * Z_flat[width x m]^T
    auto p = matmul_nt(reshape(h, {n, m}), reshape(z, {width, m}));
    return {p, h};
  }
};

/// Channel-wise concatenation of the three per-level parts in (f3, f5, f7)
/// order: [n x d/3] x 3 -> [n x d].
template <typename T>
Tensor<T> assemble_primitives(const std::vector<Tensor<T>>& parts) {
  if (parts.size() != 3)
    throw DimensionError("assemble_primitives: expected 3 parts, got " + std::to_string(parts.size()));
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != parts[0].dim(0))
      throw DimensionError("assemble_primitives: part " + shape_str(p.shape()) +
                           " does not match " + shape_str(parts[0].shape()));
  }
  return concat_cols(parts);
}

}  // namespace pren
