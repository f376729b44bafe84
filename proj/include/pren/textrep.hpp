#pragma once

// Visual text representations: Y = phi(B P W), where B [L x n] mixes the n
// primitives into L character slots and W [d x d] is a shared projection.

#include <cmath>
#include <string>
#include <vector>

#include "pren/ops.hpp"
#include "pren/params.hpp"
#include "pren/vocab.hpp"

namespace pren {

template <typename T>
struct GcnParams {
  Tensor<T> b;  // [L x n]
  Tensor<T> w;  // [d x d]

  GcnParams() = default;
  GcnParams(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t L, std::size_t n,
            std::size_t d)
      : b(ps.add(name + ".B", init::uniform<T>(rng, {L, n}, 1.0 / std::sqrt(static_cast<double>(n))))),
        w(ps.add(name + ".W", init::uniform<T>(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d))))) {}
};

template <typename T>
Tensor<T> gcn_project(const Tensor<T>& p, const GcnParams<T>& g) {
  if (p.rank() != 2 || p.dim(0) != g.b.dim(1) || p.dim(1) != g.w.dim(0))
    throw DimensionError("gcn_project: primitives " + shape_str(p.shape()) + " do not fit B " +
                         shape_str(g.b.shape()) + " / W " + shape_str(g.w.shape()));
  return swish(matmul(matmul(g.b, p), g.w));
}

template <typename T>
Tensor<T> fuse_vtr(const Tensor<T>& y1, const Tensor<T>& y2) {
  return add(y1, y2);
}

/// Shared fully-connected layer applied to every row of Y independently.
template <typename T>
struct ParallelHead {
  Linear<T> fc;

  ParallelHead() = default;
  ParallelHead(ParamStore<T>& ps, Rng& rng, std::size_t d, std::size_t classes)
      : fc(ps, rng, "head", d, classes) {}

  Tensor<T> logits(const Tensor<T>& y) const { return fc(y); }
};

/// Row-wise class distributions from Y [L x d] and a head [d x K] (+ bias).
template <typename T>
Tensor<T> parallel_decode(const Tensor<T>& y, const Tensor<T>& head_w, const Tensor<T>& head_b) {
  auto z = matmul(y, head_w);
  return softmax_lastdim(head_b.defined() ? add_rowvec(z, head_b) : z);
}

/// Index of the largest entry; ties go to the lowest index.
template <typename T>
int argmax_row(std::span<const T> row) {
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  return best;
}

/// Per-row argmax classes of an [L x K] score matrix.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
  const std::size_t L = scores.dim(0), K = scores.dim(1);
  std::vector<int> out(L);
  for (std::size_t t = 0; t < L; ++t) out[t] = argmax_row<T>(scores.data().subspan(t * K, K));
  return out;
}

/// Reads text up to the first <eos>. Without any <eos> all L symbols are
/// emitted; <pad> and other non-alphabet classes contribute no character.
template <typename T>
std::string greedy_readout(const Tensor<T>& probs, const Vocabulary& vocab) {
  return vocab.decode(argmax_rows(probs));
}

}  // namespace pren
