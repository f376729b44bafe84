#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace pren::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C (m x n) (+)= op(A) * op(B), all row-major and densely packed.
/// op(A) is m x k: A is stored m x k, or k x m when trans_a.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  using Map = Eigen::Map<const RowMat<T>>;
  Eigen::Map<RowMat<T>> cm(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += Map(a, M, K) * Map(b, K, N);
  } else if (!trans_a && trans_b) {
    cm.noalias() += Map(a, M, K) * Map(b, N, K).transpose();
  } else if (trans_a && !trans_b) {
    cm.noalias() += Map(a, K, M).transpose() * Map(b, K, N);
  } else {
    cm.noalias() += Map(a, K, M).transpose() * Map(b, N, K).transpose();
  }
}

}  // namespace pren::detail
