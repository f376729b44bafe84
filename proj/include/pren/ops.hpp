#pragma once

// Differentiable operations. Each op computes its forward value eagerly and,
// when recording, attaches the exact backward rule for its operands.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pren/errors.hpp"
#include "pren/gemm.hpp"
#include "pren/tensor.hpp"

namespace pren {

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t r, const char* op) {
  require(a.rank() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                             shape_str(a.shape()));
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto g = in->grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto g = self.inputs[0]->grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto g = self.inputs[1]->grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto g = A.grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto g = B.grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    auto g = self.inputs[0]->grad_span();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

/// x[..., c] + bias[c], broadcast over all leading dimensions.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_rank(bias, 1, "add_rowvec");
  const std::size_t c = bias.numel();
  detail::require(x.shape().back() == c, "add_rowvec: last extent of " + shape_str(x.shape()) +
                                             " does not match bias " + shape_str(bias.shape()));
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  const auto bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % c];
  return make_result<T>("add_rowvec", x.shape(), std::move(out), {x, bias}, [c](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto g = self.inputs[0]->grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto g = self.inputs[1]->grad_span();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % c] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (auto v : a.data()) s += v;
  return make_result<T>("sum", {1}, {s}, {a}, [](Node<T>& self) {
    auto g = self.inputs[0]->grad_span();
    const T go = self.grad[0];
    for (auto& v : g) v += go;
  });
}

// ---------------------------------------------------------------- activations

enum class Activation { sigmoid, phi };

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(xv[i]);
  return make_result<T>("sigmoid", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto g = self.inputs[0]->grad_span();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = self.value[i];
      g[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

/// Swish: x * sigmoid(x). This is the network-wide nonlinearity phi.
template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * detail::sigmoid_scalar(xv[i]);
  return make_result<T>("swish", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    auto& X = *self.inputs[0];
    auto g = X.grad_span();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = detail::sigmoid_scalar(X.value[i]);
      g[i] += self.grad[i] * s * (T(1) + X.value[i] * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation mode) {
  return mode == Activation::sigmoid ? sigmoid(x) : swish(x);
}

// ---------------------------------------------------------------- matrices

/// a[r x k] * b[k x c].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  std::vector<T> out(r * c);
  detail::gemm(false, false, r, c, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result<T>("matmul", {r, c}, std::move(out), {a, b}, [r, k, c](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad)  // dA = dC * B^T
      detail::gemm(false, true, r, k, c, self.grad.data(), B.value.data(), A.grad_span().data(), true);
    if (B.requires_grad)  // dB = A^T * dC
      detail::gemm(true, false, k, c, r, A.value.data(), self.grad.data(), B.grad_span().data(), true);
  });
}

/// a[r x k] * b[c x k]^T.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                  "matmul_nt: shape mismatch " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()) + "^T");
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(0);
  std::vector<T> out(r * c);
  detail::gemm(false, true, r, c, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result<T>("matmul_nt", {r, c}, std::move(out), {a, b}, [r, k, c](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad)  // dA = dC * B
      detail::gemm(false, false, r, k, c, self.grad.data(), B.value.data(), A.grad_span().data(), true);
    if (B.requires_grad)  // dB = dC^T * A
      detail::gemm(true, false, c, k, r, self.grad.data(), A.value.data(), B.grad_span().data(), true);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  const auto av = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return make_result<T>("transpose", {c, r}, std::move(out), {a}, [r, c](Node<T>& self) {
    auto g = self.inputs[0]->grad_span();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel_of(shape) == a.numel(),
                  "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    auto g = self.inputs[0]->grad_span();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Columns [c0, c1) of a 2-D tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
  detail::require_rank(a, 2, "slice_cols");
  detail::require(c0 < c1 && c1 <= a.dim(1), "slice_cols: bad range on " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1), w = c1 - c0;
  std::vector<T> out(r * w);
  const auto av = a.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(i * c + c0), w, out.begin() + static_cast<std::ptrdiff_t>(i * w));
  return make_result<T>("slice_cols", {r, w}, std::move(out), {a}, [r, c, c0, w](Node<T>& self) {
    auto g = self.inputs[0]->grad_span();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + c0 + j] += self.grad[i * w + j];
  });
}

/// Rows [r0, r1) along the first dimension (any rank).
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
  detail::require(a.rank() >= 1 && r0 < r1 && r1 <= a.dim(0),
                  "slice_rows: bad range on " + shape_str(a.shape()));
  const std::size_t stride = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = r1 - r0;
  std::vector<T> out(a.data().begin() + static_cast<std::ptrdiff_t>(r0 * stride),
                     a.data().begin() + static_cast<std::ptrdiff_t>(r1 * stride));
  return make_result<T>("slice_rows", std::move(shape), std::move(out), {a},
                        [off = r0 * stride](Node<T>& self) {
                          auto g = self.inputs[0]->grad_span();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
                        });
}

/// Column-wise concatenation of 2-D tensors with equal row counts, in order.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rank() == 2 && p.dim(0) == r,
                    "concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                        shape_str(p.shape()));
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + off + j] = pv[i * widths[k] + j];
    off += widths[k];
  }
  return make_result<T>("concat_cols", {r, total}, std::move(out), parts,
                        [r, total, widths](Node<T>& self) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            auto& in = *self.inputs[k];
                            if (in.requires_grad) {
                              auto g = in.grad_span();
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < widths[k]; ++j)
                                  g[i * widths[k] + j] += self.grad[i * total + off + j];
                            }
                            off += widths[k];
                          }
                        });
}

/// Row gather: out[t] = table[indices[t]].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> indices) {
  detail::require_rank(table, 2, "embedding");
  detail::require(!indices.empty(), "embedding: empty index list");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<int> idx(indices.begin(), indices.end());
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= rows)
      throw DimensionError("embedding: index " + std::to_string(i) + " outside table " +
                           shape_str(table.shape()));
  }
  std::vector<T> out(idx.size() * d);
  const auto tv = table.data();
  for (std::size_t t = 0; t < idx.size(); ++t)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[t]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(t * d));
  return make_result<T>("embedding", {idx.size(), d}, std::move(out), {table},
                        [idx, d](Node<T>& self) {
                          auto g = self.inputs[0]->grad_span();
                          for (std::size_t t = 0; t < idx.size(); ++t)
                            for (std::size_t j = 0; j < d; ++j)
                              g[static_cast<std::size_t>(idx[t]) * d + j] += self.grad[t * d + j];
                        });
}

// ---------------------------------------------------------------- normalizers

/// Softmax over the last dimension with max subtraction.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * k;
    T* o = out.data() + r * k;
    const T mx = *std::max_element(in, in + k);
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) s += (o[j] = std::exp(in[j] - mx));
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < k; ++j) o[j] *= inv;
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [rows, k](Node<T>& self) {
    auto g = self.inputs[0]->grad_span();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * k;
      const T* gy = self.grad.data() + r * k;
      T dot = T(0);
      for (std::size_t j = 0; j < k; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < k; ++j) g[r * k + j] += y[j] * (gy[j] - dot);
    }
  });
}

/// Row softmax of a 2-D score matrix where row i may only see columns
/// j <= i + (cols - rows). Masked entries are exactly zero.
template <typename T>
Tensor<T> causal_softmax(const Tensor<T>& x) {
  detail::require_rank(x, 2, "causal_softmax");
  const std::size_t rows = x.dim(0), k = x.dim(1);
  detail::require(k >= rows, "causal_softmax: more rows than columns in " + shape_str(x.shape()));
  const std::size_t shift = k - rows;
  std::vector<T> out(x.numel(), T(0));
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t vis = r + shift + 1;
    const T* in = xv.data() + r * k;
    T* o = out.data() + r * k;
    const T mx = *std::max_element(in, in + vis);
    T s = T(0);
    for (std::size_t j = 0; j < vis; ++j) s += (o[j] = std::exp(in[j] - mx));
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < vis; ++j) o[j] *= inv;
  }
  return make_result<T>("causal_softmax", x.shape(), std::move(out), {x},
                        [rows, k, shift](Node<T>& self) {
                          auto g = self.inputs[0]->grad_span();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t vis = r + shift + 1;
                            const T* y = self.value.data() + r * k;
                            const T* gy = self.grad.data() + r * k;
                            T dot = T(0);
                            for (std::size_t j = 0; j < vis; ++j) dot += y[j] * gy[j];
                            for (std::size_t j = 0; j < vis; ++j) g[r * k + j] += y[j] * (gy[j] - dot);
                          }
                        });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes the last dimension to zero mean / unit variance, then applies
/// gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(kLayerNormEps)) {
  const std::size_t d = x.shape().back();
  detail::require(d >= 2, "layer_norm: last extent must be >= 2, got " + shape_str(x.shape()));
  detail::require(gain.numel() == d && bias.numel() == d,
                  "layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (in[j] - mean) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& G = *self.inputs[1];
        auto& B = *self.inputs[2];
        if (G.requires_grad) {
          auto gg = G.grad_span();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gg[i % d] += self.grad[i] * xhat[i];
        }
        if (B.requires_grad) {
          auto gb = B.grad_span();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % d] += self.grad[i];
        }
        if (X.requires_grad) {
          auto gx = X.grad_span();
          for (std::size_t r = 0; r < rows; ++r) {
            T s1 = T(0), s2 = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = self.grad[r * d + j] * G.value[j];
              s1 += dh;
              s2 += dh * xhat[r * d + j];
            }
            const T k = inv_std[r] / T(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = self.grad[r * d + j] * G.value[j];
              gx[r * d + j] += k * (T(d) * dh - s1 - xhat[r * d + j] * s2);
            }
          }
        }
      });
}

// ---------------------------------------------------------------- spatial

/// Output extent of a convolution along one axis, or 0 if it would be empty.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

/// Direct cross-correlation of x[c_in x h x w] with kernels[c_out x c_in x k x k]
/// plus per-output-channel bias. Lowered to one GEMM over an im2col buffer.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  detail::require_rank(x, 3, "conv2d input");
  detail::require_rank(kernels, 4, "conv2d kernels");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
  detail::require(kernels.dim(1) == cin && kernels.dim(3) == k,
                  "conv2d: kernels " + shape_str(kernels.shape()) + " do not fit input " +
                      shape_str(x.shape()));
  detail::require(bias.numel() == cout, "conv2d: bias " + shape_str(bias.shape()) +
                                            " does not match " + std::to_string(cout) + " outputs");
  if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t oh = conv_out_extent(h, k, stride, pad);
  const std::size_t ow = conv_out_extent(w, k, stride, pad);
  if (oh < 1 || ow < 1) {
    throw ConfigError("conv2d: input " + shape_str(x.shape()) + " with k=" + std::to_string(k) +
                      " stride=" + std::to_string(stride) + " pad=" + std::to_string(pad) +
                      " yields an empty output");
  }
  const std::size_t P = oh * ow;
  const std::size_t rows = cin * k * k;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  // im2col: cols[(ci*k + ky)*k + kx][oy*ow + ox]
  std::vector<T> cols;
  const auto xv = x.data();
  if (!pointwise) {
    cols.assign(rows * P, T(0));
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          T* dst = cols.data() + ((ci * k + ky) * k + kx) * P;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const T* src = xv.data() + (ci * h + static_cast<std::size_t>(iy)) * w;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[oy * ow + ox] = src[ix];
            }
          }
        }
  }
  const T* colp = pointwise ? xv.data() : cols.data();

  std::vector<T> out(cout * P);
  const auto bv = bias.data();
  for (std::size_t co = 0; co < cout; ++co) std::fill_n(out.data() + co * P, P, bv[co]);
  detail::gemm(false, false, cout, P, rows, kernels.data().data(), colp, out.data(), true);

  return make_result<T>(
      "conv2d", {cout, oh, ow}, std::move(out), {x, kernels, bias},
      [cin, h, w, cout, k, stride, pad, oh, ow, P, rows, pointwise,
       cols = std::move(cols)](Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& W = *self.inputs[1];
        auto& B = *self.inputs[2];
        const T* colp = pointwise ? X.value.data() : cols.data();
        if (W.requires_grad)
          detail::gemm(false, true, cout, rows, P, self.grad.data(), colp, W.grad_span().data(), true);
        if (B.requires_grad) {
          auto gb = B.grad_span();
          for (std::size_t co = 0; co < cout; ++co) {
            T s = T(0);
            for (std::size_t p = 0; p < P; ++p) s += self.grad[co * P + p];
            gb[co] += s;
          }
        }
        if (X.requires_grad) {
          auto gx = X.grad_span();
          if (pointwise) {
            detail::gemm(true, false, rows, P, cout, W.value.data(), self.grad.data(), gx.data(), true);
            return;
          }
          std::vector<T> dcols(rows * P);
          detail::gemm(true, false, rows, P, cout, W.value.data(), self.grad.data(), dcols.data(), false);
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T* src = dcols.data() + ((ci * k + ky) * k + kx) * P;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  T* dst = gx.data() + (ci * h + static_cast<std::size_t>(iy)) * w;
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                    if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[oy * ow + ox];
                  }
                }
              }
        }
      });
}

/// Per-channel spatial mean: x[c x h x w] -> [c].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank(x, 3, "global_avg_pool");
  const std::size_t c = x.dim(0), m = x.dim(1) * x.dim(2);
  std::vector<T> out(c);
  const auto xv = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T s = T(0);
    for (std::size_t i = 0; i < m; ++i) s += xv[ch * m + i];
    out[ch] = s / T(m);
  }
  return make_result<T>("global_avg_pool", {c}, std::move(out), {x}, [c, m](Node<T>& self) {
    auto g = self.inputs[0]->grad_span();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T v = self.grad[ch] / T(m);
      for (std::size_t i = 0; i < m; ++i) g[ch * m + i] += v;
    }
  });
}

/// Nearest-neighbour upsampling of x[c x h x w] by an integer factor.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  detail::require_rank(x, 3, "upsample_nearest");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t H = h * factor, W = w * factor;
  std::vector<T> out(c * H * W);
  const auto xv = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx)
        out[(ch * H + y) * W + xx] = xv[(ch * h + y / factor) * w + xx / factor];
  return make_result<T>("upsample_nearest", {c, H, W}, std::move(out), {x},
                        [c, h, w, H, W, factor](Node<T>& self) {
                          auto g = self.inputs[0]->grad_span();
                          for (std::size_t ch = 0; ch < c; ++ch)
                            for (std::size_t y = 0; y < H; ++y)
                              for (std::size_t xx = 0; xx < W; ++xx)
                                g[(ch * h + y / factor) * w + xx / factor] += self.grad[(ch * H + y) * W + xx];
                        });
}

// ---------------------------------------------------------------- losses

/// Sum over masked rows of -log softmax(logits[t])[targets[t]].
template <typename T>
Tensor<T> cross_entropy_sum(const Tensor<T>& logits, std::span<const int> targets,
                            const std::vector<bool>& mask) {
  detail::require_rank(logits, 2, "cross_entropy_sum");
  const std::size_t L = logits.dim(0), K = logits.dim(1);
  detail::require(targets.size() == L && mask.size() == L,
                  "cross_entropy_sum: " + std::to_string(targets.size()) + " targets for logits " +
                      shape_str(logits.shape()));
  std::vector<T> probs(L * K, T(0));
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<bool> msk = mask;
  T loss = T(0);
  const auto lv = logits.data();
  for (std::size_t t = 0; t < L; ++t) {
    if (!msk[t]) continue;
    if (tgt[t] < 0 || static_cast<std::size_t>(tgt[t]) >= K)
      throw DimensionError("cross_entropy_sum: target " + std::to_string(tgt[t]) + " outside " +
                           std::to_string(K) + " classes");
    const T* row = lv.data() + t * K;
    const T mx = *std::max_element(row, row + K);
    T s = T(0);
    for (std::size_t j = 0; j < K; ++j) s += (probs[t * K + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < K; ++j) probs[t * K + j] /= s;
    loss -= row[static_cast<std::size_t>(tgt[t])] - mx - std::log(s);
  }
  return make_result<T>("cross_entropy_sum", {1}, {loss}, {logits},
                        [L, K, probs = std::move(probs), tgt = std::move(tgt),
                         msk = std::move(msk)](Node<T>& self) {
                          auto g = self.inputs[0]->grad_span();
                          const T go = self.grad[0];
                          for (std::size_t t = 0; t < L; ++t) {
                            if (!msk[t]) continue;
                            for (std::size_t j = 0; j < K; ++j) g[t * K + j] += go * probs[t * K + j];
                            g[t * K + static_cast<std::size_t>(tgt[t])] -= go;
                          }
                        });
}

}  // namespace pren
