#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pren/errors.hpp"
#include "pren/ops.hpp"
#include "pren/random.hpp"
#include "pren/tensor.hpp"

namespace pren {

/// Ordered, named collection of trainable tensors. Insertion order is the
/// canonical order used by the optimizer and the checkpoint table.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
    return items_[it->second].second;
  }
  const Tensor<T>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

// Values are drawn in double and then narrowed, so float and double models
// built from one seed agree up to rounding.

template <typename T>
Tensor<T> normal(Rng& rng, Shape shape, double stddev) {
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> uniform(Rng& rng, Shape shape, double bound) {
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v));
}

/// Kaiming fan-in scaling for convolution kernels.
template <typename T>
Tensor<T> kaiming(Rng& rng, std::size_t cout, std::size_t cin, std::size_t k) {
  return normal<T>(rng, {cout, cin, k, k}, std::sqrt(2.0 / static_cast<double>(cin * k * k)));
}

}  // namespace init

template <typename T>
struct Conv {
  Tensor<T> w, b;
  std::size_t stride = 1, pad = 0;

  Conv() = default;
  Conv(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t cin, std::size_t cout,
       std::size_t k, std::size_t stride_, std::size_t pad_)
      : w(ps.add(name + ".w", init::kaiming<T>(rng, cout, cin, k))),
        b(ps.add(name + ".b", Tensor<T>::zeros({cout}))),
        stride(stride_),
        pad(pad_) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }
  std::size_t out_channels() const { return w.dim(0); }
};

/// y = x W + b with W stored [in x out].
template <typename T>
struct Linear {
  Tensor<T> w, b;

  Linear() = default;
  Linear(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
         bool with_bias = true)
      : w(ps.add(name + ".w", init::uniform<T>(rng, {in, out}, 1.0 / std::sqrt(static_cast<double>(in))))) {
    if (with_bias) b = ps.add(name + ".b", Tensor<T>::zeros({out}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, w);
    return b.defined() ? add_rowvec(y, b) : y;
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, std::size_t d)
      : gain(ps.add(name + ".g", Tensor<T>::full({d}, T(1)))),
        bias(ps.add(name + ".b", Tensor<T>::zeros({d}))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

/// [c x h x w] -> [h*w x c]: one row per spatial element.
template <typename T>
Tensor<T> flatten_spatial(const Tensor<T>& f) {
  return transpose(reshape(f, {f.dim(0), f.dim(1) * f.dim(2)}));
}

/// [h*w x c] -> [c x h x w].
template <typename T>
Tensor<T> unflatten_spatial(const Tensor<T>& x, std::size_t h, std::size_t w) {
  return reshape(transpose(x), {x.dim(1), h, w});
}

}  // namespace pren
