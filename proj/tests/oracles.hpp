#pragma once

// Independent reference implementations of the aggregators, local attention
// and the graph projection, written as explicit loops.

#include <algorithm>
#include <cmath>

#include "test_util.hpp"

namespace testutil {

inline std::vector<double> vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

inline std::vector<double> conv_of(const Tensor<double>& f, const pren::Conv<double>& c, std::size_t& oh,
                                   std::size_t& ow) {
  return naive_conv(vec(f), f.dim(0), f.dim(1), f.dim(2), vec(c.w), vec(c.b), c.w.dim(0), c.w.dim(2), c.stride,
                    c.pad, oh, ow);
}

/// p_i = sum_j a_ij x_j over m spatial elements; x [width x m], a [n x m].
inline std::vector<double> aggregate(const std::vector<double>& x, const std::vector<double>& a, std::size_t n,
                                     std::size_t width, std::size_t m) {
  std::vector<double> p(n * width, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < width; ++c)
      for (std::size_t j = 0; j < m; ++j) p[i * width + c] += a[i * m + j] * x[c * m + j];
  return p;
}

inline std::vector<double> weighted_oracle(const Tensor<double>& f, const pren::WeightedAggregator<double>& agg) {
  std::size_t oh, ow;
  auto z = conv_of(f, agg.conv3, oh, ow);
  for (auto& v : z) v = naive_swish(v);
  auto h = conv_of(f, agg.conv4, oh, ow);
  for (auto& v : h) v = naive_sigmoid(v);
  return aggregate(z, h, agg.n, agg.width, oh * ow);
}

/// Uniform-weight aggregation of each channel group of conv2's output.
inline std::vector<double> pooling_oracle(const Tensor<double>& f, const pren::PoolingAggregator<double>& agg) {
  std::size_t h1, w1, h2, w2;
  auto a = conv_of(f, agg.conv1, h1, w1);
  for (auto& v : a) v = naive_swish(v);
  Tensor<double> mid({agg.width, h1, w1}, a);
  auto z = conv_of(mid, agg.conv2, h2, w2);
  const std::size_t m = h2 * w2;
  std::vector<double> p(agg.n * agg.width);
  for (std::size_t i = 0; i < agg.n; ++i) {
    std::vector<double> x(z.begin() + static_cast<long>(i * agg.width * m),
                          z.begin() + static_cast<long>((i + 1) * agg.width * m));
    auto row = aggregate(x, std::vector<double>(m, 1.0 / static_cast<double>(m)), 1, agg.width, m);
    std::copy(row.begin(), row.end(), p.begin() + static_cast<long>(i * agg.width));
  }
  return p;
}

/// Explicit m x m attention: conv neighbourhoods, projections, softmax, mix.
inline std::vector<double> naive_local_attention(const Tensor<double>& f,
                                                 const pren::EncoderBlockParams<double>& p) {
  const std::size_t d = f.dim(0), h = f.dim(1), w = f.dim(2), m = h * w;
  std::size_t oh, ow;
  auto fq = naive_conv(vec(f), d, h, w, vec(p.f_conv.w), vec(p.f_conv.b), d, 3, 1, 1, oh, ow);
  auto gk = naive_conv(vec(f), d, h, w, vec(p.g_conv.w), vec(p.g_conv.b), d, 3, 1, 1, oh, ow);
  auto proj = [&](const std::vector<double>& src, const Tensor<double>& W) {
    std::vector<double> out(m * d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t o = 0; o < d; ++o)
        for (std::size_t c = 0; c < d; ++c) out[i * d + o] += src[c * m + i] * W.data()[c * d + o];
    return out;
  };
  auto q = proj(fq, p.w_q), k = proj(gk, p.w_k), v = proj(vec(f), p.w_v);
  std::vector<double> out(m * d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> s(m);
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
      s[j] = dot / std::sqrt(static_cast<double>(d));
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += s[j] / z * v[j * d + c];
  }
  return out;
}

/// swish(B P W) by triple loops.
inline std::vector<double> gcn_oracle(const Tensor<double>& p, const pren::GcnParams<double>& g) {
  const Mat bp = naive_matmul(to_mat(g.b), to_mat(p));
  Mat y = naive_matmul(bp, to_mat(g.w));
  for (auto& v : y.v) v = naive_swish(v);
  return y.v;
}

}  // namespace testutil
