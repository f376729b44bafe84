#pragma once

// 2D-attention encoder-decoder.
//
// Encoder self-attention computes queries and keys from 3x3 neighbourhoods:
//   q_i = f(N(f_i)) W_Q,  k_j = g(N(f_j)) W_K,
//   alpha_ij = softmax_j(q_i k_j^T / sqrt(d)),  v_i = sum_j alpha_ij f_j W_V
// where f and g are 3x3 convolutions. The decoder is a causal Transformer
// decoder whose input embeddings may be gated with visual text
// representations: z = sigmoid([Y, E] W_z), E' = z*Y + (1-z)*E.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pren/ops.hpp"
#include "pren/params.hpp"

namespace pren {

// ---------------------------------------------------------------- positions

/// Sinusoid for position `pos` in channel j of a group of `width` channels.
inline double sinusoid(std::size_t pos, std::size_t j, std::size_t width) {
  const double expo = static_cast<double>(2 * (j / 2)) / static_cast<double>(width);
  const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
  return (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

/// [len x d] 1-D sinusoidal table.
template <typename T>
Tensor<T> positional_encoding_1d(std::size_t len, std::size_t d) {
  std::vector<T> v(len * d);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t j = 0; j < d; ++j) v[t * d + j] = static_cast<T>(sinusoid(t, j, d));
  return Tensor<T>({len, d}, std::move(v));
}

/// [h*w x d] table: the first d/2 channels encode the row, the rest the column.
template <typename T>
Tensor<T> positional_encoding_2d(std::size_t h, std::size_t w, std::size_t d) {
  const std::size_t half = d / 2;
  std::vector<T> v(h * w * d);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      T* row = v.data() + (y * w + x) * d;
      for (std::size_t j = 0; j < half; ++j) row[j] = static_cast<T>(sinusoid(y, j, half));
      for (std::size_t j = half; j < d; ++j) row[j] = static_cast<T>(sinusoid(x, j - half, d - half));
    }
  return Tensor<T>({h * w, d}, std::move(v));
}

// ---------------------------------------------------------------- encoder

template <typename T>
struct EncoderBlockParams {
  LayerNorm<T> ln_attn, ln_ffn;
  Conv<T> f_conv, g_conv;  // 3x3, d -> d
  Tensor<T> w_q, w_k, w_v; // [d x d]
  Linear<T> ffn1, ffn2;

  EncoderBlockParams() = default;
  EncoderBlockParams(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t d)
      : ln_attn(ps, name + ".ln_attn", d),
        ln_ffn(ps, name + ".ln_ffn", d),
        f_conv(ps, rng, name + ".f_conv", d, d, 3, 1, 1),
        g_conv(ps, rng, name + ".g_conv", d, d, 3, 1, 1) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    w_q = ps.add(name + ".W_Q", init::uniform<T>(rng, {d, d}, bound));
    w_k = ps.add(name + ".W_K", init::uniform<T>(rng, {d, d}, bound));
    w_v = ps.add(name + ".W_V", init::uniform<T>(rng, {d, d}, bound));
    ffn1 = Linear<T>(ps, rng, name + ".ffn1", d, 4 * d);
    ffn2 = Linear<T>(ps, rng, name + ".ffn2", 4 * d, d);
  }
};

template <typename T>
struct LocalAttentionOutput {
  Tensor<T> out;    // [m x d]
  Tensor<T> alpha;  // [m x m]
};

/// Single-head attention over the m = h*w elements of f [d x h x w] with
/// queries/keys taken from 3x3 convolutional neighbourhoods.
template <typename T>
LocalAttentionOutput<T> local_qk_attention(const Tensor<T>& f, const EncoderBlockParams<T>& p) {
  if (f.rank() != 3 || f.dim(0) != p.w_q.dim(0))
    throw DimensionError("local_qk_attention: feature map " + shape_str(f.shape()) +
                         " does not match d=" + std::to_string(p.w_q.dim(0)));
  const std::size_t d = f.dim(0);
  auto q = matmul(flatten_spatial(p.f_conv(f)), p.w_q);
  auto k = matmul(flatten_spatial(p.g_conv(f)), p.w_k);
  auto v = matmul(flatten_spatial(f), p.w_v);
  auto alpha = softmax_lastdim(scale(matmul_nt(q, k), T(1) / std::sqrt(T(d))));
  return {matmul(alpha, v), alpha};
}

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamStore<T>& ps, Rng& rng, std::size_t d, std::size_t blocks) : d_(d) {
    for (std::size_t i = 0; i < blocks; ++i)
      blocks_.emplace_back(ps, rng, "encoder.block" + std::to_string(i), d);
    ln_out_ = LayerNorm<T>(ps, "encoder.ln_out", d);
  }

  std::vector<EncoderBlockParams<T>>& blocks() { return blocks_; }
  const std::vector<EncoderBlockParams<T>>& blocks() const { return blocks_; }

  /// f [d x h x w] -> memory [h*w x d]. Pre-norm residual blocks.
  Tensor<T> encode(const Tensor<T>& f, std::vector<Tensor<T>>* alphas = nullptr) const {
    if (f.rank() != 3 || f.dim(0) != d_)
      throw DimensionError("encode: expected [" + std::to_string(d_) + " x h x w], got " +
                           shape_str(f.shape()));
    const std::size_t h = f.dim(1), w = f.dim(2);
    auto x = add(flatten_spatial(f), positional_encoding_2d<T>(h, w, d_));
    for (const auto& b : blocks_) {
      auto att = local_qk_attention(unflatten_spatial(b.ln_attn(x), h, w), b);
      if (alphas) alphas->push_back(att.alpha);
      x = add(x, att.out);
      x = add(x, b.ffn2(swish(b.ffn1(b.ln_ffn(x)))));
    }
    return ln_out_(x);
  }

 private:
  std::size_t d_ = 0;
  std::vector<EncoderBlockParams<T>> blocks_;
  LayerNorm<T> ln_out_;
};

// ---------------------------------------------------------------- decoder

template <typename T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  std::size_t heads = 1;

  /// Keys/values projected once and split per head.
  struct KeyValues {
    std::vector<Tensor<T>> k, v;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t d,
                     std::size_t heads_)
      : wq(ps, rng, name + ".q", d, d),
        wk(ps, rng, name + ".k", d, d),
        wv(ps, rng, name + ".v", d, d),
        wo(ps, rng, name + ".o", d, d),
        heads(heads_) {
    if (heads == 0 || d % heads != 0)
      throw ConfigError("attention: d=" + std::to_string(d) + " not divisible by heads=" +
                        std::to_string(heads));
  }

  KeyValues project(const Tensor<T>& src) const {
    auto k = wk(src);
    auto v = wv(src);
    const std::size_t dh = k.dim(1) / heads;
    KeyValues kv;
    for (std::size_t h = 0; h < heads; ++h) {
      kv.k.push_back(heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh));
      kv.v.push_back(heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh));
    }
    return kv;
  }

  /// Returns [t x d]; per-head attention rows are appended to `probs`.
  Tensor<T> operator()(const Tensor<T>& query_in, const KeyValues& kv, bool causal,
                       std::vector<Tensor<T>>* probs = nullptr) const {
    auto q = wq(query_in);
    const std::size_t dh = q.dim(1) / heads;
    const T sc = T(1) / std::sqrt(T(dh));
    std::vector<Tensor<T>> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
      auto s = scale(matmul_nt(qh, kv.k[h]), sc);
      auto a = causal ? causal_softmax(s) : softmax_lastdim(s);
      if (probs) probs->push_back(a);
      outs.push_back(matmul(a, kv.v[h]));
    }
    return wo(heads == 1 ? outs[0] : concat_cols(outs));
  }
};

template <typename T>
struct GateParams {
  Tensor<T> w_z;  // [2d x d]

  GateParams() = default;
  GateParams(ParamStore<T>& ps, Rng& rng, std::size_t d)
      : w_z(ps.add("gate.W_z", init::uniform<T>(rng, {2 * d, d}, 1.0 / std::sqrt(2.0 * static_cast<double>(d))))) {}
};

/// z*y + (1-z)*e, elementwise.
template <typename T>
Tensor<T> gate_mix(const Tensor<T>& z, const Tensor<T>& y, const Tensor<T>& e) {
  detail::require_same_shape(z, y, "gate_mix");
  detail::require_same_shape(y, e, "gate_mix");
  std::vector<T> out(z.numel());
  const auto zv = z.data(), yv = y.data(), ev = e.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = zv[i] * yv[i] + (T(1) - zv[i]) * ev[i];
  return make_result<T>("gate_mix", z.shape(), std::move(out), {z, y, e}, [](Node<T>& self) {
    auto& Z = *self.inputs[0];
    auto& Y = *self.inputs[1];
    auto& E = *self.inputs[2];
    if (Z.requires_grad) {
      auto g = Z.grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (Y.value[i] - E.value[i]);
    }
    if (Y.requires_grad) {
      auto g = Y.grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * Z.value[i];
    }
    if (E.requires_grad) {
      auto g = E.grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (T(1) - Z.value[i]);
    }
  });
}

/// Gated fusion of rows y [t x d] and embeddings e [t x d]; row t of the
/// output combines only row t of each input.
template <typename T>
Tensor<T> gate_fuse(const Tensor<T>& y, const Tensor<T>& e, const GateParams<T>& g,
                    Tensor<T>* z_out = nullptr) {
  detail::require_same_shape(y, e, "gate_fuse");
  auto z = sigmoid(matmul(concat_cols<T>({y, e}), g.w_z));
  if (z_out) *z_out = z;
  return gate_mix(z, y, e);
}

template <typename T>
struct DecoderBlockParams {
  LayerNorm<T> ln_self, ln_cross, ln_ffn;
  MultiHeadAttention<T> self_attn, cross_attn;
  Linear<T> ffn1, ffn2;

  DecoderBlockParams() = default;
  DecoderBlockParams(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t d,
                     std::size_t heads)
      : ln_self(ps, name + ".ln_self", d),
        ln_cross(ps, name + ".ln_cross", d),
        ln_ffn(ps, name + ".ln_ffn", d),
        self_attn(ps, rng, name + ".self_attn", d, heads),
        cross_attn(ps, rng, name + ".cross_attn", d, heads),
        ffn1(ps, rng, name + ".ffn1", d, 4 * d),
        ffn2(ps, rng, name + ".ffn2", 4 * d, d) {}
};

/// Attention rows collected during one decoder pass.
template <typename T>
struct DecoderTrace {
  std::vector<Tensor<T>> self_attention;   // per block and head, [t x t]
  std::vector<Tensor<T>> cross_attention;  // per block and head, [t x m]
  Tensor<T> gate;                          // [t x d] when gated
  Tensor<T> fused_inputs;                  // E' (or E when ungated)
};

template <typename T>
class Decoder {
 public:
  struct Memory {
    std::vector<typename MultiHeadAttention<T>::KeyValues> blocks;
    std::size_t length = 0;
  };

  Decoder() = default;
  Decoder(ParamStore<T>& ps, Rng& rng, std::size_t d, std::size_t blocks, std::size_t heads,
          std::size_t input_symbols, std::size_t classes, std::size_t max_len)
      : d_(d), max_len_(max_len) {
    embed_ = ps.add("decoder.embed", init::normal<T>(rng, {input_symbols, d}, 1.0));
    for (std::size_t i = 0; i < blocks; ++i)
      blocks_.emplace_back(ps, rng, "decoder.block" + std::to_string(i), d, heads);
    ln_out_ = LayerNorm<T>(ps, "decoder.ln_out", d);
    out_ = Linear<T>(ps, rng, "decoder.out", d, classes);
    pe_ = positional_encoding_1d<T>(max_len, d);
  }

  std::size_t max_len() const { return max_len_; }

  Memory prepare(const Tensor<T>& memory) const {
    Memory m;
    m.length = memory.dim(0);
    for (const auto& b : blocks_) m.blocks.push_back(b.cross_attn.project(memory));
    return m;
  }

  /// Character embeddings plus position: [t x d].
  Tensor<T> embed(std::span<const int> tokens) const {
    return add(embedding(embed_, tokens), slice_rows(pe_, 0, tokens.size()));
  }

  /// tokens: decoder inputs (starting with <sos>); y: VTR rows aligned with
  /// the tokens, or nullptr to skip gating. Returns logits [t x K].
  Tensor<T> forward(std::span<const int> tokens, const Tensor<T>* y, const GateParams<T>* gate,
                    const Memory& mem, DecoderTrace<T>* trace = nullptr) const {
    if (tokens.empty() || tokens.size() > max_len_)
      throw UsageError("decoder: input length " + std::to_string(tokens.size()) + " outside 1.." +
                       std::to_string(max_len_));
    auto x = embed(tokens);
    if (y != nullptr && gate != nullptr) {
      Tensor<T> z;
      x = gate_fuse(*y, x, *gate, trace ? &z : nullptr);
      if (trace) trace->gate = z;
    }
    if (trace) trace->fused_inputs = x;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& b = blocks_[i];
      auto h = b.ln_self(x);
      x = add(x, b.self_attn(h, b.self_attn.project(h), true, trace ? &trace->self_attention : nullptr));
      x = add(x, b.cross_attn(b.ln_cross(x), mem.blocks[i], false,
                              trace ? &trace->cross_attention : nullptr));
      x = add(x, b.ffn2(swish(b.ffn1(b.ln_ffn(x)))));
    }
    return out_(ln_out_(x));
  }

 private:
  std::size_t d_ = 0, max_len_ = 0;
  Tensor<T> embed_;
  std::vector<DecoderBlockParams<T>> blocks_;
  LayerNorm<T> ln_out_;
  Linear<T> out_;
  Tensor<T> pe_;
};

}  // namespace pren
