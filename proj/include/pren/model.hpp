#pragma once

// Model assembly: PREN (parallel decoding from visual text representations)
// and the 2D-attention encoder-decoder, with or without VTR gating.

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pren/aggregators.hpp"
#include "pren/attention2d.hpp"
#include "pren/backbone.hpp"
#include "pren/params.hpp"
#include "pren/targets.hpp"
#include "pren/textrep.hpp"
#include "pren/vocab.hpp"

namespace pren {

enum class ModelKind { pren, pren2d, baseline2d };
enum class AggregatorMode { both, pooling, weighted };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::pren: return "pren";
    case ModelKind::pren2d: return "pren2d";
    case ModelKind::baseline2d: return "baseline2d";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "pren") return ModelKind::pren;
  if (s == "pren2d") return ModelKind::pren2d;
  if (s == "baseline2d") return ModelKind::baseline2d;
  throw ConfigError("unknown model kind '" + s + "' (expected pren, pren2d or baseline2d)");
}

inline std::string to_string(AggregatorMode m) {
  switch (m) {
    case AggregatorMode::both: return "both";
    case AggregatorMode::pooling: return "pooling";
    case AggregatorMode::weighted: return "weighted";
  }
  return "?";
}

inline AggregatorMode parse_aggregator_mode(const std::string& s) {
  if (s == "both") return AggregatorMode::both;
  if (s == "pooling") return AggregatorMode::pooling;
  if (s == "weighted") return AggregatorMode::weighted;
  throw ConfigError("unknown aggregator mode '" + s + "' (expected both, pooling or weighted)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::pren;
  std::size_t n = 5;    // primitive representations
  std::size_t d = 48;   // f7 channels / model width
  std::size_t L = 25;   // maximum decoding length
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t alphabet_size = 10;
  AggregatorMode aggregators = AggregatorMode::both;
  std::string backbone = "standard";  // "deep" or "tiny"
  bool coords = false;                // coordinate planes at the backbone input
  std::uint64_t seed = 1;

  BackboneConfig backbone_config() const {
    BackboneConfig c;
    if (backbone == "standard")
      c = BackboneConfig::standard(d);
    else if (backbone == "tiny")
      c = BackboneConfig::tiny(d);
    else if (backbone == "deep")
      c = BackboneConfig::deep(d);
    else
      throw ConfigError("unknown backbone '" + backbone + "' (expected standard, deep or tiny)");
    c.coords = coords;
    return c;
  }

  void validate() const {
    if (n < 1) throw ConfigError("n must be >= 1");
    if (L < 2) throw ConfigError("L must be >= 2");
    if (d == 0 || d % 3 != 0) throw ConfigError("d must be a positive multiple of 3, got " + std::to_string(d));
    if (kind != ModelKind::pren && (heads == 0 || d % heads != 0))
      throw ConfigError("heads must divide d");
    if (kind != ModelKind::pren && blocks == 0) throw ConfigError("blocks must be >= 1");
    if (alphabet_size == 0 || alphabet_size > 26) throw ConfigError("alphabet_size must be 1..26");
    backbone_config().validate();
  }
};

/// Intermediate maps kept for visualization and inspection.
template <typename T>
struct VtrTrace {
  std::array<Tensor<T>, 3> heatmaps;  // weighted aggregator H per level
  std::array<Tensor<T>, 3> pre_pool;  // pooling aggregator conv2 output per level
  Tensor<T> p1, p2, y1, y2, y;
};

/// Aggregators on f3/f5/f7 plus the two GCNs; produces Y [L x d].
template <typename T>
class PrimitiveModule {
 public:
  PrimitiveModule() = default;
  PrimitiveModule(ParamStore<T>& ps, std::uint64_t seed, const ModelConfig& cfg) : mode_(cfg.aggregators) {
    const auto ch = cfg.backbone_config().tap_channels();
    const std::array<const char*, 3> level{"f3", "f5", "f7"};
    const std::size_t width = cfg.d / 3;
    Rng rng(derive_seed(seed, 11));
    if (mode_ != AggregatorMode::weighted) {
      for (std::size_t s = 0; s < 3; ++s)
        pool_[s] = PoolingAggregator<T>(ps, rng, std::string("agg.pool.") + level[s], ch[s], cfg.n, width);
      gcn1_ = GcnParams<T>(ps, rng, "gcn1", cfg.L, cfg.n, cfg.d);
    }
    if (mode_ != AggregatorMode::pooling) {
      for (std::size_t s = 0; s < 3; ++s)
        weighted_[s] = WeightedAggregator<T>(ps, rng, std::string("agg.weighted.") + level[s], ch[s], cfg.n, width);
      gcn2_ = GcnParams<T>(ps, rng, "gcn2", cfg.L, cfg.n, cfg.d);
    }
  }

  Tensor<T> operator()(const FeaturePyramid<T>& pyr, VtrTrace<T>* trace = nullptr) const {
    const std::array<Tensor<T>, 3> levels{pyr.f3, pyr.f5, pyr.f7};
    Tensor<T> y1, y2;
    if (mode_ != AggregatorMode::weighted) {
      std::vector<Tensor<T>> parts;
      for (std::size_t s = 0; s < 3; ++s) parts.push_back(pool_[s](levels[s], trace ? &trace->pre_pool[s] : nullptr));
      auto p1 = assemble_primitives(parts);
      y1 = gcn_project(p1, gcn1_);
      if (trace) trace->p1 = p1, trace->y1 = y1;
    }
    if (mode_ != AggregatorMode::pooling) {
      std::vector<Tensor<T>> parts;
      for (std::size_t s = 0; s < 3; ++s) {
        auto out = weighted_[s](levels[s]);
        if (trace) trace->heatmaps[s] = out.heatmaps;
        parts.push_back(out.p);
      }
      auto p2 = assemble_primitives(parts);
      y2 = gcn_project(p2, gcn2_);
      if (trace) trace->p2 = p2, trace->y2 = y2;
    }
    auto y = !y1.defined() ? y2 : !y2.defined() ? y1 : fuse_vtr(y1, y2);
    if (trace) trace->y = y;
    return y;
  }

 private:
  AggregatorMode mode_ = AggregatorMode::both;
  std::array<PoolingAggregator<T>, 3> pool_;
  std::array<WeightedAggregator<T>, 3> weighted_;
  GcnParams<T> gcn1_, gcn2_;
};

/// Result of recursive decoding.
template <typename T>
struct DecodeResult {
  std::vector<int> ids;                     // predicted classes, excluding <eos>
  std::vector<std::vector<T>> step_logits;  // one row per executed step
  std::vector<std::vector<T>> attention;    // final-block cross-attention per step, head-averaged [m]
  std::size_t map_h = 0, map_w = 0;         // attention map geometry
};

template <typename T>
class Recognizer {
 public:
  explicit Recognizer(ModelConfig cfg) : cfg_(std::move(cfg)), vocab_(Vocabulary::toy(cfg_.alphabet_size)) {
    cfg_.validate();
  }
  virtual ~Recognizer() = default;
  Recognizer(const Recognizer&) = delete;
  Recognizer& operator=(const Recognizer&) = delete;

  /// Training-path logits [L x K]. PREN ignores the target; the 2D models
  /// use it for teacher forcing.
  virtual Tensor<T> logits(const Tensor<T>& image, const TargetSeq& target) const = 0;

  /// Predicted class ids up to (excluding) the first <eos>.
  virtual std::vector<int> predict_ids(const Tensor<T>& image) const = 0;

  std::string recognize(const Tensor<T>& image) const { return vocab_.decode(predict_ids(image)); }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

 protected:
  ModelConfig cfg_;
  Vocabulary vocab_;
  ParamStore<T> params_;
};

template <typename T>
class Pren final : public Recognizer<T> {
 public:
  explicit Pren(ModelConfig cfg) : Recognizer<T>(std::move(cfg)) {
    auto& c = this->cfg_;
    auto& ps = this->params_;
    Rng rb(derive_seed(c.seed, 1));
    backbone_ = Backbone<T>(ps, rb, c.backbone_config());
    primitives_ = PrimitiveModule<T>(ps, c.seed, c);
    Rng rh(derive_seed(c.seed, 2));
    head_ = ParallelHead<T>(ps, rh, c.d, this->vocab_.num_classes());
  }

  const Backbone<T>& backbone() const { return backbone_; }
  const ParallelHead<T>& head() const { return head_; }

  Tensor<T> visual_text(const Tensor<T>& image, VtrTrace<T>* trace = nullptr) const {
    return primitives_(backbone_.extract_pyramid(image), trace);
  }

  Tensor<T> logits(const Tensor<T>& image, const TargetSeq& = {}) const override {
    return head_.logits(visual_text(image));
  }

  std::vector<int> predict_ids(const Tensor<T>& image) const override {
    NoGradGuard ng;
    auto ids = argmax_rows(logits(image));
    auto it = std::find(ids.begin(), ids.end(), this->vocab_.eos());
    ids.erase(it, ids.end());
    return ids;
  }

 private:
  Backbone<T> backbone_;
  PrimitiveModule<T> primitives_;
  ParallelHead<T> head_;
};

/// PREN2D when gated, Baseline2D otherwise. The baseline never builds the
/// aggregators, GCNs or gate.
template <typename T>
class Pren2d final : public Recognizer<T> {
 public:
  explicit Pren2d(ModelConfig cfg) : Recognizer<T>(std::move(cfg)) {
    auto& c = this->cfg_;
    auto& ps = this->params_;
    gated_ = c.kind == ModelKind::pren2d;
    Rng rb(derive_seed(c.seed, 1));
    backbone_ = Backbone<T>(ps, rb, c.backbone_config());
    if (gated_) primitives_ = PrimitiveModule<T>(ps, c.seed, c);
    Rng rf(derive_seed(c.seed, 3));
    fusion_ = PyramidFusion<T>(ps, rf, backbone_.config());
    Rng re(derive_seed(c.seed, 4));
    encoder_ = Encoder<T>(ps, re, c.d, c.blocks);
    Rng rd(derive_seed(c.seed, 5));
    decoder_ = Decoder<T>(ps, rd, c.d, c.blocks, c.heads, this->vocab_.num_inputs(),
                          this->vocab_.num_classes(), c.L);
    if (gated_) {
      Rng rg(derive_seed(c.seed, 6));
      gate_ = GateParams<T>(ps, rg, c.d);
    }
  }

  bool gated() const { return gated_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }
  const GateParams<T>& gate() const { return gate_; }

  struct Encoded {
    Tensor<T> y;  // undefined for the baseline
    typename Decoder<T>::Memory memory;
    std::size_t h = 0, w = 0;
  };

  Encoded encode(const Tensor<T>& image, VtrTrace<T>* trace = nullptr) const {
    auto pyr = backbone_.extract_pyramid(image);
    Encoded e;
    if (gated_) e.y = primitives_(pyr, trace);
    auto f = fusion_(pyr);
    e.h = f.dim(1);
    e.w = f.dim(2);
    e.memory = decoder_.prepare(encoder_.encode(f));
    return e;
  }

  Tensor<T> decode_teacher_forced(const TargetSeq& target, const Encoded& enc,
                                  DecoderTrace<T>* trace = nullptr) const {
    if (target.decoder_input.size() > this->cfg_.L)
      throw UsageError("decode_teacher_forced: target length exceeds L");
    const Tensor<T>* y = gated_ ? &enc.y : nullptr;
    Tensor<T> rows;
    if (y && target.decoder_input.size() < enc.y.dim(0)) {
      rows = slice_rows(enc.y, 0, target.decoder_input.size());
      y = &rows;
    }
    return decoder_.forward(target.decoder_input, y, gated_ ? &gate_ : nullptr, enc.memory, trace);
  }

  Tensor<T> logits(const Tensor<T>& image, const TargetSeq& target) const override {
    return decode_teacher_forced(target, encode(image));
  }

  DecodeResult<T> decode_recursive(const Encoded& enc, bool keep_attention = false) const {
    NoGradGuard ng;
    DecodeResult<T> r;
    r.map_h = enc.h;
    r.map_w = enc.w;
    const std::size_t L = this->cfg_.L;
    const std::size_t K = this->vocab_.num_classes();
    std::vector<int> tokens{this->vocab_.sos()};
    for (std::size_t t = 0; t < L; ++t) {
      Tensor<T> rows;
      if (gated_) rows = slice_rows(enc.y, 0, tokens.size());
      DecoderTrace<T> tr;
      auto lg = decoder_.forward(tokens, gated_ ? &rows : nullptr, gated_ ? &gate_ : nullptr, enc.memory,
                                 keep_attention ? &tr : nullptr);
      auto last = lg.data().subspan(t * K, K);
      r.step_logits.emplace_back(last.begin(), last.end());
      if (keep_attention) {
        const std::size_t heads = this->cfg_.heads;
        const std::size_t m = enc.memory.length;
        std::vector<T> avg(m, T(0));
        const std::size_t first = tr.cross_attention.size() - heads;
        for (std::size_t h = 0; h < heads; ++h) {
          auto a = tr.cross_attention[first + h].data().subspan(t * m, m);
          for (std::size_t j = 0; j < m; ++j) avg[j] += a[j] / T(heads);
        }
        r.attention.push_back(std::move(avg));
      }
      const int next = argmax_row<T>(last);
      if (next == this->vocab_.eos()) break;
      r.ids.push_back(next);
      tokens.push_back(next);
    }
    return r;
  }

  std::vector<int> predict_ids(const Tensor<T>& image) const override {
    NoGradGuard ng;
    return decode_recursive(encode(image)).ids;
  }

 private:
  bool gated_ = false;
  Backbone<T> backbone_;
  PrimitiveModule<T> primitives_;
  PyramidFusion<T> fusion_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
  GateParams<T> gate_;
};

template <typename T>
std::unique_ptr<Recognizer<T>> make_model(const ModelConfig& cfg) {
  if (cfg.kind == ModelKind::pren) return std::make_unique<Pren<T>>(cfg);
  return std::make_unique<Pren2d<T>>(cfg);
}

}  // namespace pren
