#pragma once

#include <array>
#include <string>
#include <vector>

#include "pren/ops.hpp"
#include "pren/params.hpp"

namespace pren {

struct StageSpec {
  std::size_t channels;
  std::size_t stride;
};

/// Layer plan for the multiscale CNN. `taps` name the residual blocks whose
/// outputs become f3, f5 and f7.
struct BackboneConfig {
  std::size_t in_channels = 1;
  /// Append normalized x and y coordinate planes to the image before the stem.
  bool coords = false;
  StageSpec stem{16, 2};
  std::vector<StageSpec> blocks;
  std::array<std::size_t, 3> taps{};

  /// Stem + five residual blocks, taps at 1/8, 1/16, 1/32.
  /// For d = 48 the channel plan is 16 | 24, 32, 40, 48, 48.
  static BackboneConfig standard(std::size_t d) {
    BackboneConfig c;
    c.stem = {d / 3, 2};
    c.blocks = {{d / 2, 2}, {2 * d / 3, 2}, {5 * d / 6, 2}, {d, 2}, {d, 1}};
    c.taps = {1, 2, 4};
    return c;
  }

  /// Same taps and strides as `standard`, with a stride-1 block after every
  /// downsampling block.
  static BackboneConfig deep(std::size_t d) {
    BackboneConfig c;
    c.stem = {d / 3, 2};
    c.blocks = {{d / 2, 2},     {d / 2, 1}, {2 * d / 3, 2}, {2 * d / 3, 1}, {5 * d / 6, 2},
                {5 * d / 6, 1}, {d, 2},     {d, 1},         {d, 1}};
    c.taps = {3, 5, 8};
    return c;
  }

  /// Gradient-check sized plan: taps at 1/2, 1/4, 1/8 so 8x16 inputs work.
  static BackboneConfig tiny(std::size_t d) {
    BackboneConfig c;
    c.stem = {d / 2, 1};
    c.blocks = {{2 * d / 3, 2}, {5 * d / 6, 2}, {d, 2}};
    c.taps = {0, 1, 2};
    return c;
  }

  std::size_t stride_at(std::size_t block) const {
    std::size_t s = stem.stride;
    for (std::size_t i = 0; i <= block; ++i) s *= blocks[i].stride;
    return s;
  }

  /// Input extents must be multiples of this (the f7 stride).
  std::size_t input_multiple() const { return stride_at(taps[2]); }

  std::array<std::size_t, 3> tap_channels() const {
    return {blocks[taps[0]].channels, blocks[taps[1]].channels, blocks[taps[2]].channels};
  }

  void validate() const {
    if (blocks.empty() || taps[0] >= taps[1] || taps[1] >= taps[2] || taps[2] >= blocks.size())
      throw ConfigError("backbone: taps must be strictly increasing block indices");
    const auto ch = tap_channels();
    if (!(ch[0] <= ch[1] && ch[1] <= ch[2]))
      throw ConfigError("backbone: tap channels must be non-decreasing");
    if (ch[2] % 3 != 0)
      throw ConfigError("backbone: f7 channels must be divisible by 3, got " + std::to_string(ch[2]));
  }
};

template <typename T>
struct FeaturePyramid {
  Tensor<T> f3, f5, f7;
};

/// conv3x3(stride) -> phi -> conv3x3 -> + shortcut -> phi
template <typename T>
struct ResidualBlock {
  Conv<T> conv_a, conv_b, shortcut;

  ResidualBlock() = default;
  ResidualBlock(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t cin,
                std::size_t cout, std::size_t stride)
      : conv_a(ps, rng, name + ".conv_a", cin, cout, 3, stride, 1),
        conv_b(ps, rng, name + ".conv_b", cout, cout, 3, 1, 1) {
    if (cin != cout || stride != 1) shortcut = Conv<T>(ps, rng, name + ".shortcut", cin, cout, 1, stride, 0);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = conv_b(swish(conv_a(x)));
    auto skip = shortcut.w.defined() ? shortcut(x) : x;
    return swish(add(y, skip));
  }
};

/// [c x H x W] -> [c+2 x H x W]; the extra planes run linearly from -1 to 1
/// along x and along y. The image is treated as a constant.
template <typename T>
Tensor<T> append_coords(const Tensor<T>& image) {
  if (image.rank() != 3) throw DimensionError("append_coords: expected [c x H x W], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2), hw = h * w;
  std::vector<T> v(image.data().begin(), image.data().end());
  v.resize((c + 2) * hw);
  const auto coord = [](std::size_t i, std::size_t n) {
    return n > 1 ? T(-1) + T(2) * static_cast<T>(i) / static_cast<T>(n - 1) : T(0);
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      v[c * hw + y * w + x] = coord(x, w);
      v[(c + 1) * hw + y * w + x] = coord(y, h);
    }
  return Tensor<T>({c + 2, h, w}, std::move(v));
}

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(ParamStore<T>& ps, Rng& rng, BackboneConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t stem_in = cfg_.in_channels + (cfg_.coords ? 2 : 0);
    stem_ = Conv<T>(ps, rng, "backbone.stem", stem_in, cfg_.stem.channels, 3, cfg_.stem.stride, 1);
    std::size_t cin = cfg_.stem.channels;
    for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
      const auto& b = cfg_.blocks[i];
      blocks_.emplace_back(ps, rng, "backbone.block" + std::to_string(i), cin, b.channels, b.stride);
      cin = b.channels;
    }
  }

  const BackboneConfig& config() const { return cfg_; }

  /// image: [1 x H x W] with H, W multiples of input_multiple().
  FeaturePyramid<T> extract_pyramid(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != cfg_.in_channels)
      throw DimensionError("extract_pyramid: expected [" + std::to_string(cfg_.in_channels) +
                           " x H x W] image, got " + shape_str(image.shape()));
    const std::size_t m = cfg_.input_multiple();
    if (image.dim(1) % m != 0 || image.dim(2) % m != 0)
      throw ConfigError("extract_pyramid: image extents " + shape_str(image.shape()) +
                        " must be multiples of " + std::to_string(m) + "; normalize the image first");
    FeaturePyramid<T> p;
    auto x = swish(stem_(cfg_.coords ? append_coords(image) : image));
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      x = blocks_[i](x);
      if (i == cfg_.taps[0]) p.f3 = x;
      if (i == cfg_.taps[1]) p.f5 = x;
      if (i == cfg_.taps[2]) {
        p.f7 = x;
        break;
      }
    }
    return p;
  }

 private:
  BackboneConfig cfg_;
  Conv<T> stem_;
  std::vector<ResidualBlock<T>> blocks_;
};

/// Top-down fusion: F = up(up(f7) + bridge5(f5)) + bridge3(f3). The bridges
/// are linear 1x1 convolutions to d channels; output has f3's resolution.
template <typename T>
struct PyramidFusion {
  Conv<T> bridge5, bridge3;

  PyramidFusion() = default;
  PyramidFusion(ParamStore<T>& ps, Rng& rng, const BackboneConfig& cfg)
      : bridge5(ps, rng, "fuse.bridge5", cfg.tap_channels()[1], cfg.tap_channels()[2], 1, 1, 0),
        bridge3(ps, rng, "fuse.bridge3", cfg.tap_channels()[0], cfg.tap_channels()[2], 1, 1, 0) {}

  Tensor<T> operator()(const FeaturePyramid<T>& p) const {
    auto factor = [](const Tensor<T>& hi, const Tensor<T>& lo) {
      if (hi.dim(1) % lo.dim(1) != 0 || hi.dim(1) / lo.dim(1) != hi.dim(2) / lo.dim(2) ||
          hi.dim(2) % lo.dim(2) != 0)
        throw DimensionError("fuse_pyramid: incompatible levels " + shape_str(hi.shape()) + " and " +
                             shape_str(lo.shape()));
      return hi.dim(1) / lo.dim(1);
    };
    auto x = add(upsample_nearest(p.f7, factor(p.f5, p.f7)), bridge5(p.f5));
    return add(upsample_nearest(x, factor(p.f3, p.f5)), bridge3(p.f3));
  }
};

}  // namespace pren
