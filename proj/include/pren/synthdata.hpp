#pragma once

// Procedural toy text corpus. Glyphs are stroke lists in a unit box drawn
// with a round pen on the normalized canvas (64x256 horizontal, 256x64
// vertical), one cell per character along the reading axis.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "pren/errors.hpp"
#include "pren/pgm.hpp"
#include "pren/random.hpp"
#include "pren/tensor.hpp"

namespace pren {

enum class Orientation { horizontal, vertical, skewed };

inline std::string to_string(Orientation o) {
  switch (o) {
    case Orientation::horizontal: return "horizontal";
    case Orientation::vertical: return "vertical";
    case Orientation::skewed: return "skewed";
  }
  return "?";
}

inline constexpr std::size_t kCanvasShort = 64;
inline constexpr std::size_t kCanvasLong = 256;

/// Canvas extents (height, width) for an orientation.
inline std::pair<std::size_t, std::size_t> canvas_shape(Orientation o) {
  return o == Orientation::vertical ? std::pair{kCanvasLong, kCanvasShort} : std::pair{kCanvasShort, kCanvasLong};
}

struct Point {
  double x, y;
};

/// One glyph: polylines in the unit box, x to the right and y downwards.
struct GlyphSpec {
  int id = 0;
  std::vector<std::vector<Point>> strokes;
};

inline constexpr std::size_t kGlyphCount = 10;
inline constexpr double kStrokeWidth = 0.18;  // pen width as a fraction of the glyph box's shorter side
/// Texts shorter than this still get cells of usable_length / kMinCells.
inline constexpr std::size_t kMinCells = 3;

inline const std::array<GlyphSpec, kGlyphCount>& glyphs() {
  static const std::array<GlyphSpec, kGlyphCount> table = [] {
    std::array<GlyphSpec, kGlyphCount> g;
    std::vector<Point> ring;
    for (int i = 0; i <= 24; ++i) {
      const double a = 2.0 * std::numbers::pi * i / 24.0;
      ring.push_back({0.5 + 0.4 * std::cos(a), 0.5 + 0.4 * std::sin(a)});
    }
    g[0] = {0, {{{0.5, 0.08}, {0.5, 0.92}}, {{0.15, 0.08}, {0.85, 0.08}}, {{0.15, 0.92}, {0.85, 0.92}}}};  // beam
    g[1] = {1, {{{0.08, 0.2}, {0.92, 0.2}}, {{0.08, 0.5}, {0.92, 0.5}}, {{0.08, 0.8}, {0.92, 0.8}}}};    // bars
    g[2] = {2, {{{0.15, 0.08}, {0.15, 0.92}}, {{0.85, 0.08}, {0.85, 0.92}}, {{0.15, 0.5}, {0.85, 0.5}}}};  // aitch
    g[3] = {3, {ring}};                                                                              // ring
    g[4] = {4, {{{0.1, 0.1}, {0.9, 0.9}}, {{0.9, 0.1}, {0.1, 0.9}}}};                                // cross
    g[5] = {5, {{{0.5, 0.08}, {0.92, 0.92}, {0.08, 0.92}, {0.5, 0.08}}}};                            // triangle
    g[6] = {6, {{{0.15, 0.08}, {0.15, 0.92}, {0.85, 0.92}, {0.85, 0.08}}}};                          // cup
    g[7] = {7, {{{0.15, 0.92}, {0.15, 0.08}, {0.85, 0.08}, {0.85, 0.92}}}};                          // arch
    g[8] = {8, {{{0.1, 0.1}, {0.9, 0.1}, {0.1, 0.9}, {0.9, 0.9}}}};                                  // zed
    g[9] = {9, {{{0.5, 0.05}, {0.95, 0.5}, {0.5, 0.95}, {0.05, 0.5}, {0.5, 0.05}}}};                 // diamond
    return g;
  }();
  return table;
}

namespace detail {

inline double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

/// Distance from `p` to the glyph with the unit box scaled by (sx, sy).
inline double glyph_distance(const GlyphSpec& g, Point p, double sx, double sy) {
  double best = 1e9;
  for (const auto& s : g.strokes)
    for (std::size_t i = 0; i + 1 < s.size(); ++i)
      best = std::min(best, segment_distance(p, {s[i].x * sx, s[i].y * sy}, {s[i + 1].x * sx, s[i + 1].y * sy}));
  return best;
}

}  // namespace detail

/// Axis-aligned glyph box on the canvas with a horizontal shear (dx per unit
/// of height, measured from the box's vertical centre).
struct GlyphBox {
  double x0, y0, w, h, shear = 0.0;
};

/// Max-composites the anti-aliased coverage of one glyph into `cov`.
inline void rasterize_glyph(const GlyphSpec& g, const GlyphBox& box, std::vector<double>& cov,
                            std::size_t height, std::size_t width) {
  const double reach = std::abs(box.shear) * box.h * 0.5 + 2.0;
  const auto xa = static_cast<std::ptrdiff_t>(std::floor(box.x0 - reach));
  const auto xb = static_cast<std::ptrdiff_t>(std::ceil(box.x0 + box.w + reach));
  const auto ya = static_cast<std::ptrdiff_t>(std::floor(box.y0 - 2.0));
  const auto yb = static_cast<std::ptrdiff_t>(std::ceil(box.y0 + box.h + 2.0));
  const double pen = kStrokeWidth * std::min(box.w, box.h);
  for (std::ptrdiff_t py = std::max<std::ptrdiff_t>(ya, 0); py < std::min<std::ptrdiff_t>(yb, static_cast<std::ptrdiff_t>(height)); ++py) {
    const double v = (static_cast<double>(py) + 0.5 - box.y0) / box.h;
    const double xs = box.shear * (v - 0.5) * box.h;
    for (std::ptrdiff_t px = std::max<std::ptrdiff_t>(xa, 0); px < std::min<std::ptrdiff_t>(xb, static_cast<std::ptrdiff_t>(width)); ++px) {
      const double u = static_cast<double>(px) + 0.5 - box.x0 - xs;
      const double dist = detail::glyph_distance(g, {u, v * box.h}, box.w, box.h);
      const double c = std::clamp(pen * 0.5 - dist + 0.5, 0.0, 1.0);
      auto& dst = cov[static_cast<std::size_t>(py) * width + static_cast<std::size_t>(px)];
      dst = std::max(dst, c);
    }
  }
}

/// Binary mask of a glyph at `size` x `size` (coverage >= 0.5).
inline std::vector<bool> glyph_mask(const GlyphSpec& g, std::size_t size) {
  std::vector<double> cov(size * size, 0.0);
  rasterize_glyph(g, {0.0, 0.0, static_cast<double>(size), static_cast<double>(size)}, cov, size, size);
  std::vector<bool> m(cov.size());
  for (std::size_t i = 0; i < cov.size(); ++i) m[i] = cov[i] >= 0.5;
  return m;
}

struct LabeledSample {
  std::string id;
  std::string text;
  Orientation orientation = Orientation::horizontal;
  std::size_t height = 0, width = 0;
  std::vector<float> pixels;  // [0, 1], row-major
  std::uint64_t seed = 0;
  double noise = 0.0;

  template <typename T>
  Tensor<T> image() const {
    return Tensor<T>({1, height, width}, std::vector<T>(pixels.begin(), pixels.end()));
  }
};

struct DatasetConfig {
  std::size_t count = 100;
  std::size_t min_len = 1;
  std::size_t max_len = 8;
  std::size_t alphabet_size = 10;
  /// horizontal / vertical / skewed probabilities.
  std::array<double, 3> mix{0.5, 0.5, 0.0};
  double noise = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (min_len < 1 || max_len < min_len) throw ConfigError("dataset: need 1 <= min_len <= max_len");
    if (alphabet_size < 1 || alphabet_size > kGlyphCount)
      throw ConfigError("dataset: alphabet_size must be 1.." + std::to_string(kGlyphCount));
    double s = 0;
    for (double p : mix) {
      if (p < 0) throw ConfigError("dataset: negative orientation probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("dataset: orientation mix must sum to 1");
    if (noise < 0) throw ConfigError("dataset: noise must be >= 0");
  }
};

inline constexpr double kMaxSkewDegrees = 15.0;

/// Renders `text` (over the toy alphabet 'a'..) deterministically from
/// (text, orientation, seed, noise).
inline LabeledSample render_sample(const std::string& text, Orientation orientation, std::uint64_t seed,
                                   double noise = 0.05, std::size_t max_len = 24) {
  if (text.empty()) throw UsageError("render_sample: empty text");
  if (text.size() > max_len)
    throw UsageError("render_sample: text '" + text + "' longer than " + std::to_string(max_len));
  for (char c : text) {
    if (c < 'a' || static_cast<std::size_t>(c - 'a') >= kGlyphCount)
      throw UsageError(std::string("render_sample: no glyph for '") + c + "'");
  }
  LabeledSample s;
  s.text = text;
  s.orientation = orientation;
  s.seed = seed;
  s.noise = noise;
  std::tie(s.height, s.width) = canvas_shape(orientation);
  Rng rng(seed);

  const bool vertical = orientation == Orientation::vertical;
  const double along = static_cast<double>(vertical ? s.height : s.width);
  const double across = static_cast<double>(vertical ? s.width : s.height);
  const std::size_t l = text.size();

  // Line extent along the reading axis, with jittered start and fill.
  const double margin = orientation == Orientation::skewed ? 10.0 : 4.0;
  const double usable = along - 2 * margin;
  const double fill = rng.uniform(0.9, 1.0) * usable * static_cast<double>(l) /
                      static_cast<double>(std::max(l, kMinCells));
  const double start = margin + rng.uniform(0.0, usable - fill);
  const double shear =
      orientation == Orientation::skewed
          ? std::tan(rng.uniform(5.0, kMaxSkewDegrees) * std::numbers::pi / 180.0) * (rng.bernoulli(0.5) ? 1 : -1)
          : 0.0;

  // Per-glyph advance weights give jittered spacing.
  std::vector<double> weight(l);
  double wsum = 0;
  for (auto& w : weight) wsum += (w = rng.uniform(0.85, 1.15));

  std::vector<double> cov(s.height * s.width, 0.0);
  double pos = start;
  for (std::size_t i = 0; i < l; ++i) {
    const double slot = fill * weight[i] / wsum;
    const double scale = rng.uniform(0.8, 1.0);
    const double a_len = slot * rng.uniform(0.78, 0.9);
    const double c_len = (across - 8.0) * scale;
    const double a_off = pos + (slot - a_len) * 0.5 + rng.uniform(-1.0, 1.0);
    const double c_off = (across - c_len) * 0.5 + rng.uniform(-2.0, 2.0);
    GlyphBox box = vertical ? GlyphBox{c_off, a_off, c_len, a_len, 0.0}
                            : GlyphBox{a_off, c_off, a_len, c_len, shear};
    rasterize_glyph(glyphs()[static_cast<std::size_t>(text[i] - 'a')], box, cov, s.height, s.width);
    pos += slot;
  }

  const double bg = rng.uniform(0.0, 0.25);
  const double fg = rng.uniform(0.75, 1.0);
  s.pixels.resize(cov.size());
  for (std::size_t i = 0; i < cov.size(); ++i) {
    double v = bg + (fg - bg) * cov[i];
    if (noise > 0) v += noise * rng.normal();
    s.pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return s;
}

/// Re-renders the sample's text in another orientation (layout, not a pixel
/// rotation). The same orientation reproduces the original pixels.
inline LabeledSample orient_variant(const LabeledSample& sample, Orientation target) {
  auto out = render_sample(sample.text, target, sample.seed, sample.noise);
  out.id = sample.id;
  return out;
}

/// Samples texts and orientations under `cfg.seed`. Texts found in `exclude`
/// are redrawn (up to a bounded number of attempts) to keep splits disjoint.
inline std::vector<LabeledSample> make_dataset(const DatasetConfig& cfg,
                                               const std::set<std::string>& exclude = {}) {
  cfg.validate();
  std::vector<LabeledSample> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    Rng rng(derive_seed(cfg.seed, i));
    const double u = rng.uniform();
    const Orientation o = u < cfg.mix[0]               ? Orientation::horizontal
                          : u < cfg.mix[0] + cfg.mix[1] ? Orientation::vertical
                                                        : Orientation::skewed;
    std::string text;
    for (int attempt = 0; attempt < 32; ++attempt) {
      const std::size_t len = cfg.min_len + static_cast<std::size_t>(rng.below(cfg.max_len - cfg.min_len + 1));
      text.clear();
      for (std::size_t k = 0; k < len; ++k) text.push_back(static_cast<char>('a' + rng.below(cfg.alphabet_size)));
      if (!exclude.count(text)) break;
    }
    auto s = render_sample(text, o, rng.next_u64(), cfg.noise, cfg.max_len);
    s.id = "s" + std::to_string(cfg.seed) + "_" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::set<std::string> text_set(const std::vector<LabeledSample>& data) {
  std::set<std::string> s;
  for (const auto& x : data) s.insert(x.text);
  return s;
}

inline GrayImage to_gray(const LabeledSample& s) {
  GrayImage img{s.width, s.height, std::vector<std::uint8_t>(s.pixels.size())};
  for (std::size_t i = 0; i < s.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s.pixels[i], 0.0f, 1.0f) * 255.0f));
  return img;
}

inline constexpr const char* kLabelsFile = "labels.txt";

/// Writes one PGM per sample plus labels.txt ("filename<TAB>text" lines).
inline void dump_dataset(const std::vector<LabeledSample>& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream labels(dir / kLabelsFile, std::ios::binary);
  if (!labels) throw FormatError("cannot write labels in '" + dir.string() + "'");
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream name;
    name << "img_" << std::setw(5) << std::setfill('0') << i << ".pgm";
    write_pgm((dir / name.str()).string(), to_gray(data[i]));
    labels << name.str() << '\t' << data[i].text << '\n';
  }
}

/// Sample from a PGM file; orientation follows the canvas shape.
inline LabeledSample sample_from_pgm(const std::string& path, const std::string& text = {}) {
  auto img = read_pgm(path);
  LabeledSample s;
  s.id = path;
  s.text = text;
  s.height = img.height;
  s.width = img.width;
  s.orientation = img.height > img.width ? Orientation::vertical : Orientation::horizontal;
  s.pixels.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) s.pixels[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return s;
}

/// Reads a directory written by dump_dataset.
inline std::vector<LabeledSample> load_dataset_dir(const std::filesystem::path& dir) {
  std::ifstream labels(dir / kLabelsFile);
  if (!labels) throw FormatError("no " + std::string(kLabelsFile) + " in '" + dir.string() + "'");
  std::vector<LabeledSample> out;
  std::string line;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("labels line without TAB: '" + line + "'");
    out.push_back(sample_from_pgm((dir / line.substr(0, tab)).string(), line.substr(tab + 1)));
  }
  return out;
}

}  // namespace pren
