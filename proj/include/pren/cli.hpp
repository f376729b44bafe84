#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pren/checkpoint.hpp"
#include "pren/config.hpp"
#include "pren/model.hpp"
#include "pren/pgm.hpp"
#include "pren/synthdata.hpp"
#include "pren/training.hpp"

namespace pren {

namespace fs = std::filesystem;

struct Datasets {
  std::vector<LabeledSample> train, test;
};

inline Datasets build_datasets(const RunConfig& cfg) {
  Datasets d;
  d.train = make_dataset(cfg.train_data);
  d.test = cfg.disjoint_test ? make_dataset(cfg.test_data, text_set(d.train)) : make_dataset(cfg.test_data);
  return d;
}

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<double> test_accuracy;  // average accuracy after each epoch
  EvalReport final_report;
  std::string final_checkpoint;
  double seconds = 0;
};

inline std::string checkpoint_path(const RunConfig& cfg, std::size_t epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
  return (fs::path(cfg.out_dir) / os.str()).string();
}

/// Trains per `cfg` in 32-bit floats. Writes one checkpoint per epoch,
/// metrics.csv (one row per epoch) and final.ckpt under cfg.out_dir.
inline TrainResult run_training(const RunConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);
  const auto data = build_datasets(cfg);
  auto model = make_model<float>(cfg.model);
  OptState<float> opt;
  Rng rng(derive_seed(cfg.model.seed, 21));
  const TrainOptions options{cfg.train.batch, cfg.train.clip};

  std::ofstream csv(fs::path(cfg.out_dir) / "metrics.csv");
  if (!csv) throw FormatError("cannot write metrics.csv in '" + cfg.out_dir + "'");
  csv << "epoch,step,loss,lr,accuracy\n";
  csv << std::setprecision(9);

  TrainResult res;
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
    const double lr = cfg.train.schedule.at(e);
    auto m = train_epoch(*model, data.train, opt, lr, rng, options, step);
    m.epoch = e + 1;
    step = m.steps;
    const auto report = evaluate(*model, data.test);
    csv << m.epoch << ',' << m.steps << ',' << m.mean_loss << ',' << lr << ',' << report.average << '\n';
    csv.flush();
    save_checkpoint(checkpoint_path(cfg, m.epoch), cfg, model->params(), &opt);
    if (log)
      *log << "epoch " << m.epoch << " step " << m.steps << " loss " << m.mean_loss << " lr " << lr
           << " acc h/v/avg " << report.horizontal.accuracy() << '/' << report.vertical.accuracy() << '/'
           << report.average << std::endl;
    res.test_accuracy.push_back(report.average);
    res.final_report = report;
    res.epochs.push_back(std::move(m));
  }
  res.final_checkpoint = (fs::path(cfg.out_dir) / "final.ckpt").string();
  save_checkpoint(res.final_checkpoint, cfg, model->params(), &opt);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, std::ostream& out,
                     std::ostream& err) {
  try {
    auto cfg = load_run_config(config_path);
    if (seed) override_seed(cfg, *seed);
    const auto r = run_training(cfg, &out);
    out << "wrote " << r.final_checkpoint << " (" << std::fixed << std::setprecision(1) << r.seconds << " s)\n";
    return 0;
  } catch (const std::exception& e) {
    err << "train: " << e.what() << '\n';
    return 1;
  }
}

/// A directory with labels.txt, or a JSON dataset config file.
inline std::vector<LabeledSample> load_data_arg(const std::string& path) {
  if (fs::is_directory(path)) return load_dataset_dir(path);
  const auto text = read_file(path);
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw ConfigError("'" + path + "' is neither a dataset directory nor a JSON dataset config: " + e.what());
  }
  return make_dataset(detail::dataset_from_json(j, "data"));
}

inline void check_compatible(const ModelConfig& m, const std::vector<LabeledSample>& data) {
  const auto vocab = Vocabulary::toy(m.alphabet_size);
  for (const auto& s : data) {
    if (s.text.size() + 1 > m.L)
      throw ConfigError("sample '" + s.id + "' is longer than the checkpoint's L - 1 = " + std::to_string(m.L - 1));
    for (char c : s.text)
      if (!vocab.contains(c))
        throw ConfigError("sample '" + s.id + "' uses '" + std::string(1, c) + "' outside the checkpoint alphabet");
  }
}

inline int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& csv_path,
                    std::ostream& out, std::ostream& err) {
  try {
    const auto ck = load_checkpoint(ckpt_path);
    auto model = model_from_checkpoint<float>(ck);
    const auto data = load_data_arg(data_path);
    check_compatible(ck.config.model, data);
    const auto r = evaluate(*model, data);
    std::ostringstream row;
    row << std::setprecision(6) << to_string(ck.config.model.kind) << ',' << r.horizontal.accuracy() << ','
        << r.vertical.accuracy() << ',' << r.average << '\n';
    const std::string header = "model,horizontal,vertical,average\n";
    out << header << row.str();
    if (!csv_path.empty()) write_file(csv_path, header + row.str());
    return 0;
  } catch (const std::exception& e) {
    err << "eval: " << e.what() << '\n';
    return 1;
  }
}

inline int cmd_infer(const std::string& ckpt_path, const std::vector<std::string>& files, std::ostream& out,
                     std::ostream& err) {
  std::unique_ptr<Recognizer<float>> model;
  try {
    model = model_from_checkpoint<float>(load_checkpoint(ckpt_path));
  } catch (const std::exception& e) {
    err << "infer: " << e.what() << '\n';
    return 1;
  }
  int status = 0;
  for (const auto& f : files) {
    try {
      const auto s = sample_from_pgm(f);
      out << f << '\t' << model->recognize(s.image<float>()) << '\n';
    } catch (const std::exception& e) {
      err << "infer: " << f << ": " << e.what() << '\n';
      status = 1;
    }
  }
  return status;
}

/// Min-max normalizes `v` to 8 bits; a constant map becomes all zeros.
template <typename T>
GrayImage normalize_map(std::span<const T> v, std::size_t h, std::size_t w) {
  if (v.size() != h * w) throw DimensionError("normalize_map: size does not match " + std::to_string(h) + "x" + std::to_string(w));
  GrayImage g{w, h, std::vector<std::uint8_t>(v.size(), 0)};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (range > 0)
    for (std::size_t i = 0; i < v.size(); ++i)
      g.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (static_cast<double>(v[i]) - *lo) / range));
  return g;
}

/// Channel means of each primitive's group in a pre-pool tensor [n*w x h x w].
template <typename T>
std::vector<std::vector<T>> group_channel_means(const Tensor<T>& pre_pool, std::size_t n) {
  const std::size_t c = pre_pool.dim(0), hw = pre_pool.dim(1) * pre_pool.dim(2);
  if (c % n) throw DimensionError("pre-pool channels not divisible by n");
  const std::size_t g = c / n;
  std::vector<std::vector<T>> out(n, std::vector<T>(hw, T(0)));
  auto v = pre_pool.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < g; ++ch)
      for (std::size_t p = 0; p < hw; ++p) out[i][p] += v[(i * g + ch) * hw + p] / T(g);
  return out;
}

struct VisualizeOptions {
  bool attention = false;  // explicitly request attention maps
};

/// Writes heatmap_f{3,5,7}_{i}.pgm, pool_f{3,5,7}_{i}.pgm and, for the 2D
/// models, attention_{t}.pgm. Returns the written paths.
inline std::vector<std::string> visualize(const Recognizer<float>& model, const LabeledSample& sample,
                                          const fs::path& dir, const VisualizeOptions& opt) {
  const auto& cfg = model.config();
  if (opt.attention && cfg.kind == ModelKind::pren)
    throw UsageError("attention maps are only produced by pren2d/baseline2d; pren decodes in parallel without attention");
  fs::create_directories(dir);
  NoGradGuard ng;
  VtrTrace<float> trace;
  DecodeResult<float> dec;
  bool have_primitives = true;
  if (const auto* p = dynamic_cast<const Pren<float>*>(&model)) {
    p->visual_text(sample.image<float>(), &trace);
  } else {
    const auto& p2 = dynamic_cast<const Pren2d<float>&>(model);
    have_primitives = cfg.kind == ModelKind::pren2d;
    const auto enc = p2.encode(sample.image<float>(), have_primitives ? &trace : nullptr);
    dec = p2.decode_recursive(enc, true);
  }
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const GrayImage& g) {
    const auto path = (dir / name).string();
    write_pgm(path, g);
    written.push_back(path);
  };
  const char* level[3] = {"f3", "f5", "f7"};
  if (have_primitives) {
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& hm = trace.heatmaps[s];
      if (hm.numel()) {
        const std::size_t h = hm.dim(1), w = hm.dim(2);
        for (std::size_t i = 0; i < hm.dim(0); ++i)
          put(std::string("heatmap_") + level[s] + "_" + std::to_string(i) + ".pgm",
              normalize_map<float>(hm.data().subspan(i * h * w, h * w), h, w));
      }
      const auto& pp = trace.pre_pool[s];
      if (pp.numel()) {
        const auto means = group_channel_means(pp, cfg.n);
        for (std::size_t i = 0; i < means.size(); ++i)
          put(std::string("pool_") + level[s] + "_" + std::to_string(i) + ".pgm",
              normalize_map<float>(std::span<const float>(means[i]), pp.dim(1), pp.dim(2)));
      }
    }
  }
  for (std::size_t t = 0; t < dec.attention.size(); ++t)
    put("attention_" + std::to_string(t) + ".pgm",
        normalize_map<float>(std::span<const float>(dec.attention[t]), dec.map_h, dec.map_w));
  return written;
}

inline int cmd_visualize(const std::string& ckpt_path, const std::string& image, const std::string& out_dir,
                         const VisualizeOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    const auto model = model_from_checkpoint<float>(load_checkpoint(ckpt_path));
    const auto files = visualize(*model, sample_from_pgm(image), out_dir, opt);
    for (const auto& f : files) out << f << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "visualize: " << e.what() << '\n';
    return 1;
  }
}

struct LatencyStats {
  double mean_ms = 0, std_ms = 0;
  std::size_t count = 0;
};

/// Per-image wall time of `predict_ids` over at least `min_count` images
/// (cycling through `data`), after `warmup` untimed calls.
inline LatencyStats time_model(const Recognizer<float>& model, const std::vector<LabeledSample>& data,
                               std::size_t min_count = 100, std::size_t warmup = 5) {
  if (data.empty()) throw UsageError("bench: empty dataset");
  std::vector<Tensor<float>> images;
  for (const auto& s : data) images.push_back(s.image<float>());
  for (std::size_t i = 0; i < warmup; ++i) model.predict_ids(images[i % images.size()]);
  const std::size_t count = std::max(min_count, images.size());
  std::vector<double> ms;
  ms.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model.predict_ids(images[i % images.size()]);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  LatencyStats st;
  st.count = ms.size();
  for (double v : ms) st.mean_ms += v;
  st.mean_ms /= static_cast<double>(ms.size());
  for (double v : ms) st.std_ms += (v - st.mean_ms) * (v - st.mean_ms);
  st.std_ms = std::sqrt(st.std_ms / static_cast<double>(ms.size() > 1 ? ms.size() - 1 : 1));
  return st;
}

struct BenchReport {
  LatencyStats pren, pren2d;
  double ratio = 0;  // pren2d / pren
};

inline BenchReport bench(const Recognizer<float>& pren_model, const Recognizer<float>& pren2d_model,
                         const std::vector<LabeledSample>& data, std::size_t min_count = 100) {
  BenchReport r;
  r.pren = time_model(pren_model, data, min_count);
  r.pren2d = time_model(pren2d_model, data, min_count);
  r.ratio = r.pren2d.mean_ms / r.pren.mean_ms;
  return r;
}

inline int cmd_bench(const std::string& pren_ckpt, const std::string& pren2d_ckpt, const std::string& data_path,
                     std::size_t min_count, std::ostream& out, std::ostream& err) {
  try {
    const auto a = model_from_checkpoint<float>(load_checkpoint(pren_ckpt));
    const auto b = model_from_checkpoint<float>(load_checkpoint(pren2d_ckpt));
    if (a->config().kind != ModelKind::pren) throw ConfigError("--pren checkpoint holds a " + to_string(a->config().kind) + " model");
    if (b->config().kind == ModelKind::pren) throw ConfigError("--pren2d checkpoint holds a pren model");
    const auto data = load_data_arg(data_path);
    const auto r = bench(*a, *b, data, min_count);
    out << std::fixed << std::setprecision(3) << "model,mean_ms,std_ms,count\n"
        << "pren," << r.pren.mean_ms << ',' << r.pren.std_ms << ',' << r.pren.count << '\n'
        << to_string(b->config().kind) << ',' << r.pren2d.mean_ms << ',' << r.pren2d.std_ms << ','
        << r.pren2d.count << '\n'
        << "ratio," << r.ratio << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "bench: " << e.what() << '\n';
    return 1;
  }
}

/// Renders the configured train or test split to PGM files plus labels.txt.
inline int cmd_synth(const std::string& config_path, const std::string& split, const std::string& out_dir,
                     std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
  try {
    auto cfg = load_run_config(config_path);
    if (seed) override_seed(cfg, *seed);
    const auto data = build_datasets(cfg);
    if (split != "train" && split != "test") throw UsageError("split must be train or test");
    const auto& d = split == "train" ? data.train : data.test;
    dump_dataset(d, out_dir);
    out << "wrote " << d.size() << " images to " << out_dir << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "synth: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace pren
