#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pren/errors.hpp"
#include "pren/model.hpp"
#include "pren/synthdata.hpp"
#include "pren/training.hpp"

namespace pren {

struct TrainConfig {
  std::size_t batch = 32;
  std::size_t epochs = 20;
  LrSchedule schedule;
  double clip = 5.0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetConfig train_data;
  DatasetConfig test_data;
  bool disjoint_test = true;  // test texts never occur in the training set
  std::string out_dir = "run";

  void validate() const {
    model.validate();
    train_data.validate();
    test_data.validate();
    if (train.batch == 0) throw ConfigError("train.batch must be >= 1");
    if (train.clip < 0) throw ConfigError("train.clip must be >= 0");
    if (!(train.schedule.initial > 0)) throw ConfigError("train.lr must be > 0");
    for (const auto& [_, lr] : train.schedule.drops)
      if (!(lr > 0)) throw ConfigError("train.lr_drops: learning rates must be > 0");
    for (const auto* ds : {&train_data, &test_data}) {
      if (ds->alphabet_size != model.alphabet_size)
        throw ConfigError("dataset alphabet_size differs from model.alphabet_size");
      if (ds->max_len + 1 > model.L)
        throw ConfigError("dataset max_len + 1 exceeds model.L = " + std::to_string(model.L));
    }
  }
};

namespace detail {

using json = nlohmann::ordered_json;

template <typename V>
void read_opt(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown config field '" + where + "." + k + "'");
  }
}

inline json dataset_to_json(const DatasetConfig& d) {
  return json{{"count", d.count},   {"min_len", d.min_len}, {"max_len", d.max_len},
              {"alphabet_size", d.alphabet_size}, {"mix", d.mix}, {"noise", d.noise},
              {"seed", d.seed}};
}

inline DatasetConfig dataset_from_json(const json& j, const std::string& where) {
  check_keys(j, {"count", "min_len", "max_len", "alphabet_size", "mix", "noise", "seed"}, where);
  DatasetConfig d;
  read_opt(j, "count", d.count);
  read_opt(j, "min_len", d.min_len);
  read_opt(j, "max_len", d.max_len);
  read_opt(j, "alphabet_size", d.alphabet_size);
  read_opt(j, "mix", d.mix);
  read_opt(j, "noise", d.noise);
  read_opt(j, "seed", d.seed);
  return d;
}

}  // namespace detail

inline std::string to_json(const RunConfig& c) {
  using detail::json;
  json drops = json::array();
  for (const auto& [e, lr] : c.train.schedule.drops) drops.push_back({{"epoch", e}, {"lr", lr}});
  json j{
      {"model",
       {{"kind", to_string(c.model.kind)},
        {"n", c.model.n},
        {"d", c.model.d},
        {"L", c.model.L},
        {"heads", c.model.heads},
        {"blocks", c.model.blocks},
        {"alphabet_size", c.model.alphabet_size},
        {"aggregators", to_string(c.model.aggregators)},
        {"backbone", c.model.backbone},
        {"coords", c.model.coords},
        {"seed", c.model.seed}}},
      {"train",
       {{"batch", c.train.batch},
        {"epochs", c.train.epochs},
        {"lr", c.train.schedule.initial},
        {"lr_drops", drops},
        {"clip", c.train.clip}}},
      {"train_data", detail::dataset_to_json(c.train_data)},
      {"test_data", detail::dataset_to_json(c.test_data)},
      {"disjoint_test", c.disjoint_test},
      {"out_dir", c.out_dir}};
  return j.dump(2);
}

/// Parses a RunConfig; absent fields keep their defaults, unknown fields are
/// rejected. The result is validated.
inline RunConfig parse_run_config(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON config: ") + e.what());
  }
  detail::check_keys(j, {"model", "train", "train_data", "test_data", "disjoint_test", "out_dir"}, "config");
  RunConfig c;
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::check_keys(
        m, {"kind", "n", "d", "L", "heads", "blocks", "alphabet_size", "aggregators", "backbone", "coords", "seed"},
        "model");
    if (m.contains("kind")) c.model.kind = parse_model_kind(m["kind"].get<std::string>());
    if (m.contains("aggregators")) c.model.aggregators = parse_aggregator_mode(m["aggregators"].get<std::string>());
    detail::read_opt(m, "n", c.model.n);
    detail::read_opt(m, "d", c.model.d);
    detail::read_opt(m, "L", c.model.L);
    detail::read_opt(m, "heads", c.model.heads);
    detail::read_opt(m, "blocks", c.model.blocks);
    detail::read_opt(m, "alphabet_size", c.model.alphabet_size);
    detail::read_opt(m, "backbone", c.model.backbone);
    detail::read_opt(m, "coords", c.model.coords);
    detail::read_opt(m, "seed", c.model.seed);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::check_keys(t, {"batch", "epochs", "lr", "lr_drops", "clip"}, "train");
    detail::read_opt(t, "batch", c.train.batch);
    detail::read_opt(t, "epochs", c.train.epochs);
    detail::read_opt(t, "lr", c.train.schedule.initial);
    detail::read_opt(t, "clip", c.train.clip);
    if (t.contains("lr_drops")) {
      c.train.schedule.drops.clear();
      for (const auto& d : t["lr_drops"]) {
        detail::check_keys(d, {"epoch", "lr"}, "train.lr_drops");
        std::size_t e = 0;
        double lr = 0;
        detail::read_opt(d, "epoch", e);
        detail::read_opt(d, "lr", lr);
        c.train.schedule.drops.emplace_back(e, lr);
      }
    }
  }
  if (j.contains("train_data")) c.train_data = detail::dataset_from_json(j["train_data"], "train_data");
  if (j.contains("test_data")) c.test_data = detail::dataset_from_json(j["test_data"], "test_data");
  detail::read_opt(j, "disjoint_test", c.disjoint_test);
  detail::read_opt(j, "out_dir", c.out_dir);
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

/// Replaces every seed in the config with streams derived from `seed`.
inline void override_seed(RunConfig& c, std::uint64_t seed) {
  c.model.seed = seed;
  c.train_data.seed = derive_seed(seed, 101);
  c.test_data.seed = derive_seed(seed, 102);
}

}  // namespace pren
