#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pren.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Primitive-representation text recognizer"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "override every seed in the config");

  std::string config, ckpt, data, image, out, csv, split = "train", pren_ckpt, pren2d_ckpt;
  std::vector<std::string> files;
  std::size_t count = 100;
  pren::VisualizeOptions vis;

  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config)->required();

  auto* eval = app.add_subcommand("eval", "word accuracy per orientation");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", data, "dataset directory or JSON dataset config")->required();
  eval->add_option("--csv", csv, "also write the report here");

  auto* infer = app.add_subcommand("infer", "recognize PGM images");
  infer->add_option("--ckpt", ckpt)->required();
  infer->add_option("files", files)->required();

  auto* visualize = app.add_subcommand("visualize", "dump heatmaps, pooling maps and attention");
  visualize->add_option("--ckpt", ckpt)->required();
  visualize->add_option("image", image)->required();
  visualize->add_option("--out", out)->required();
  visualize->add_flag("--attention", vis.attention, "require attention maps");

  auto* bench = app.add_subcommand("bench", "per-image latency of pren vs pren2d");
  bench->add_option("--pren", pren_ckpt)->required();
  bench->add_option("--pren2d", pren2d_ckpt)->required();
  bench->add_option("--data", data)->required();
  bench->add_option("--count", count, "timed images (at least 100)")->check(CLI::Range(100, 1000000));

  auto* synth = app.add_subcommand("synth", "render a dataset split to PGM files");
  synth->add_option("--config", config)->required();
  synth->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
  synth->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  if (*train) return pren::cmd_train(config, seed, std::cout, std::cerr);
  if (*eval) return pren::cmd_eval(ckpt, data, csv, std::cout, std::cerr);
  if (*infer) return pren::cmd_infer(ckpt, files, std::cout, std::cerr);
  if (*visualize) return pren::cmd_visualize(ckpt, image, out, vis, std::cout, std::cerr);
  if (*bench) return pren::cmd_bench(pren_ckpt, pren2d_ckpt, data, count, std::cout, std::cerr);
  if (*synth) return pren::cmd_synth(config, split, out, seed, std::cout, std::cerr);
  return 1;
}
