#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "tensorfact/config.hpp"
#include "tensorfact/report.hpp"
#include "tensorfact/train.hpp"
#include "tensorfact/weights.hpp"

namespace tensorfact {

// Built-in defaults for desk-scale runs: phase 1 trains from scratch, so it
// uses the phase-2 rate; the canvas and epoch count keep a full run-all
// within a few CPU minutes.
inline TrainConfig reference_config() {
  TrainConfig cfg;
  cfg.alpha = 0.5;
  cfg.delta_ratio = 0.25;
  cfg.lr_phase1 = 1e-3;
  cfg.lr_phase2 = 1e-4;
  cfg.epochs = 40;
  cfg.batch_size = 8;
  cfg.accum_steps = 2;
  cfg.canvas = 64;
  cfg.seed = 1;
  return cfg;
}

namespace cli {

inline const char* kUsage =
    "usage: tensorfact <command> [options]\n"
    "\n"
    "commands:\n"
    "  gen-data   --out DIR [--config FILE] [--seed N]\n"
    "  train-rgb  --data DIR --out FILE [--config FILE] [--seed N] [--history FILE]\n"
    "  augment    --in FILE --out FILE [--config FILE] [--seed N]\n"
    "  train-ir   --data DIR --in FILE --out FILE [--config FILE] [--seed N] [--history FILE]\n"
    "  eval       --model FILE --data DIR [--split NAME] [--dets-out FILE]\n"
    "             or: eval --dets FILE --gt FILE\n"
    "  report     --baseline N (--params N | --manifest FILE --alpha A [--delta-ratio R]) [--dp N]\n"
    "  gradcheck  [--seed N]\n"
    "  run-all    --out DIR [--config FILE] [--seed N]\n"
    "\n"
    "common flags: --seed N (overrides the config seed), --config FILE, --out PATH\n"
    "exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric error\n";

struct Args {
  std::map<std::string, std::string> flags;

  bool has(const std::string& key) const { return flags.count(key) > 0; }
  std::string get(const std::string& key) const {
    auto it = flags.find(key);
    if (it == flags.end()) throw usage_error("missing required flag --" + key);
    return it->second;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    auto it = flags.find(key);
    return it == flags.end() ? fallback : it->second;
  }
};

inline Args parse_flags(const std::vector<std::string>& argv, size_t start,
                        const std::vector<std::string>& allowed) {
  Args args;
  for (size_t i = start; i < argv.size(); ++i) {
    const std::string& tok = argv[i];
    if (tok.rfind("--", 0) != 0) throw usage_error("unexpected argument '" + tok + "'");
    const std::string key = tok.substr(2);
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw usage_error("unknown flag --" + key);
    if (i + 1 >= argv.size()) throw usage_error("flag --" + key + " needs a value");
    args.flags[key] = argv[++i];
  }
  return args;
}

inline TrainConfig config_from(const Args& args) {
  TrainConfig cfg = args.has("config") ? load_config(args.get("config")) : reference_config();
  if (args.has("seed")) cfg.seed = std::stoull(args.get("seed"));
  return cfg;
}

inline ToyDetectorConfig detector_config(const TrainConfig& cfg) {
  ToyDetectorConfig mcfg;
  mcfg.classes = cfg.classes;
  mcfg.alpha = cfg.alpha;
  mcfg.seed = derive_seed(cfg.seed, 6, 0);
  return mcfg;
}

inline int cmd_gen_data(const Args& args, std::ostream& out) {
  const TrainConfig cfg = config_from(args);
  const RunSizes sizes;
  const std::string dir = args.get("out");
  namespace fs = std::filesystem;
  const SyntheticSceneSpec spec_a = scene_spec_for(cfg, Modality::A);
  const SyntheticSceneSpec spec_b = scene_spec_for(cfg, Modality::B);
  write_dataset((fs::path(dir) / "a_train").string(),
                generate_dataset(spec_a, sizes.a_train, derive_seed(cfg.seed, 1, 0)));
  write_dataset((fs::path(dir) / "a_val").string(),
                generate_dataset(spec_a, sizes.a_val, derive_seed(cfg.seed, 2, 0)));
  write_dataset((fs::path(dir) / "b_train").string(),
                generate_dataset(spec_b, sizes.b_train, derive_seed(cfg.seed, 3, 0)));
  write_dataset((fs::path(dir) / "b_val").string(),
                generate_dataset(spec_b, sizes.b_val, derive_seed(cfg.seed, 4, 0)));
  out << "wrote a_train(" << sizes.a_train << ") a_val(" << sizes.a_val << ") b_train("
      << sizes.b_train << ") b_val(" << sizes.b_val << ") under " << dir << "\n";
  return 0;
}

inline int cmd_train_rgb(const Args& args, std::ostream& out) {
  const TrainConfig cfg = config_from(args);
  namespace fs = std::filesystem;
  const std::string data_dir = args.get("data");
  auto train =
      prepare_data<float>(load_dataset((fs::path(data_dir) / "a_train").string()), cfg.canvas);
  auto val =
      prepare_data<float>(load_dataset((fs::path(data_dir) / "a_val").string()), cfg.canvas);
  ToyDetector<float> model = build_toy_detector<float>(detector_config(cfg));
  TrainResult<float> result = train_phase1(model, train, val, cfg);
  save_weights(model, args.get("out"));
  if (args.has("history")) write_history(args.get("history"), result.history);
  char buf[96];
  std::snprintf(buf, sizeof buf, "phase 1 done: best val L_d %.6f at epoch %d\n",
                result.best_val, result.best_epoch);
  out << buf;
  return 0;
}

inline int cmd_augment(const Args& args, std::ostream& out) {
  const TrainConfig cfg = config_from(args);
  ToyDetector<float> model = load_weights<float>(args.get("in"));
  augment_model(model, cfg.delta_ratio, derive_seed(cfg.seed, 7, 0));
  save_weights(model, args.get("out"));
  size_t added = 0;
  for (const auto& layer : model.layers) added += layer.delta_a.size() + layer.delta_b.size();
  out << "augmented " << model.layers.size() << " layers, " << added
      << " new trainable parameters\n";
  return 0;
}

inline int cmd_train_ir(const Args& args, std::ostream& out) {
  const TrainConfig cfg = config_from(args);
  namespace fs = std::filesystem;
  const RunSizes sizes;
  auto pool =
      prepare_data<float>(load_dataset((fs::path(args.get("data")) / "b_train").string()),
                          cfg.canvas);
  std::vector<size_t> train_ids, val_ids;
  select_b_indices(cfg, pool.samples.size(), sizes.b_val_phase2, train_ids, val_ids);
  PreparedData<float> train, val;
  train.canvas = val.canvas = pool.canvas;
  train.grid = val.grid = pool.grid;
  for (size_t id : train_ids) {
    train.samples.push_back(pool.samples[id]);
    train.targets.push_back(pool.targets[id]);
  }
  for (size_t id : val_ids) {
    val.samples.push_back(pool.samples[id]);
    val.targets.push_back(pool.targets[id]);
  }

  ToyDetector<float> model = load_weights<float>(args.get("in"));
  TrainResult<float> result = train_phase2(model, train, val, cfg);
  save_weights(model, args.get("out"));
  if (args.has("history")) write_history(args.get("history"), result.history);
  char buf[128];
  std::snprintf(buf, sizeof buf,
                "phase 2 done on %zu images: best val L_d %.6f at epoch %d\n",
                train.samples.size(), result.best_val, result.best_epoch);
  out << buf;
  return 0;
}

inline int cmd_eval(const Args& args, std::ostream& out) {
  char buf[160];
  if (args.has("dets") || args.has("gt")) {
    std::ifstream ds(args.get("dets"));
    if (!ds) throw parse_error("eval: cannot open " + args.get("dets"));
    std::ifstream gs(args.get("gt"));
    if (!gs) throw parse_error("eval: cannot open " + args.get("gt"));
    auto dets = read_detection_lines(ds);
    auto gts = read_groundtruth_lines(gs);
    const double map50 = mean_ap(dets, gts, {0.5});
    const double map5095 = mean_ap(dets, gts, coco_thresholds());
    std::snprintf(buf, sizeof buf, "mAP50 %.6f\nmAP50-95 %.6f\n", map50, map5095);
    out << buf;
    return 0;
  }

  namespace fs = std::filesystem;
  ToyDetector<float> model = load_weights<float>(args.get("model"));
  const std::string split = args.get_or("split", "b_val");
  auto samples = load_dataset((fs::path(args.get("data")) / split).string());
  const size_t canvas = samples[0].image.w;
  auto data = prepare_data<float>(std::move(samples), canvas);
  auto gts = dataset_ground_truth(data.samples, (double)canvas);
  auto dets = run_detector(model, data);
  if (args.has("dets-out")) {
    std::ofstream os(args.get("dets-out"));
    write_detection_lines(os, dets);
  }
  const double map50 = mean_ap(dets, gts, {0.5});
  const double map5095 = mean_ap(dets, gts, coco_thresholds());
  std::snprintf(buf, sizeof buf, "split %s: mAP50 %.6f  mAP50-95 %.6f\n", split.c_str(), map50,
                map5095);
  out << buf;
  for (const auto& [cls, ap] : per_class_ap(dets, gts, 0.5)) {
    std::snprintf(buf, sizeof buf, "class%d AP50 %.6f\n", cls, ap);
    out << buf;
  }
  return 0;
}

inline int cmd_report(const Args& args, std::ostream& out) {
  const uint64_t baseline = std::stoull(args.get("baseline"));
  const int dp = std::stoi(args.get_or("dp", "4"));
  if (dp != 2 && dp != 4) throw usage_error("--dp must be 2 or 4");
  auto pct = [&](const CompressionRow& row) { return dp == 2 ? row.pct2() : row.pct(4); };

  if (args.has("params")) {
    const uint64_t params = std::stoull(args.get("params"));
    out << "params " << params << "\n";
    out << "baseline " << baseline << "\n";
    out << "compression_pct " << pct(compression_report(params, baseline)) << "\n";
    return 0;
  }

  auto shapes = load_manifest(args.get("manifest"));
  const double alpha = std::stod(args.get("alpha"));
  const uint64_t dense = manifest_dense_params(shapes);
  const uint64_t fact = manifest_factored_params(shapes, alpha);
  if (dense > baseline)
    throw argument_error("report: manifest conv parameters exceed the baseline");
  const uint64_t model_params = baseline - dense + fact;
  out << "layers " << shapes.size() << "\n";
  out << "baseline " << baseline << "\n";
  out << "model_params " << model_params << "\n";
  out << "compression_pct " << pct(compression_report(model_params, baseline)) << "\n";
  if (args.has("delta-ratio")) {
    const double ratio = std::stod(args.get("delta-ratio"));
    const uint64_t trainable = manifest_delta_params(shapes, alpha, ratio);
    out << "trainable_params " << trainable << "\n";
    out << "trainable_compression_pct " << pct(compression_report(trainable, baseline)) << "\n";
  }
  return 0;
}

inline int cmd_gradcheck(const Args& args, std::ostream& out) {
  const uint64_t seed = args.has("seed") ? std::stoull(args.get("seed")) : 7;
  GradcheckInstance inst = make_gradcheck_instance(seed);
  double worst = 0;
  for (int p : {1, 2}) {
    const double err = finite_diff_check(inst.model, inst.x, inst.targets, p, 0.01, 1e-5);
    char buf[64];
    std::snprintf(buf, sizeof buf, "p=%d max relative error %.3e\n", p, err);
    out << buf;
    worst = std::max(worst, err);
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max relative gradient error %.3e\n", worst);
  out << buf;
  if (worst > 1e-6) throw numeric_error("gradient check failed the 1e-6 gate");
  return 0;
}

inline int cmd_run_all(const Args& args, std::ostream& out) {
  const TrainConfig cfg = config_from(args);
  const std::string dir = args.get("out");
  ExperimentArtifacts art = run_experiment(cfg);
  write_experiment_outputs(dir, cfg, art);
  namespace fs = std::filesystem;
  save_weights(art.frozen_model, (fs::path(dir) / "model_rgb.tfw").string());
  save_weights(art.augmented_model, (fs::path(dir) / "model_ir.tfw").string());
  out << format_report_text(art.report);
  return 0;
}

}  // namespace cli

inline int cli_main(const std::vector<std::string>& argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  using namespace cli;
  try {
    if (argv.empty()) throw usage_error("no command given");
    const std::string& cmd = argv[0];
    if (cmd == "gen-data")
      return cmd_gen_data(parse_flags(argv, 1, {"out", "config", "seed"}), out);
    if (cmd == "train-rgb")
      return cmd_train_rgb(parse_flags(argv, 1, {"data", "out", "config", "seed", "history"}),
                           out);
    if (cmd == "augment")
      return cmd_augment(parse_flags(argv, 1, {"in", "out", "config", "seed"}), out);
    if (cmd == "train-ir")
      return cmd_train_ir(
          parse_flags(argv, 1, {"data", "in", "out", "config", "seed", "history"}), out);
    if (cmd == "eval")
      return cmd_eval(
          parse_flags(argv, 1, {"model", "data", "split", "dets-out", "dets", "gt"}), out);
    if (cmd == "report")
      return cmd_report(
          parse_flags(argv, 1, {"baseline", "params", "manifest", "alpha", "delta-ratio", "dp"}),
          out);
    if (cmd == "gradcheck") return cmd_gradcheck(parse_flags(argv, 1, {"seed"}), out);
    if (cmd == "run-all")
      return cmd_run_all(parse_flags(argv, 1, {"out", "config", "seed"}), out);
    throw usage_error("unknown command '" + cmd + "'");
  } catch (const usage_error& e) {
    err << "error: " << e.what() << "\n\n" << kUsage;
    return 1;
  } catch (const numeric_error& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace tensorfact
