#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tensorfact/config.hpp"
#include "tensorfact/data.hpp"
#include "tensorfact/eval.hpp"
#include "tensorfact/layer.hpp"
#include "tensorfact/model.hpp"
#include "tensorfact/train.hpp"

namespace tensorfact {

// One conv layer shape from an architecture manifest (lines "T S D2 D1").
struct LayerShape {
  size_t t = 0, s = 0, d2 = 0, d1 = 0;
};

inline std::vector<LayerShape> parse_manifest_text(const std::string& text) {
  std::vector<LayerShape> shapes;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    lineno += 1;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    LayerShape sh;
    if (!(ls >> sh.t)) continue;  // blank/comment line
    if (!(ls >> sh.s >> sh.d2 >> sh.d1) || sh.t == 0 || sh.s == 0 || sh.d2 == 0 || sh.d1 == 0)
      throw parse_error("manifest line " + std::to_string(lineno) +
                        ": expected four positive counts T S D2 D1");
  shapes.push_back(sh);
  }
  if (shapes.empty()) throw parse_error("manifest: no layer shapes");
  return shapes;
}

inline std::vector<LayerShape> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw parse_error("manifest: cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_manifest_text(buf.str());
}

inline uint64_t manifest_dense_params(const std::vector<LayerShape>& shapes) {
  uint64_t total = 0;
  for (const auto& sh : shapes) total += (uint64_t)sh.t * sh.s * sh.d2 * sh.d1;
  return total;
}

inline uint64_t manifest_factored_params(const std::vector<LayerShape>& shapes, double alpha) {
  uint64_t total = 0;
  for (const auto& sh : shapes) {
    const uint64_t r = rank_for_alpha(sh.t, sh.s, sh.d2, sh.d1, alpha);
    total += r * ((uint64_t)sh.t * sh.s + (uint64_t)sh.d2 * sh.d1);
  }
  return total;
}

inline uint64_t manifest_delta_params(const std::vector<LayerShape>& shapes, double alpha,
                                      double delta_ratio) {
  uint64_t total = 0;
  for (const auto& sh : shapes) {
    const uint64_t r = rank_for_alpha(sh.t, sh.s, sh.d2, sh.d1, alpha);
    const uint64_t dr = std::max<uint64_t>(
        1, (uint64_t)std::floor(delta_ratio * static_cast<double>(r)));
    total += dr * ((uint64_t)sh.t * sh.s + (uint64_t)sh.d2 * sh.d1);
  }
  return total;
}

namespace detail {

// Exact half-up rounding of (diff / baseline * 100) to `decimals` places,
// done in integers so display never drifts from the rational value.
inline std::string percent_string(uint64_t diff, uint64_t baseline, int decimals) {
  uint64_t pow10 = 1;
  for (int i = 0; i < decimals; ++i) pow10 *= 10;
  const uint64_t num = diff * 100u * pow10;
  const uint64_t scaled = (2 * num + baseline) / (2 * baseline);  // floor(num/base + 1/2)
  char buf[48];
  if (decimals == 0) {
    std::snprintf(buf, sizeof buf, "%llu", (unsigned long long)scaled);
  } else {
    std::snprintf(buf, sizeof buf, "%llu.%0*llu", (unsigned long long)(scaled / pow10), decimals,
                  (unsigned long long)(scaled % pow10));
  }
  return buf;
}

}  // namespace detail

// Compression relative to a baseline parameter count, exact arithmetic.
// pct4 is the 4-decimal display; pct2 rounds a 3-decimal intermediate to
// 2 decimals (half-up both times), matching the published tables this
// report format follows.
struct CompressionRow {
  uint64_t params = 0;
  uint64_t baseline = 0;

  double value() const {
    return (1.0 - static_cast<double>(params) / static_cast<double>(baseline)) * 100.0;
  }
  std::string pct(int decimals) const {
    const bool negative = params > baseline;
    const uint64_t diff = negative ? params - baseline : baseline - params;
    std::string s = detail::percent_string(diff, baseline, decimals);
    return negative ? "-" + s : s;
  }
  std::string pct4() const { return pct(4); }
  std::string pct2() const {
    const bool negative = params > baseline;
    const uint64_t diff = negative ? params - baseline : baseline - params;
    uint64_t milli = 0;
    {
      const uint64_t num = diff * 100u * 1000u;
      milli = (2 * num + baseline) / (2 * baseline);
    }
    const uint64_t centi = (milli + 5) / 10;  // half-up at the dropped digit
    char buf[48];
    std::snprintf(buf, sizeof buf, "%llu.%02llu", (unsigned long long)(centi / 100),
                  (unsigned long long)(centi % 100));
    return negative ? std::string("-") + buf : std::string(buf);
  }
};

inline CompressionRow compression_report(uint64_t params, uint64_t baseline) {
  if (baseline == 0) throw argument_error("compression_report: baseline must be positive");
  return CompressionRow{params, baseline};
}

struct EvalMetrics {
  double map50 = 0;
  double map50_95 = 0;
  std::map<int, double> class_ap50;
};

struct ModelReport {
  std::string name;
  uint64_t total_params = 0;
  uint64_t trainable_params = 0;
  std::string compression_pct;  // vs the dense twin
  EvalMetrics metrics;
};

struct ExperimentReport {
  ModelReport frozen;
  ModelReport augmented;
  uint64_t dense_params = 0;
  uint64_t seed = 0;
  std::string config_hash;
};

struct RunSizes {
  size_t a_train = 800;
  size_t a_val = 60;
  size_t b_train = 5000;  // pool; train_frac_b of it is used for phase 2
  size_t b_val = 200;
  size_t b_val_phase2 = 40;  // scheduler validation, held out of the pool
};

template <typename S>
struct ExperimentData {
  PreparedData<S> a_train, a_val;
  PreparedData<S> b_train, b_sched_val, b_eval;
  std::vector<GroundTruthBox> b_eval_gt;
};

inline SyntheticSceneSpec scene_spec_for(const TrainConfig& cfg, Modality m) {
  SyntheticSceneSpec spec;
  spec.canvas = cfg.canvas;
  spec.classes = cfg.classes;
  spec.modality = m;
  return spec;
}

// Select the phase-2 subset (and its scheduler validation split) from the
// modality-B pool by a seeded shuffle of the pool indices.
inline void select_b_indices(const TrainConfig& cfg, size_t pool, size_t n_sched_val,
                             std::vector<size_t>& train_ids, std::vector<size_t>& val_ids) {
  std::vector<size_t> ids(pool);
  for (size_t i = 0; i < pool; ++i) ids[i] = i;
  Rng rng(derive_seed(cfg.seed, 0x5E1EC7, 0));
  for (size_t i = pool; i > 1; --i)
    std::swap(ids[i - 1], ids[static_cast<size_t>(rng.below((int64_t)i))]);
  const size_t n_train = std::max<size_t>(
      1, static_cast<size_t>(std::llround(cfg.train_frac_b * static_cast<double>(pool))));
  if (n_train + n_sched_val > pool)
    throw argument_error("select_b_indices: pool too small for the requested splits");
  train_ids.assign(ids.begin(), ids.begin() + (long)n_train);
  val_ids.assign(ids.begin() + (long)n_train, ids.begin() + (long)(n_train + n_sched_val));
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(val_ids.begin(), val_ids.end());
}

template <typename S>
ExperimentData<S> build_experiment_data(const TrainConfig& cfg, const RunSizes& sizes) {
  ExperimentData<S> data;
  const SyntheticSceneSpec spec_a = scene_spec_for(cfg, Modality::A);
  const SyntheticSceneSpec spec_b = scene_spec_for(cfg, Modality::B);
  data.a_train =
      prepare_data<S>(generate_dataset(spec_a, sizes.a_train, derive_seed(cfg.seed, 1, 0)),
                      cfg.canvas);
  data.a_val = prepare_data<S>(
      generate_dataset(spec_a, sizes.a_val, derive_seed(cfg.seed, 2, 0)), cfg.canvas);

  std::vector<size_t> train_ids, val_ids;
  select_b_indices(cfg, sizes.b_train, sizes.b_val_phase2, train_ids, val_ids);
  const uint64_t b_seed = derive_seed(cfg.seed, 3, 0);
  std::vector<Sample> b_train_samples, b_val_samples;
  for (size_t id : train_ids) b_train_samples.push_back(generate_sample(spec_b, b_seed, id));
  for (size_t id : val_ids) b_val_samples.push_back(generate_sample(spec_b, b_seed, id));
  data.b_train = prepare_data<S>(std::move(b_train_samples), cfg.canvas);
  data.b_sched_val = prepare_data<S>(std::move(b_val_samples), cfg.canvas);

  data.b_eval = prepare_data<S>(
      generate_dataset(spec_b, sizes.b_val, derive_seed(cfg.seed, 4, 0)), cfg.canvas);
  data.b_eval_gt = dataset_ground_truth(data.b_eval.samples, (double)cfg.canvas);
  return data;
}

template <typename S>
std::vector<Detection> run_detector(const ToyDetector<S>& model, const PreparedData<S>& data,
                                    size_t chunk = 16) {
  std::vector<Detection> dets;
  for (size_t start = 0; start < data.samples.size(); start += chunk) {
    const size_t count = std::min(chunk, data.samples.size() - start);
    std::vector<size_t> idx(count);
    for (size_t i = 0; i < count; ++i) idx[i] = start + i;
    Tensor4<S> x = batch_tensor<S>(data.samples, idx);
    Tensor4<S> raw = predict_raw(model, x);
    auto batch_dets =
        decode_detections(raw, model.classes, (double)data.canvas, (int)start);
    dets.insert(dets.end(), batch_dets.begin(), batch_dets.end());
  }
  return dets;
}

template <typename S>
EvalMetrics evaluate_model(const ToyDetector<S>& model, const PreparedData<S>& data,
                           const std::vector<GroundTruthBox>& gt) {
  EvalMetrics m;
  std::vector<Detection> dets = run_detector(model, data);
  m.map50 = mean_ap(dets, gt, {0.5});
  m.map50_95 = mean_ap(dets, gt, coco_thresholds());
  m.class_ap50 = per_class_ap(dets, gt, 0.5);
  return m;
}

inline std::string format_report_text(const ExperimentReport& r) {
  std::ostringstream os;
  char buf[256];
  os << "experiment report\n";
  os << "seed " << r.seed << "  config " << r.config_hash << "\n";
  os << "dense-equivalent parameters: " << r.dense_params << "\n\n";
  std::snprintf(buf, sizeof buf, "%-22s %12s %12s %14s %8s %10s\n", "model", "params",
                "trainable", "compression(%)", "mAP50", "mAP50-95");
  os << buf;
  for (const ModelReport* mr : {&r.frozen, &r.augmented}) {
    std::snprintf(buf, sizeof buf, "%-22s %12llu %12llu %14s %8.4f %10.4f\n", mr->name.c_str(),
                  (unsigned long long)mr->total_params, (unsigned long long)mr->trainable_params,
                  mr->compression_pct.c_str(), mr->metrics.map50, mr->metrics.map50_95);
    os << buf;
  }
  os << "\nper-class AP50\n";
  for (const ModelReport* mr : {&r.frozen, &r.augmented}) {
    os << "  " << mr->name << ":";
    for (const auto& [cls, ap] : mr->metrics.class_ap50) {
      std::snprintf(buf, sizeof buf, " class%d=%.4f", cls, ap);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

inline std::string format_report_kv(const ExperimentReport& r) {
  std::ostringstream os;
  char buf[160];
  os << "seed = " << r.seed << "\n";
  os << "config_hash = " << r.config_hash << "\n";
  os << "dense_params = " << r.dense_params << "\n";
  for (const ModelReport* mr : {&r.frozen, &r.augmented}) {
    const std::string p = mr->name;
    os << p << "_total_params = " << mr->total_params << "\n";
    os << p << "_trainable_params = " << mr->trainable_params << "\n";
    os << p << "_compression_pct = " << mr->compression_pct << "\n";
    std::snprintf(buf, sizeof buf, "%s_map50 = %.6f\n", p.c_str(), mr->metrics.map50);
    os << buf;
    std::snprintf(buf, sizeof buf, "%s_map50_95 = %.6f\n", p.c_str(), mr->metrics.map50_95);
    os << buf;
    for (const auto& [cls, ap] : mr->metrics.class_ap50) {
      std::snprintf(buf, sizeof buf, "%s_ap50_class%d = %.6f\n", p.c_str(), cls, ap);
      os << buf;
    }
  }
  return os.str();
}

struct ExperimentArtifacts {
  ExperimentReport report;
  ToyDetector<float> frozen_model;
  ToyDetector<float> augmented_model;
  std::vector<EpochStat> history_phase1;
  std::vector<EpochStat> history_phase2;
  std::vector<Detection> dets_frozen;
  std::vector<Detection> dets_augmented;
};

template <typename S>
ModelReport describe_model(const std::string& name, const ToyDetector<S>& model,
                           bool phase2_trainables, const EvalMetrics& metrics,
                           bool head_trainable) {
  ModelReport mr;
  mr.name = name;
  mr.total_params = total_params(model);
  mr.trainable_params =
      phase2_trainables ? trainable_params(model, head_trainable) : total_params(model);
  mr.compression_pct =
      compression_report(mr.total_params, dense_equivalent_params(model)).pct4();
  mr.metrics = metrics;
  return mr;
}

// The full protocol: generate both modalities, train phase 1 on modality A,
// augment, train phase 2 on the scarce modality-B subset, evaluate both the
// frozen phase-1 model and the adapted model on modality-B validation.
inline ExperimentArtifacts run_experiment(const TrainConfig& cfg,
                                          const RunSizes& sizes = RunSizes{}) {
  ExperimentArtifacts art;
  ExperimentData<float> data = build_experiment_data<float>(cfg, sizes);

  ToyDetectorConfig mcfg;
  mcfg.classes = cfg.classes;
  mcfg.alpha = cfg.alpha;
  mcfg.seed = derive_seed(cfg.seed, 6, 0);
  ToyDetector<float> model = build_toy_detector<float>(mcfg);

  TrainResult<float> r1 = train_phase1(model, data.a_train, data.a_val, cfg);
  art.history_phase1 = r1.history;
  art.frozen_model = model;

  EvalMetrics frozen_metrics = evaluate_model(model, data.b_eval, data.b_eval_gt);
  art.dets_frozen = run_detector(model, data.b_eval);

  augment_model(model, cfg.delta_ratio, derive_seed(cfg.seed, 7, 0));
  TrainResult<float> r2 = train_phase2(model, data.b_train, data.b_sched_val, cfg);
  art.history_phase2 = r2.history;
  art.augmented_model = model;

  EvalMetrics aug_metrics = evaluate_model(model, data.b_eval, data.b_eval_gt);
  art.dets_augmented = run_detector(model, data.b_eval);

  art.report.frozen =
      describe_model("phase1_frozen", art.frozen_model, false, frozen_metrics, true);
  art.report.augmented = describe_model("augmented", art.augmented_model, true, aug_metrics,
                                        cfg.train_head_phase2);
  art.report.dense_params = dense_equivalent_params(art.augmented_model);
  art.report.seed = cfg.seed;
  art.report.config_hash = config_hash(cfg);
  return art;
}

inline void write_experiment_outputs(const std::string& dir, const TrainConfig& cfg,
                                     const ExperimentArtifacts& art) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os((fs::path(dir) / "config.cfg").string());
    os << serialize_config(cfg);
  }
  write_history((fs::path(dir) / "history_phase1.log").string(), art.history_phase1);
  write_history((fs::path(dir) / "history_phase2.log").string(), art.history_phase2);
  {
    std::ofstream os((fs::path(dir) / "detections_frozen.txt").string());
    write_detection_lines(os, art.dets_frozen);
  }
  {
    std::ofstream os((fs::path(dir) / "detections_augmented.txt").string());
    write_detection_lines(os, art.dets_augmented);
  }
  {
    std::ofstream os((fs::path(dir) / "report.txt").string());
    os << format_report_text(art.report);
  }
  {
    std::ofstream os((fs::path(dir) / "report.kv").string());
    os << format_report_kv(art.report);
  }
}

}  // namespace tensorfact
