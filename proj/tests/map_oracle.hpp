// Brute-force detection-metric oracle shared by the unit and acceptance
// suites. Written independently of the library evaluator: selection sort,
// per-position envelope scans, matching redone from scratch per threshold.
#pragma once

#include <set>
#include <vector>

#include "tensorfact/eval.hpp"

namespace map_oracle {

using tensorfact::Box;
using tensorfact::Detection;
using tensorfact::GroundTruthBox;
using tensorfact::Rng;


inline double oracle_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double areas = (a.x_max - a.x_min) * (a.y_max - a.y_min) +
                       (b.x_max - b.x_min) * (b.y_max - b.y_min);
  if (areas - inter <= 0) return 0.0;
  return inter / (areas - inter);
}

// Brute-force evaluator, written independently: selection-sort instead of
// std::stable_sort, per-position envelope scans instead of a running max,
// matching recomputed from scratch for every threshold.
inline double oracle_mean_ap(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                      const std::vector<double>& thresholds) {
  std::set<int> class_set;
  for (const auto& g : gts) class_set.insert(g.class_id);
  std::vector<int> classes(class_set.begin(), class_set.end());

  double threshold_sum = 0;
  for (double thr : thresholds) {
    double ap_sum = 0;
    for (int cls : classes) {
      std::vector<Detection> dc;
      std::vector<GroundTruthBox> gc;
      for (const auto& d : dets)
        if (d.class_id == cls) dc.push_back(d);
      for (const auto& g : gts)
        if (g.class_id == cls) gc.push_back(g);

      // selection sort, stable on ties
      std::vector<size_t> order;
      std::vector<char> used(dc.size(), 0);
      for (size_t round = 0; round < dc.size(); ++round) {
        size_t best = dc.size();
        for (size_t i = 0; i < dc.size(); ++i) {
          if (used[i]) continue;
          if (best == dc.size() || dc[i].confidence > dc[best].confidence) best = i;
        }
        used[best] = 1;
        order.push_back(best);
      }

      std::vector<char> gt_taken(gc.size(), 0);
      std::vector<char> tp;
      for (size_t oi : order) {
        double best_iou = 0;
        size_t best_g = gc.size();
        for (size_t g = 0; g < gc.size(); ++g) {
          if (gt_taken[g] || gc[g].image_id != dc[oi].image_id) continue;
          const double v = oracle_iou(dc[oi].box, gc[g].box);
          if (v >= thr && v > best_iou) {
            best_iou = v;
            best_g = g;
          }
        }
        if (best_g < gc.size()) {
          gt_taken[best_g] = 1;
          tp.push_back(1);
        } else {
          tp.push_back(0);
        }
      }

      std::vector<double> recalls, precisions;
      size_t cum_tp = 0, cum_fp = 0;
      for (char label : tp) {
        if (label)
          cum_tp += 1;
        else
          cum_fp += 1;
        recalls.push_back(double(cum_tp) / double(gc.size()));
        precisions.push_back(double(cum_tp) / double(cum_tp + cum_fp));
      }
      double ap = 0, prev = 0;
      for (size_t i = 0; i < recalls.size(); ++i) {
        double envelope = 0;
        for (size_t j = i; j < precisions.size(); ++j)
          envelope = std::max(envelope, precisions[j]);
        ap += (recalls[i] - prev) * envelope;
        prev = recalls[i];
      }
      ap_sum += ap;
    }
    threshold_sum += ap_sum / double(classes.size());
  }
  return threshold_sum / double(thresholds.size());
}

inline std::pair<std::vector<Detection>, std::vector<GroundTruthBox>> random_instance(Rng& rng) {
  std::vector<Detection> dets;
  std::vector<GroundTruthBox> gts;
  const int images = 1 + (int)rng.below(10);
  const int classes = 1 + (int)rng.below(3);
  for (int img = 0; img < images; ++img) {
    const int n_gt = (int)rng.below(6);
    for (int i = 0; i < n_gt; ++i) {
      GroundTruthBox g;
      g.image_id = img;
      g.class_id = (int)rng.below(classes);
      g.box.x_min = rng.uniform(0, 80);
      g.box.y_min = rng.uniform(0, 80);
      g.box.x_max = g.box.x_min + rng.uniform(4, 40);
      g.box.y_max = g.box.y_min + rng.uniform(4, 40);
      gts.push_back(g);
      // often emit a detection near this box
      if (rng.unit() < 0.8) {
        Detection d;
        d.image_id = img;
        d.class_id = rng.unit() < 0.85 ? g.class_id : (int)rng.below(classes);
        const double jitter = rng.uniform(0, 12);
        d.box.x_min = g.box.x_min + rng.uniform(-jitter, jitter);
        d.box.y_min = g.box.y_min + rng.uniform(-jitter, jitter);
        d.box.x_max = g.box.x_max + rng.uniform(-jitter, jitter);
        d.box.y_max = std::max(d.box.y_min, g.box.y_max + rng.uniform(-jitter, jitter));
        if (d.box.x_max < d.box.x_min) std::swap(d.box.x_min, d.box.x_max);
        d.confidence = rng.below(2) ? rng.uniform(0, 1) : 0.5;  // frequent ties
        dets.push_back(d);
      }
    }
    const int n_fp = (int)rng.below(3);
    for (int i = 0; i < n_fp; ++i) {
      Detection d;
      d.image_id = img;
      d.class_id = (int)rng.below(classes);
      d.box.x_min = rng.uniform(0, 100);
      d.box.y_min = rng.uniform(0, 100);
      d.box.x_max = d.box.x_min + rng.uniform(2, 30);
      d.box.y_max = d.box.y_min + rng.uniform(2, 30);
      d.confidence = rng.unit();
      dets.push_back(d);
    }
  }
  if (gts.empty()) {
    GroundTruthBox g;
    g.image_id = 0;
    g.class_id = 0;
    g.box = {0, 0, 10, 10};
    gts.push_back(g);
  }
  return {dets, gts};
}

}  // namespace map_oracle
