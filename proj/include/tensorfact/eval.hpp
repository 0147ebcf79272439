#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "tensorfact/common.hpp"

namespace tensorfact {

struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  double area() const { return std::max(0.0, x_max - x_min) * std::max(0.0, y_max - y_min); }
};

struct Detection {
  int image_id = 0;
  int class_id = 0;
  Box box;
  double confidence = 0;
};

struct GroundTruthBox {
  int image_id = 0;
  int class_id = 0;
  Box box;
};

inline double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = std::max(0.0, ix) * std::max(0.0, iy);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return inter / uni;
}

// Detections of one class labeled TP/FP in confidence order.
struct MatchedDetections {
  std::vector<double> confidence;  // sorted non-increasing
  std::vector<char> is_tp;
  size_t false_negatives = 0;
  size_t total_gt = 0;
};

// Greedy matching: walk detections by descending confidence (ties keep
// input order); each detection grabs the unmatched same-image ground truth
// with the highest IoU if that IoU reaches the threshold.
inline MatchedDetections match_detections(const std::vector<Detection>& dets,
                                          const std::vector<GroundTruthBox>& gts,
                                          double iou_threshold) {
  std::vector<size_t> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });

  MatchedDetections out;
  out.total_gt = gts.size();
  std::vector<char> gt_used(gts.size(), 0);
  for (size_t idx : order) {
    const Detection& d = dets[idx];
    double best_iou = 0;
    size_t best_gt = gts.size();
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || gts[g].image_id != d.image_id) continue;
      const double v = iou(d.box, gts[g].box);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best_gt = g;
      }
    }
    out.confidence.push_back(d.confidence);
    if (best_gt < gts.size()) {
      gt_used[best_gt] = 1;
      out.is_tp.push_back(1);
    } else {
      out.is_tp.push_back(0);
    }
  }
  for (char used : gt_used)
    if (!used) out.false_negatives += 1;
  return out;
}

// Cumulative (recall, precision) points over the confidence-sorted labels.
inline std::vector<std::pair<double, double>> pr_curve(const MatchedDetections& matched) {
  std::vector<std::pair<double, double>> curve;
  if (matched.total_gt == 0) return curve;
  size_t tp = 0, fp = 0;
  for (char label : matched.is_tp) {
    if (label)
      tp += 1;
    else
      fp += 1;
    curve.emplace_back(static_cast<double>(tp) / static_cast<double>(matched.total_gt),
                       static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  return curve;
}

// Area under the PR curve with all-point interpolation: the precision
// envelope is made non-increasing from the right, then integrated over the
// recall steps.
inline double average_precision(const std::vector<std::pair<double, double>>& curve) {
  if (curve.empty()) return 0.0;
  std::vector<double> envelope(curve.size());
  double running = 0;
  for (size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].second);
    envelope[i] = running;
  }
  double ap = 0, prev_recall = 0;
  for (size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].first - prev_recall) * envelope[i];
    prev_recall = curve[i].first;
  }
  return ap;
}

inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 50; i <= 95; i += 5) t.push_back(static_cast<double>(i) / 100.0);
  return t;
}

inline double ap_for_class(const std::vector<Detection>& dets,
                           const std::vector<GroundTruthBox>& gts, double threshold) {
  return average_precision(pr_curve(match_detections(dets, gts, threshold)));
}

// Mean over classes that have ground truth, then mean over thresholds.
// Detections of classes without any ground truth are ignored.
inline double mean_ap(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                      const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw argument_error("mean_ap: no thresholds");
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  if (classes.empty()) throw argument_error("mean_ap: no classes with ground truth");

  std::map<int, std::vector<Detection>> dets_by_class;
  std::map<int, std::vector<GroundTruthBox>> gts_by_class;
  for (const auto& d : dets)
    if (classes.count(d.class_id)) dets_by_class[d.class_id].push_back(d);
  for (const auto& g : gts) gts_by_class[g.class_id].push_back(g);

  double sum_over_thresholds = 0;
  for (double thr : thresholds) {
    double sum_ap = 0;
    for (int c : classes) sum_ap += ap_for_class(dets_by_class[c], gts_by_class[c], thr);
    sum_over_thresholds += sum_ap / static_cast<double>(classes.size());
  }
  return sum_over_thresholds / static_cast<double>(thresholds.size());
}

// Per-class AP at one threshold, keyed by class id (classes with GT only).
inline std::map<int, double> per_class_ap(const std::vector<Detection>& dets,
                                          const std::vector<GroundTruthBox>& gts,
                                          double threshold) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  std::map<int, double> out;
  for (int c : classes) {
    std::vector<Detection> dc;
    std::vector<GroundTruthBox> gc;
    for (const auto& d : dets)
      if (d.class_id == c) dc.push_back(d);
    for (const auto& g : gts)
      if (g.class_id == c) gc.push_back(g);
    out[c] = ap_for_class(dc, gc, threshold);
  }
  return out;
}

// K-Means++ over (w, h) box sizes: seeded spread-out initialization, then
// Lloyd iterations until centroids move less than 1e-6 (or 100 rounds).
// Output sorted by area ascending. Deterministic given the seed.
inline std::vector<std::pair<double, double>> kmeanspp_anchors(
    const std::vector<std::pair<double, double>>& sizes, size_t k, uint64_t seed) {
  if (sizes.size() < k || k == 0)
    throw argument_error("kmeanspp_anchors: need at least k boxes");
  Rng rng(seed);
  auto dist2 = [](const std::pair<double, double>& a, const std::pair<double, double>& b) {
    const double dw = a.first - b.first, dh = a.second - b.second;
    return dw * dw + dh * dh;
  };

  std::vector<std::pair<double, double>> centroids;
  centroids.push_back(sizes[static_cast<size_t>(rng.below(sizes.size()))]);
  std::vector<double> d2(sizes.size());
  while (centroids.size() < k) {
    double total = 0;
    for (size_t i = 0; i < sizes.size(); ++i) {
      double best = dist2(sizes[i], centroids[0]);
      for (size_t c = 1; c < centroids.size(); ++c)
        best = std::min(best, dist2(sizes[i], centroids[c]));
      d2[i] = best;
      total += best;
    }
    if (total <= 0) {
      centroids.push_back(sizes[static_cast<size_t>(rng.below(sizes.size()))]);
      continue;
    }
    double u = rng.unit() * total;
    size_t pick = sizes.size() - 1;
    double acc = 0;
    for (size_t i = 0; i < sizes.size(); ++i) {
      acc += d2[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    centroids.push_back(sizes[pick]);
  }

  std::vector<size_t> assign(sizes.size(), 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (size_t i = 0; i < sizes.size(); ++i) {
      size_t best = 0;
      double bestd = dist2(sizes[i], centroids[0]);
      for (size_t c = 1; c < k; ++c) {
        const double d = dist2(sizes[i], centroids[c]);
        if (d < bestd) {
          bestd = d;
          best = c;
        }
      }
      assign[i] = best;
    }
    double moved = 0;
    for (size_t c = 0; c < k; ++c) {
      double sw = 0, sh = 0;
      size_t count = 0;
      for (size_t i = 0; i < sizes.size(); ++i)
        if (assign[i] == c) {
          sw += sizes[i].first;
          sh += sizes[i].second;
          count += 1;
        }
      if (count == 0) continue;  // empty cluster keeps its centroid
      std::pair<double, double> next{sw / count, sh / count};
      moved = std::max(moved, std::sqrt(dist2(next, centroids[c])));
      centroids[c] = next;
    }
    if (moved < 1e-6) break;
  }

  std::stable_sort(centroids.begin(), centroids.end(),
                   [](const auto& a, const auto& b) { return a.first * a.second < b.first * b.second; });
  return centroids;
}

// Text interchange: `image_id class_id x_min y_min x_max y_max [confidence]`,
// confidence present only on detection lines.
inline void write_detection_lines(std::ostream& os, const std::vector<Detection>& dets) {
  char buf[256];
  for (const auto& d : dets) {
    std::snprintf(buf, sizeof buf, "%d %d %.6f %.6f %.6f %.6f %.6f\n", d.image_id, d.class_id,
                  d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max, d.confidence);
    os << buf;
  }
}

inline void write_groundtruth_lines(std::ostream& os, const std::vector<GroundTruthBox>& gts) {
  char buf[256];
  for (const auto& g : gts) {
    std::snprintf(buf, sizeof buf, "%d %d %.6f %.6f %.6f %.6f\n", g.image_id, g.class_id,
                  g.box.x_min, g.box.y_min, g.box.x_max, g.box.y_max);
    os << buf;
  }
}

inline std::vector<Detection> read_detection_lines(std::istream& is) {
  std::vector<Detection> out;
  Detection d;
  while (is >> d.image_id >> d.class_id >> d.box.x_min >> d.box.y_min >> d.box.x_max >>
         d.box.y_max >> d.confidence)
    out.push_back(d);
  return out;
}

inline std::vector<GroundTruthBox> read_groundtruth_lines(std::istream& is) {
  std::vector<GroundTruthBox> out;
  GroundTruthBox g;
  while (is >> g.image_id >> g.class_id >> g.box.x_min >> g.box.y_min >> g.box.x_max >>
         g.box.y_max)
    out.push_back(g);
  return out;
}

}  // namespace tensorfact
