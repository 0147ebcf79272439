#pragma once

#include <cmath>
#include <vector>

#include "tensorfact/common.hpp"
#include "tensorfact/tensor.hpp"

namespace tensorfact {

// One ground-truth object assigned to a head cell. Offsets tx,ty locate the
// box center inside the cell in [0,1); tw,th are width/height normalized by
// the canvas.
template <typename S>
struct CellTarget {
  size_t gy = 0, gx = 0;
  int class_id = 0;
  S tx = 0, ty = 0, tw = 0, th = 0;
};

// Normalized annotation record (YOLO-style): center + size in [0,1].
struct NormBox {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;
};

// Assign boxes to cells by center location. When two boxes land in the same
// cell the first one stays.
template <typename S>
std::vector<CellTarget<S>> cell_targets(const std::vector<NormBox>& boxes, size_t grid_h,
                                        size_t grid_w) {
  std::vector<CellTarget<S>> out;
  std::vector<char> taken(grid_h * grid_w, 0);
  for (const NormBox& b : boxes) {
    const double fy = b.cy * static_cast<double>(grid_h);
    const double fx = b.cx * static_cast<double>(grid_w);
    size_t gy = std::min(grid_h - 1, static_cast<size_t>(std::max(0.0, fy)));
    size_t gx = std::min(grid_w - 1, static_cast<size_t>(std::max(0.0, fx)));
    if (taken[gy * grid_w + gx]) continue;
    taken[gy * grid_w + gx] = 1;
    CellTarget<S> t;
    t.gy = gy;
    t.gx = gx;
    t.class_id = b.class_id;
    t.tx = static_cast<S>(fx - static_cast<double>(gx));
    t.ty = static_cast<S>(fy - static_cast<double>(gy));
    t.tw = static_cast<S>(b.w);
    t.th = static_cast<S>(b.h);
    out.push_back(t);
  }
  return out;
}

struct LossParts {
  double objectness = 0;
  double classification = 0;
  double box = 0;
  double total() const { return objectness + classification + box; }
};

// Head channel layout: 0 objectness, 1..C class scores, C+1..C+4 box.
template <typename S>
size_t head_channels(size_t classes) {
  return 5 + classes;
}

// Map raw head outputs to probability space: sigmoid on objectness, softmax
// over the class block, box offsets pass through.
template <typename S>
Tensor4<S> head_probabilities(const Tensor4<S>& raw, size_t classes) {
  if (raw.dims[1] != 5 + classes) throw shape_error("head_probabilities: channel count");
  Tensor4<S> p = raw;
  const size_t n = raw.dims[0], gh = raw.dims[2], gw = raw.dims[3];
  for (size_t in = 0; in < n; ++in)
    for (size_t y = 0; y < gh; ++y)
      for (size_t x = 0; x < gw; ++x) {
        const double zo = static_cast<double>(raw.at(in, 0, y, x));
        p.at(in, 0, y, x) = static_cast<S>(1.0 / (1.0 + std::exp(-zo)));
        double zmax = -1e300;
        for (size_t c = 0; c < classes; ++c)
          zmax = std::max(zmax, static_cast<double>(raw.at(in, 1 + c, y, x)));
        double denom = 0;
        for (size_t c = 0; c < classes; ++c)
          denom += std::exp(static_cast<double>(raw.at(in, 1 + c, y, x)) - zmax);
        for (size_t c = 0; c < classes; ++c)
          p.at(in, 1 + c, y, x) = static_cast<S>(
              std::exp(static_cast<double>(raw.at(in, 1 + c, y, x)) - zmax) / denom);
      }
  return p;
}

namespace detail {
inline double clamped_log(double p) { return std::log(std::max(p, 1e-12)); }
}

// Detection surrogate loss on probability-space predictions:
//   objectness:     binary cross-entropy, averaged over all cells per image
//   classification: cross-entropy at positive cells, averaged over them
//   box:            squared error on the 4 offsets, averaged per component
// Each image contributes the average over its own support; the batch value
// is the mean over images, so split batches accumulate exactly.
template <typename S>
LossParts detection_task_loss(const Tensor4<S>& probs,
                              const std::vector<std::vector<CellTarget<S>>>& targets,
                              size_t classes) {
  const size_t n = probs.dims[0], gh = probs.dims[2], gw = probs.dims[3];
  if (n == 0) throw argument_error("detection_task_loss: empty batch");
  if (targets.size() != n) throw shape_error("detection_task_loss: target batch mismatch");
  if (probs.dims[1] != 5 + classes) throw shape_error("detection_task_loss: channel count");

  LossParts out;
  for (size_t in = 0; in < n; ++in) {
    std::vector<int> cell_class(gh * gw, -1);
    for (const auto& t : targets[in]) cell_class[t.gy * gw + t.gx] = t.class_id;

    double bce = 0;
    for (size_t y = 0; y < gh; ++y)
      for (size_t x = 0; x < gw; ++x) {
        const double p = static_cast<double>(probs.at(in, 0, y, x));
        const bool pos = cell_class[y * gw + x] >= 0;
        bce += pos ? -detail::clamped_log(p) : -detail::clamped_log(1.0 - p);
      }
    out.objectness += bce / static_cast<double>(gh * gw) / static_cast<double>(n);

    const size_t npos = targets[in].size();
    if (npos == 0) continue;
    double ce = 0, se = 0;
    for (const auto& t : targets[in]) {
      ce += -detail::clamped_log(
          static_cast<double>(probs.at(in, 1 + static_cast<size_t>(t.class_id), t.gy, t.gx)));
      const double d[4] = {
          static_cast<double>(probs.at(in, 1 + classes + 0, t.gy, t.gx)) - (double)t.tx,
          static_cast<double>(probs.at(in, 1 + classes + 1, t.gy, t.gx)) - (double)t.ty,
          static_cast<double>(probs.at(in, 1 + classes + 2, t.gy, t.gx)) - (double)t.tw,
          static_cast<double>(probs.at(in, 1 + classes + 3, t.gy, t.gx)) - (double)t.th};
      for (double v : d) se += v * v;
    }
    out.classification += ce / static_cast<double>(npos) / static_cast<double>(n);
    out.box += se / static_cast<double>(4 * npos) / static_cast<double>(n);
  }
  return out;
}

// Loss value plus gradient with respect to the RAW head outputs (the
// sigmoid/softmax chains collapse to the usual p - y forms).
template <typename S>
LossParts detection_loss_backward(const Tensor4<S>& raw,
                                  const std::vector<std::vector<CellTarget<S>>>& targets,
                                  size_t classes, Tensor4<S>& d_raw) {
  Tensor4<S> probs = head_probabilities(raw, classes);
  LossParts parts = detection_task_loss(probs, targets, classes);

  const size_t n = raw.dims[0], gh = raw.dims[2], gw = raw.dims[3];
  d_raw = Tensor4<S>(n, raw.dims[1], gh, gw);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (size_t in = 0; in < n; ++in) {
    std::vector<int> cell_class(gh * gw, -1);
    for (const auto& t : targets[in]) cell_class[t.gy * gw + t.gx] = t.class_id;

    const double wobj = inv_n / static_cast<double>(gh * gw);
    for (size_t y = 0; y < gh; ++y)
      for (size_t x = 0; x < gw; ++x) {
        const double p = static_cast<double>(probs.at(in, 0, y, x));
        const double target = cell_class[y * gw + x] >= 0 ? 1.0 : 0.0;
        d_raw.at(in, 0, y, x) = static_cast<S>((p - target) * wobj);
      }

    const size_t npos = targets[in].size();
    if (npos == 0) continue;
    const double wcls = inv_n / static_cast<double>(npos);
    const double wbox = inv_n / static_cast<double>(4 * npos);
    for (const auto& t : targets[in]) {
      for (size_t c = 0; c < classes; ++c) {
        const double pc = static_cast<double>(probs.at(in, 1 + c, t.gy, t.gx));
        const double onehot = (static_cast<int>(c) == t.class_id) ? 1.0 : 0.0;
        d_raw.at(in, 1 + c, t.gy, t.gx) += static_cast<S>((pc - onehot) * wcls);
      }
      const S tgt[4] = {t.tx, t.ty, t.tw, t.th};
      for (size_t c = 0; c < 4; ++c) {
        const double pred = static_cast<double>(raw.at(in, 1 + classes + c, t.gy, t.gx));
        d_raw.at(in, 1 + classes + c, t.gy, t.gx) +=
            static_cast<S>(2.0 * (pred - (double)tgt[c]) * wbox);
      }
    }
  }
  return parts;
}

// L_c = -|| K*X - deltaK*X ||_p. Pushes the two branch activations apart;
// always <= 0, and 0 exactly when the branches coincide on the input.
template <typename S>
double complementarity_loss(const Tensor4<S>& k, const Tensor4<S>& dk, const Tensor4<S>& x,
                            const ConvGeometry& geom, int p) {
  if (p != 1 && p != 2) throw argument_error("complementarity_loss: p must be 1 or 2");
  Tensor4<S> diff = conv2d(k, x, geom);
  Tensor4<S> zd = conv2d(dk, x, geom);
  for (size_t i = 0; i < diff.size(); ++i) diff.data[i] -= zd.data[i];
  return -p_norm(diff, p);
}

// Batched form used in training: one norm per image, averaged over the
// batch, so gradient accumulation over split batches is exact. Each
// per-image norm is normalized to activation scale (element mean for p=1,
// root-mean-square for p=2) so the weighted term stays in a comparable
// range with the detection loss at any canvas size.
// Returns the value; when grad != nullptr it receives d(value)/d(diff).
template <typename S>
double batch_complementarity(const Tensor4<S>& diff, int p, Tensor4<S>* grad = nullptr) {
  if (p != 1 && p != 2) throw argument_error("batch_complementarity: p must be 1 or 2");
  const size_t n = diff.dims[0];
  const size_t per = diff.size() / n;
  const double unit = p == 1 ? static_cast<double>(per) : std::sqrt(static_cast<double>(per));
  if (grad) *grad = Tensor4<S>(diff.dims[0], diff.dims[1], diff.dims[2], diff.dims[3]);
  double value = 0;
  for (size_t in = 0; in < n; ++in) {
    const S* d = &diff.data[in * per];
    double norm = 0;
    if (p == 1) {
      for (size_t i = 0; i < per; ++i) norm += std::abs(static_cast<double>(d[i]));
    } else {
      for (size_t i = 0; i < per; ++i)
        norm += static_cast<double>(d[i]) * static_cast<double>(d[i]);
      norm = std::sqrt(norm);
    }
    value -= norm / unit / static_cast<double>(n);
    if (grad) {
      S* g = &grad->data[in * per];
      if (p == 1) {
        const double w = -1.0 / (unit * static_cast<double>(n));
        for (size_t i = 0; i < per; ++i)
          g[i] = static_cast<S>(d[i] > S(0) ? w : (d[i] < S(0) ? -w : 0.0));
      } else if (norm > 0) {
        const double scale = -1.0 / (norm * unit * static_cast<double>(n));
        for (size_t i = 0; i < per; ++i) g[i] = static_cast<S>((double)d[i] * scale);
      }
    }
  }
  return value;
}

// L_f = L_d + omega_c * L_c
inline double total_loss(double l_d, double l_c, double omega_c) {
  if (!std::isfinite(l_d) || !std::isfinite(l_c)) throw numeric_error("total_loss: non-finite");
  return l_d + omega_c * l_c;
}

}  // namespace tensorfact
