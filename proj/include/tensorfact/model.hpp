#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensorfact/common.hpp"
#include "tensorfact/eval.hpp"
#include "tensorfact/layer.hpp"
#include "tensorfact/losses.hpp"
#include "tensorfact/optim.hpp"
#include "tensorfact/tensor.hpp"

namespace tensorfact {

template <typename S>
struct DenseConv {
  Tensor4<S> kernel;
  std::vector<S> bias;
  ConvGeometry geom{1, 0};
};

// Factorized conv stack with a leaky-rectifier nonlinearity (slope 0.1)
// after every layer, followed by a dense 1x1 head that emits per-cell
// (objectness, C class scores, 4 box offsets).
template <typename S>
struct ToyDetector {
  std::vector<FactorizedConvLayer<S>> layers;
  DenseConv<S> head;
  size_t classes = 3;
  double alpha = 0.5;
};

template <typename S>
constexpr S leaky_slope() {
  return static_cast<S>(0.1);
}

struct ToyDetectorConfig {
  std::vector<size_t> channels{1, 16, 32, 64, 64, 64, 64};
  std::vector<size_t> downsample{0, 1, 2};  // layer indices with stride 2
  size_t kernel = 3;
  size_t classes = 3;
  double alpha = 0.5;
  uint64_t seed = 1;
};

// Glorot-uniform dense kernels, one per conv layer; the factorized layers
// are SVD-initialized from these. Exposed so tests can build the matching
// dense twin from the same kernels.
template <typename S>
std::vector<Tensor4<S>> dense_init_kernels(const ToyDetectorConfig& cfg) {
  std::vector<Tensor4<S>> kernels;
  for (size_t l = 0; l + 1 < cfg.channels.size(); ++l) {
    const size_t t = cfg.channels[l + 1], s = cfg.channels[l];
    Rng rng(derive_seed(cfg.seed, 100 + l, 0));
    const double lim =
        std::sqrt(6.0 / static_cast<double>((s + t) * cfg.kernel * cfg.kernel));
    Tensor4<S> k(t, s, cfg.kernel, cfg.kernel);
    for (auto& v : k.data) v = static_cast<S>(rng.uniform(-lim, lim));
    kernels.push_back(std::move(k));
  }
  return kernels;
}

template <typename S>
ToyDetector<S> build_toy_detector(const ToyDetectorConfig& cfg) {
  if (cfg.channels.size() < 2)
    throw argument_error("build_toy_detector: channel chain needs input and one layer");
  for (size_t c : cfg.channels)
    if (c == 0) throw argument_error("build_toy_detector: zero channel count in chain");
  if (cfg.kernel % 2 == 0) throw argument_error("build_toy_detector: kernel must be odd");
  if (cfg.classes == 0) throw argument_error("build_toy_detector: needs at least one class");

  ToyDetector<S> model;
  model.classes = cfg.classes;
  model.alpha = cfg.alpha;
  auto kernels = dense_init_kernels<S>(cfg);
  for (size_t l = 0; l < kernels.size(); ++l) {
    ConvGeometry geom;
    geom.padding = (cfg.kernel - 1) / 2;
    geom.stride =
        std::find(cfg.downsample.begin(), cfg.downsample.end(), l) != cfg.downsample.end() ? 2
                                                                                           : 1;
    model.layers.push_back(svd_initialize(kernels[l], cfg.alpha, geom));
  }

  const size_t last = cfg.channels.back();
  const size_t out = 5 + cfg.classes;
  Rng rng(derive_seed(cfg.seed, 200, 0));
  const double lim = std::sqrt(6.0 / static_cast<double>(last + out));
  model.head.kernel = Tensor4<S>(out, last, 1, 1);
  for (auto& v : model.head.kernel.data) v = static_cast<S>(rng.uniform(-lim, lim));
  model.head.bias.assign(out, S(0));
  model.head.geom = ConvGeometry{1, 0};
  return model;
}

template <typename S>
struct LayerTrace {
  Tensor4<S> k, dk;  // materialized kernels (dk zero-sized rank when absent)
  Tensor4<S> zb, zd; // branch activations; zd empty when delta_rank == 0
  Tensor4<S> z;      // zb + zd + bias
  Tensor4<S> y;      // leaky(z)
};

template <typename S>
struct ForwardTrace {
  Tensor4<S> input;
  std::vector<LayerTrace<S>> layers;
  Tensor4<S> raw;
};

template <typename S>
Tensor4<S> leaky(const Tensor4<S>& z) {
  Tensor4<S> y = z;
  const S slope = leaky_slope<S>();
  for (auto& v : y.data)
    if (v <= S(0)) v *= slope;
  return y;
}

template <typename S>
ForwardTrace<S> forward_trace(const ToyDetector<S>& model, const Tensor4<S>& x) {
  ForwardTrace<S> trace;
  trace.input = x;
  const Tensor4<S>* cur = &trace.input;
  for (const auto& layer : model.layers) {
    LayerTrace<S> lt;
    auto km = materialize(layer);
    lt.k = std::move(km.first);
    lt.dk = std::move(km.second);
    lt.zb = conv2d(lt.k, *cur, layer.geom);
    lt.z = lt.zb;
    if (layer.delta_rank > 0) {
      lt.zd = conv2d(lt.dk, *cur, layer.geom);
      for (size_t i = 0; i < lt.z.size(); ++i) lt.z.data[i] += lt.zd.data[i];
    }
    add_bias_inplace(lt.z, layer.bias);
    lt.y = leaky(lt.z);
    trace.layers.push_back(std::move(lt));
    cur = &trace.layers.back().y;
  }
  trace.raw = conv2d(model.head.kernel, *cur, model.head.geom);
  add_bias_inplace(trace.raw, model.head.bias);
  return trace;
}

// Forward without keeping intermediates; used for inference/validation.
template <typename S>
Tensor4<S> predict_raw(const ToyDetector<S>& model, const Tensor4<S>& x) {
  Tensor4<S> cur = x;
  for (const auto& layer : model.layers) cur = leaky(forward(layer, cur));
  Tensor4<S> raw = conv2d(model.head.kernel, cur, model.head.geom);
  add_bias_inplace(raw, model.head.bias);
  return raw;
}

template <typename S>
struct LayerGrads {
  Matrix<S> da, db, d_delta_a, d_delta_b;
  std::vector<S> d_bias;
};

template <typename S>
struct ModelGrads {
  std::vector<LayerGrads<S>> layers;
  Tensor4<S> d_head_kernel;
  std::vector<S> d_head_bias;
};

template <typename S>
std::vector<S> channel_sums(const Tensor4<S>& t) {
  std::vector<S> sums(t.dims[1], S(0));
  for (size_t n = 0; n < t.dims[0]; ++n)
    for (size_t c = 0; c < t.dims[1]; ++c) {
      const S* plane = &t.data[t.offset(n, c, 0, 0)];
      S acc = S(0);
      for (size_t i = 0; i < t.dims[2] * t.dims[3]; ++i) acc += plane[i];
      sums[c] += acc;
    }
  return sums;
}

// Reverse pass through head and factorized stack. `d_raw` is the gradient of
// the loss at the head output. When p_norm is 1 or 2 the complementarity
// term (mean over factorized layers, per-image norms averaged over the
// batch) is folded in with weight omega_c; its value is written to lc_value.
template <typename S>
ModelGrads<S> backward(const ToyDetector<S>& model, const ForwardTrace<S>& trace,
                       const Tensor4<S>& d_raw, int p_norm_kind = 0, double omega_c = 0.0,
                       double* lc_value = nullptr) {
  const size_t n_layers = model.layers.size();
  ModelGrads<S> grads;
  grads.layers.resize(n_layers);

  const Tensor4<S>& head_in = n_layers ? trace.layers.back().y : trace.input;
  grads.d_head_kernel = conv2d_weight_grad(d_raw, head_in, 1, 1, model.head.geom);
  grads.d_head_bias = channel_sums(d_raw);
  Tensor4<S> d_y =
      conv2d_input_grad(d_raw, model.head.kernel, head_in.dims[2], head_in.dims[3],
                        model.head.geom);

  double lc_total = 0;
  const double layer_weight =
      n_layers ? 1.0 / static_cast<double>(n_layers) : 0.0;
  for (size_t l = n_layers; l-- > 0;) {
    const auto& layer = model.layers[l];
    const auto& lt = trace.layers[l];
    const Tensor4<S>& x_in = (l == 0) ? trace.input : trace.layers[l - 1].y;

    Tensor4<S> d_z = d_y;
    const S slope = leaky_slope<S>();
    for (size_t i = 0; i < d_z.size(); ++i)
      if (lt.z.data[i] <= S(0)) d_z.data[i] *= slope;

    LayerGrads<S>& lg = grads.layers[l];
    lg.d_bias = channel_sums(d_z);

    Tensor4<S> up_base = d_z;
    Tensor4<S> up_delta;
    const bool has_delta = layer.delta_rank > 0;
    if (has_delta) up_delta = d_z;

    if (p_norm_kind != 0) {
      Tensor4<S> diff = lt.zb;
      if (has_delta)
        for (size_t i = 0; i < diff.size(); ++i) diff.data[i] -= lt.zd.data[i];
      Tensor4<S> g_diff;
      const double lc_l = batch_complementarity(diff, p_norm_kind, &g_diff);
      lc_total += lc_l * layer_weight;
      const double w = omega_c * layer_weight;
      if (w != 0.0) {
        for (size_t i = 0; i < g_diff.size(); ++i) {
          const S adj = static_cast<S>(w * static_cast<double>(g_diff.data[i]));
          up_base.data[i] += adj;
          if (has_delta) up_delta.data[i] -= adj;
        }
      }
    }

    Tensor4<S> dk = conv2d_weight_grad(up_base, x_in, layer.kernel_h, layer.kernel_w, layer.geom);
    Matrix<S> dm = flatten_from_kernel(dk);
    lg.da = matmul_abt(dm, layer.b);
    lg.db = matmul_atb(layer.a, dm);
    if (has_delta) {
      Tensor4<S> ddk =
          conv2d_weight_grad(up_delta, x_in, layer.kernel_h, layer.kernel_w, layer.geom);
      Matrix<S> ddm = flatten_from_kernel(ddk);
      lg.d_delta_a = matmul_abt(ddm, layer.delta_b);
      lg.d_delta_b = matmul_atb(layer.delta_a, ddm);
    }

    if (l > 0) {
      d_y = conv2d_input_grad(up_base, lt.k, x_in.dims[2], x_in.dims[3], layer.geom);
      if (has_delta) {
        Tensor4<S> extra =
            conv2d_input_grad(up_delta, lt.dk, x_in.dims[2], x_in.dims[3], layer.geom);
        for (size_t i = 0; i < d_y.size(); ++i) d_y.data[i] += extra.data[i];
      }
    }
  }
  if (lc_value) *lc_value = lc_total;
  return grads;
}

// Single-layer reverse step matching the layer ops: dK from correlating the
// input with the upstream, factor gradients dA = dM B^T and dB = A^T dM,
// bias gradient as the per-channel sum, and dX via the transposed conv of
// the upstream with K + deltaK.
template <typename S>
struct FactorizedGrads {
  Matrix<S> da, db, d_delta_a, d_delta_b;
  std::vector<S> d_bias;
  Tensor4<S> dx;
};

template <typename S>
FactorizedGrads<S> backward_factorized(const FactorizedConvLayer<S>& layer, const Tensor4<S>& x,
                                       const Tensor4<S>& upstream) {
  FactorizedGrads<S> g;
  Tensor4<S> dk = conv2d_weight_grad(upstream, x, layer.kernel_h, layer.kernel_w, layer.geom);
  Matrix<S> dm = flatten_from_kernel(dk);
  g.da = matmul_abt(dm, layer.b);
  g.db = matmul_atb(layer.a, dm);
  if (layer.delta_rank > 0) {
    g.d_delta_a = matmul_abt(dm, layer.delta_b);
    g.d_delta_b = matmul_atb(layer.delta_a, dm);
  }
  g.d_bias = channel_sums(upstream);
  auto [k, dk_mat] = materialize(layer);
  if (layer.delta_rank > 0)
    for (size_t i = 0; i < k.size(); ++i) k.data[i] += dk_mat.data[i];
  g.dx = conv2d_input_grad(upstream, k, x.dims[2], x.dims[3], layer.geom);
  return g;
}

// Parameter slots in a stable order: per layer A, B, [dA, dB], bias; then
// head kernel and head bias. Grad pointers come from a matching ModelGrads.
template <typename S>
std::vector<ParamSlot<S>> param_slots(ToyDetector<S>& model, ModelGrads<S>& grads,
                                      bool head_trainable = true) {
  std::vector<ParamSlot<S>> slots;
  for (size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    auto& lg = grads.layers[l];
    const bool base_ok = !layer.base_frozen;
    slots.push_back({&layer.a.data, &lg.da.data, base_ok});
    slots.push_back({&layer.b.data, &lg.db.data, base_ok});
    if (layer.delta_rank > 0) {
      slots.push_back({&layer.delta_a.data, &lg.d_delta_a.data, true});
      slots.push_back({&layer.delta_b.data, &lg.d_delta_b.data, true});
    }
    slots.push_back({&layer.bias, &lg.d_bias, base_ok});
  }
  slots.push_back({&model.head.kernel.data, &grads.d_head_kernel.data, head_trainable});
  slots.push_back({&model.head.bias, &grads.d_head_bias, head_trainable});
  return slots;
}

template <typename S>
ModelGrads<S> zero_grads_like(const ToyDetector<S>& model) {
  ModelGrads<S> g;
  g.layers.resize(model.layers.size());
  for (size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    g.layers[l].da = Matrix<S>(layer.a.rows, layer.a.cols);
    g.layers[l].db = Matrix<S>(layer.b.rows, layer.b.cols);
    if (layer.delta_rank > 0) {
      g.layers[l].d_delta_a = Matrix<S>(layer.delta_a.rows, layer.delta_a.cols);
      g.layers[l].d_delta_b = Matrix<S>(layer.delta_b.rows, layer.delta_b.cols);
    }
    g.layers[l].d_bias.assign(layer.bias.size(), S(0));
  }
  g.d_head_kernel = Tensor4<S>(model.head.kernel.dims[0], model.head.kernel.dims[1],
                               model.head.kernel.dims[2], model.head.kernel.dims[3]);
  g.d_head_bias.assign(model.head.bias.size(), S(0));
  return g;
}

template <typename S>
void accumulate_grads(ModelGrads<S>& into, const ModelGrads<S>& add, double scale = 1.0) {
  auto axpy = [scale](std::vector<S>& dst, const std::vector<S>& src) {
    for (size_t i = 0; i < dst.size(); ++i)
      dst[i] += static_cast<S>(scale * static_cast<double>(src[i]));
  };
  for (size_t l = 0; l < into.layers.size(); ++l) {
    axpy(into.layers[l].da.data, add.layers[l].da.data);
    axpy(into.layers[l].db.data, add.layers[l].db.data);
    if (!add.layers[l].d_delta_a.data.empty()) {
      axpy(into.layers[l].d_delta_a.data, add.layers[l].d_delta_a.data);
      axpy(into.layers[l].d_delta_b.data, add.layers[l].d_delta_b.data);
    }
    axpy(into.layers[l].d_bias, add.layers[l].d_bias);
  }
  axpy(into.d_head_kernel.data, add.d_head_kernel.data);
  axpy(into.d_head_bias, add.d_head_bias);
}

template <typename S>
size_t total_params(const ToyDetector<S>& model) {
  size_t n = model.head.kernel.size() + model.head.bias.size();
  for (const auto& layer : model.layers)
    n += layer.a.size() + layer.b.size() + layer.delta_a.size() + layer.delta_b.size() +
         layer.bias.size();
  return n;
}

// Parameter count of the plain dense conv stack computing the same shapes.
template <typename S>
size_t dense_equivalent_params(const ToyDetector<S>& model) {
  size_t n = model.head.kernel.size() + model.head.bias.size();
  for (const auto& layer : model.layers)
    n += layer.out_channels * layer.in_channels * layer.kernel_h * layer.kernel_w +
         layer.bias.size();
  return n;
}

template <typename S>
size_t trainable_params(const ToyDetector<S>& model, bool head_trainable = true) {
  size_t n = head_trainable ? model.head.kernel.size() + model.head.bias.size() : 0;
  for (const auto& layer : model.layers) {
    if (!layer.base_frozen) n += layer.a.size() + layer.b.size() + layer.bias.size();
    n += layer.delta_a.size() + layer.delta_b.size();
  }
  return n;
}

// Per-cell decode: objectness through a sigmoid with a 0.5 acceptance
// threshold, argmax class, offsets mapped back to a pixel box. One box per
// cell, no non-max suppression.
template <typename S>
std::vector<Detection> decode_detections(const Tensor4<S>& raw, size_t classes, double canvas,
                                         int first_image_id) {
  const size_t n = raw.dims[0], gh = raw.dims[2], gw = raw.dims[3];
  if (raw.dims[1] != 5 + classes) throw shape_error("decode_detections: channel count");
  std::vector<Detection> dets;
  const double cell_w = canvas / static_cast<double>(gw);
  const double cell_h = canvas / static_cast<double>(gh);
  auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
  for (size_t in = 0; in < n; ++in)
    for (size_t y = 0; y < gh; ++y)
      for (size_t x = 0; x < gw; ++x) {
        const double obj = 1.0 / (1.0 + std::exp(-static_cast<double>(raw.at(in, 0, y, x))));
        if (obj <= 0.5) continue;
        int best_class = 0;
        double best_score = static_cast<double>(raw.at(in, 1, y, x));
        for (size_t c = 1; c < classes; ++c) {
          const double s = static_cast<double>(raw.at(in, 1 + c, y, x));
          if (s > best_score) {
            best_score = s;
            best_class = static_cast<int>(c);
          }
        }
        const double tx = clamp01(static_cast<double>(raw.at(in, 1 + classes + 0, y, x)));
        const double ty = clamp01(static_cast<double>(raw.at(in, 1 + classes + 1, y, x)));
        const double tw = clamp01(static_cast<double>(raw.at(in, 1 + classes + 2, y, x)));
        const double th = clamp01(static_cast<double>(raw.at(in, 1 + classes + 3, y, x)));
        const double cx = (static_cast<double>(x) + tx) * cell_w;
        const double cy = (static_cast<double>(y) + ty) * cell_h;
        const double w = tw * canvas, h = th * canvas;
        Detection d;
        d.image_id = first_image_id + static_cast<int>(in);
        d.class_id = best_class;
        d.confidence = obj;
        d.box.x_min = std::max(0.0, cx - w / 2);
        d.box.y_min = std::max(0.0, cy - h / 2);
        d.box.x_max = std::min(canvas, cx + w / 2);
        d.box.y_max = std::min(canvas, cy + h / 2);
        if (d.box.x_max < d.box.x_min) d.box.x_max = d.box.x_min;
        if (d.box.y_max < d.box.y_min) d.box.y_max = d.box.y_min;
        dets.push_back(d);
      }
  return dets;
}

}  // namespace tensorfact
