#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tensorfact/common.hpp"
#include "tensorfact/data.hpp"
#include "tensorfact/model.hpp"

namespace tensorfact {

// TFW1 checkpoint format, little-endian throughout:
//   magic "TFW" + version byte '1'
//   u32 layer count
//   per layer: u8 kind (0 factorized conv, 1 dense conv head)
//              u32 T, S, D2, D1, r, delta_r
//              u8 frozen
//              f32 payload, row-major:
//                kind 0: A, B, deltaA + deltaB (iff delta_r > 0), bias
//                kind 1: kernel, bias
// Parsing is fail-closed: any defect throws before a model is returned.
struct weights_magic_error : parse_error {
  explicit weights_magic_error(const std::string& m) : parse_error(m) {}
};
struct weights_version_error : parse_error {
  explicit weights_version_error(const std::string& m) : parse_error(m) {}
};
struct weights_truncated_error : parse_error {
  explicit weights_truncated_error(const std::string& m) : parse_error(m) {}
};
struct weights_shape_error : parse_error {
  explicit weights_shape_error(const std::string& m) : parse_error(m) {}
};

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw weights_truncated_error("weights: truncated while reading u32");
  return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) | ((uint32_t)b[3] << 24);
}

inline void put_u8(std::ostream& os, uint8_t v) { os.put((char)v); }

inline uint8_t get_u8(std::istream& is) {
  const int c = is.get();
  if (c == EOF) throw weights_truncated_error("weights: truncated while reading byte");
  return (uint8_t)c;
}

template <typename S>
void put_f32s(std::ostream& os, const std::vector<S>& values) {
  for (S v : values) {
    const float f = (float)v;
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
}

template <typename S>
void get_f32s(std::istream& is, std::vector<S>& values, size_t count) {
  values.resize(count);
  for (size_t i = 0; i < count; ++i) {
    const uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    values[i] = (S)f;
  }
}

}  // namespace detail

template <typename S>
void save_weights(const ToyDetector<S>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw argument_error("save_weights: cannot open " + path);
  os.write("TFW1", 4);
  detail::put_u32(os, (uint32_t)(model.layers.size() + 1));
  for (const auto& layer : model.layers) {
    detail::put_u8(os, 0);
    detail::put_u32(os, (uint32_t)layer.out_channels);
    detail::put_u32(os, (uint32_t)layer.in_channels);
    detail::put_u32(os, (uint32_t)layer.kernel_h);
    detail::put_u32(os, (uint32_t)layer.kernel_w);
    detail::put_u32(os, (uint32_t)layer.rank);
    detail::put_u32(os, (uint32_t)layer.delta_rank);
    detail::put_u8(os, layer.base_frozen ? 1 : 0);
    detail::put_f32s(os, layer.a.data);
    detail::put_f32s(os, layer.b.data);
    if (layer.delta_rank > 0) {
      detail::put_f32s(os, layer.delta_a.data);
      detail::put_f32s(os, layer.delta_b.data);
    }
    detail::put_f32s(os, layer.bias);
  }
  const auto& head = model.head;
  detail::put_u8(os, 1);
  detail::put_u32(os, (uint32_t)head.kernel.dims[0]);
  detail::put_u32(os, (uint32_t)head.kernel.dims[1]);
  detail::put_u32(os, (uint32_t)head.kernel.dims[2]);
  detail::put_u32(os, (uint32_t)head.kernel.dims[3]);
  detail::put_u32(os, 0);
  detail::put_u32(os, 0);
  detail::put_u8(os, 0);
  detail::put_f32s(os, head.kernel.data);
  detail::put_f32s(os, head.bias);
  if (!os) throw argument_error("save_weights: write failed for " + path);
}

// Geometry is not part of the format; the loader applies the fixed toy
// architecture convention (stride 2 on the first three factorized layers,
// stride 1 with same-size padding elsewhere, 1x1 head without padding).
template <typename S>
ToyDetector<S> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw argument_error("load_weights: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4) throw weights_truncated_error("weights: file shorter than the magic");
  if (std::memcmp(magic, "TFW", 3) != 0)
    throw weights_magic_error("weights: bad magic, not a TFW file");
  if (magic[3] != '1')
    throw weights_version_error(std::string("weights: file version '") + magic[3] +
                                "', supported version '1'");
  const uint32_t count = detail::get_u32(is);
  if (count == 0) throw weights_shape_error("weights: zero layer count");

  ToyDetector<S> model;
  bool have_head = false;
  size_t fact_index = 0;
  for (uint32_t li = 0; li < count; ++li) {
    const uint8_t kind = detail::get_u8(is);
    if (kind > 1) throw weights_shape_error("weights: unknown layer kind");
    const uint32_t t = detail::get_u32(is), s = detail::get_u32(is);
    const uint32_t d2 = detail::get_u32(is), d1 = detail::get_u32(is);
    const uint32_t r = detail::get_u32(is), dr = detail::get_u32(is);
    const uint8_t frozen = detail::get_u8(is);
    if (t == 0 || s == 0 || d2 == 0 || d1 == 0)
      throw weights_shape_error("weights: zero dimension in layer record");
    if (kind == 0) {
      if (r == 0 || r > max_rank(t, s, d2, d1))
        throw weights_shape_error("weights: rank outside [1, min(TS, D2D1)]");
      FactorizedConvLayer<S> layer;
      layer.out_channels = t;
      layer.in_channels = s;
      layer.kernel_h = d2;
      layer.kernel_w = d1;
      layer.rank = r;
      layer.delta_rank = dr;
      layer.base_frozen = frozen != 0;
      layer.geom.padding = (d2 - 1) / 2;
      layer.geom.stride = fact_index < 3 ? 2 : 1;
      layer.a = Matrix<S>((size_t)t * s, r);
      layer.b = Matrix<S>(r, (size_t)d2 * d1);
      detail::get_f32s(is, layer.a.data, layer.a.size());
      detail::get_f32s(is, layer.b.data, layer.b.size());
      if (dr > 0) {
        layer.delta_a = Matrix<S>((size_t)t * s, dr);
        layer.delta_b = Matrix<S>(dr, (size_t)d2 * d1);
        detail::get_f32s(is, layer.delta_a.data, layer.delta_a.size());
        detail::get_f32s(is, layer.delta_b.data, layer.delta_b.size());
      }
      detail::get_f32s(is, layer.bias, t);
      if (!all_finite(layer.a.data) || !all_finite(layer.b.data))
        throw weights_shape_error("weights: non-finite factor values");
      model.layers.push_back(std::move(layer));
      fact_index += 1;
    } else {
      if (have_head) throw weights_shape_error("weights: more than one head layer");
      if (dr != 0 || r != 0) throw weights_shape_error("weights: head record carries a rank");
      model.head.kernel = Tensor4<S>(t, s, d2, d1);
      detail::get_f32s(is, model.head.kernel.data, model.head.kernel.size());
      detail::get_f32s(is, model.head.bias, t);
      model.head.geom = ConvGeometry{1, 0};
      if (t < 6) throw weights_shape_error("weights: head needs at least 5 + 1 channels");
      model.classes = t - 5;
      have_head = true;
    }
  }
  if (!have_head) throw weights_shape_error("weights: missing head layer");
  // fail closed on trailing garbage
  is.peek();
  if (!is.eof()) throw weights_shape_error("weights: trailing bytes after last layer");
  return model;
}

// Shape-checked load into a model built from a config.
template <typename S>
void load_weights_into(ToyDetector<S>& model, const std::string& path) {
  ToyDetector<S> loaded = load_weights<S>(path);
  if (loaded.layers.size() != model.layers.size())
    throw weights_shape_error("weights: layer count does not match the model");
  for (size_t l = 0; l < model.layers.size(); ++l) {
    auto& dst = model.layers[l];
    auto& src = loaded.layers[l];
    if (dst.out_channels != src.out_channels || dst.in_channels != src.in_channels ||
        dst.kernel_h != src.kernel_h || dst.kernel_w != src.kernel_w)
      throw weights_shape_error("weights: layer shape does not match the model");
    src.geom = dst.geom;
    dst = std::move(src);
  }
  if (!model.head.kernel.same_shape(loaded.head.kernel))
    throw weights_shape_error("weights: head shape does not match the model");
  model.head.kernel = std::move(loaded.head.kernel);
  model.head.bias = std::move(loaded.head.bias);
  model.classes = loaded.classes;
}

}  // namespace tensorfact
