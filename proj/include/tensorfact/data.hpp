#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tensorfact/common.hpp"
#include "tensorfact/eval.hpp"
#include "tensorfact/losses.hpp"

namespace tensorfact {

enum class Modality { A, B };

// Procedural two-modality scene source. Modality A renders bright shapes on
// a dark textured background; modality B pushes each class into its own
// intensity band on an inverted background so transfer is a real
// distribution shift.
struct SyntheticSceneSpec {
  size_t canvas = 128;
  size_t classes = 3;  // 0 disc, 1 square, 2 triangle
  size_t min_objects = 1;
  size_t max_objects = 6;
  double size_min_frac = 0.16;
  double size_max_frac = 0.40;
  double noise = 0.05;
  Modality modality = Modality::A;
  std::vector<double> class_probs;  // empty = uniform
};

// Modality-B intensity bands, one per class, all above the remapped
// background so objects stay bright in both modalities while their levels
// and ordering change.
inline double class_band_target(int class_id) {
  static const double bands[3] = {0.62, 0.79, 0.96};
  return bands[class_id % 3];
}
inline constexpr double kBandHalfWidth = 0.15;
inline constexpr double kBackgroundBandLow = 0.20;
inline constexpr double kBackgroundBandHigh = 0.65;

struct GrayImage {
  size_t h = 0, w = 0;
  std::vector<float> pix;  // [0,1]

  GrayImage() = default;
  GrayImage(size_t hh, size_t ww, float fill = 0.f) : h(hh), w(ww), pix(hh * ww, fill) {}
  float& at(size_t y, size_t x) { return pix[y * w + x]; }
  float at(size_t y, size_t x) const { return pix[y * w + x]; }
};

struct SceneObject {
  int class_id = 0;
  double cx = 0, cy = 0;   // center, pixels
  double size = 0;         // characteristic extent, pixels
  double intensity = 0.85; // modality-A paint level
};

struct RenderedScene {
  GrayImage image;
  std::vector<int16_t> labels;          // per-pixel class id, -1 background
  std::vector<SceneObject> objects;
  std::vector<Box> boxes;               // tight pixel boxes, aligned with objects
};

inline int sample_class(const SyntheticSceneSpec& spec, Rng& rng) {
  if (spec.class_probs.empty()) return static_cast<int>(rng.below((int64_t)spec.classes));
  double u = rng.unit(), acc = 0;
  for (size_t c = 0; c < spec.class_probs.size(); ++c) {
    acc += spec.class_probs[c];
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(spec.class_probs.size()) - 1;
}

// Placement with rejection so boxes stay mostly disjoint and fully inside
// the canvas; failed placements are dropped after a fixed number of tries.
inline std::vector<SceneObject> sample_scene(const SyntheticSceneSpec& spec, Rng& rng) {
  if (spec.canvas < 16 || spec.classes == 0 || spec.min_objects < 1 ||
      spec.max_objects < spec.min_objects)
    throw argument_error("sample_scene: invalid scene spec");
  const size_t count =
      spec.min_objects + (size_t)rng.below((int64_t)(spec.max_objects - spec.min_objects + 1));
  std::vector<SceneObject> objects;
  for (size_t i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      SceneObject obj;
      obj.class_id = sample_class(spec, rng);
      obj.size = rng.uniform(spec.size_min_frac, spec.size_max_frac) * (double)spec.canvas;
      const double margin = obj.size / 2 + 1.5;
      obj.cx = rng.uniform(margin, (double)spec.canvas - margin);
      obj.cy = rng.uniform(margin, (double)spec.canvas - margin);
      obj.intensity = rng.uniform(0.75, 0.95);
      bool clash = false;
      for (const auto& other : objects) {
        Box a{obj.cx - obj.size / 2, obj.cy - obj.size / 2, obj.cx + obj.size / 2,
              obj.cy + obj.size / 2};
        Box b{other.cx - other.size / 2, other.cy - other.size / 2, other.cx + other.size / 2,
              other.cy + other.size / 2};
        if (iou(a, b) > 0.05) {
          clash = true;
          break;
        }
      }
      if (!clash) {
        objects.push_back(obj);
        break;
      }
    }
  }
  return objects;
}

inline bool inside_shape(const SceneObject& obj, double px, double py) {
  const double dx = px - obj.cx, dy = py - obj.cy, half = obj.size / 2;
  switch (obj.class_id % 3) {
    case 0:  // disc
      return dx * dx + dy * dy <= half * half;
    case 1:  // square
      return std::abs(dx) <= half && std::abs(dy) <= half;
    default: {  // isoceles triangle, apex up
      if (dy < -half || dy > half) return false;
      const double halfwidth = (dy + half) / 2.0;
      return std::abs(dx) <= halfwidth;
    }
  }
}

// Inversion + class-banded emissivity remap + 3x3 box blur + seeded noise.
// Background pixels compress into a fixed band of their own; the 0.4 factor
// keeps the source texture visible inside every band.
inline void modality_transform(GrayImage& img, const std::vector<int16_t>& labels, Rng& rng) {
  const size_t h = img.h, w = img.w;
  for (size_t i = 0; i < img.pix.size(); ++i) {
    const double inv = 1.0 - (double)img.pix[i];
    if (labels[i] >= 0) {
      // shapes render at 0.75..0.95, so inv centers near 0.15
      img.pix[i] = (float)(class_band_target(labels[i]) + 0.4 * (inv - 0.15));
    } else {
      img.pix[i] = (float)(0.35 + 0.4 * (inv - 0.48));
    }
  }
  GrayImage blurred(h, w);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double acc = 0;
      int cnt = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = (long)y + dy, xx = (long)x + dx;
          if (yy < 0 || yy >= (long)h || xx < 0 || xx >= (long)w) continue;
          acc += img.at((size_t)yy, (size_t)xx);
          cnt += 1;
        }
      blurred.at(y, x) = (float)(acc / cnt);
    }
  img = blurred;
  for (auto& p : img.pix) {
    p = (float)std::min(1.0, std::max(0.0, (double)p + rng.uniform(-0.03, 0.03)));
  }
}

// Deterministic given the rng state; boxes are measured from the painted
// pixels, so they are tight by construction.
inline RenderedScene render_scene(const SyntheticSceneSpec& spec, Rng& rng) {
  RenderedScene scene;
  scene.objects = sample_scene(spec, rng);
  const size_t c = spec.canvas;
  scene.image = GrayImage(c, c);
  scene.labels.assign(c * c, -1);

  const double base = rng.uniform(0.40, 0.55);
  for (auto& p : scene.image.pix) p = (float)base;
  const int n_clutter = 2 + (int)rng.below(3);
  for (int i = 0; i < n_clutter; ++i) {
    const size_t cw = 8 + (size_t)rng.below((int64_t)c / 3);
    const size_t ch = 8 + (size_t)rng.below((int64_t)c / 3);
    const size_t cx = (size_t)rng.below((int64_t)(c - cw));
    const size_t cy = (size_t)rng.below((int64_t)(c - ch));
    const float lift = (float)rng.uniform(0.0, 0.08);
    for (size_t y = cy; y < cy + ch; ++y)
      for (size_t x = cx; x < cx + cw; ++x) scene.image.at(y, x) += lift;
  }

  for (const auto& obj : scene.objects) {
    long min_x = (long)c, min_y = (long)c, max_x = -1, max_y = -1;
    const long y0 = std::max(0L, (long)std::floor(obj.cy - obj.size / 2) - 1);
    const long y1 = std::min((long)c - 1, (long)std::ceil(obj.cy + obj.size / 2) + 1);
    const long x0 = std::max(0L, (long)std::floor(obj.cx - obj.size / 2) - 1);
    const long x1 = std::min((long)c - 1, (long)std::ceil(obj.cx + obj.size / 2) + 1);
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        if (!inside_shape(obj, (double)x + 0.5, (double)y + 0.5)) continue;
        scene.image.at((size_t)y, (size_t)x) = (float)obj.intensity;
        scene.labels[(size_t)y * c + (size_t)x] = (int16_t)obj.class_id;
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    Box b;
    if (max_x >= 0) b = Box{(double)min_x, (double)min_y, (double)max_x + 1, (double)max_y + 1};
    scene.boxes.push_back(b);
  }
  // drop objects whose raster vanished (cannot happen at sane sizes)
  for (size_t i = scene.boxes.size(); i-- > 0;) {
    if (scene.boxes[i].area() <= 0) {
      scene.boxes.erase(scene.boxes.begin() + (long)i);
      scene.objects.erase(scene.objects.begin() + (long)i);
    }
  }

  for (auto& p : scene.image.pix)
    p = (float)std::min(1.0, std::max(0.0, (double)p + rng.uniform(-spec.noise, spec.noise)));

  if (spec.modality == Modality::B) modality_transform(scene.image, scene.labels, rng);

  // quantize to 8-bit levels so in-memory pipelines match the PGM files
  for (auto& p : scene.image.pix)
    p = (float)(std::lround(std::min(1.0, std::max(0.0, (double)p)) * 255.0) / 255.0);
  return scene;
}

struct Sample {
  GrayImage image;
  std::vector<NormBox> annotations;  // normalized cx cy w h
};

inline std::vector<NormBox> to_annotations(const RenderedScene& scene, size_t canvas) {
  std::vector<NormBox> out;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    const Box& b = scene.boxes[i];
    NormBox nb;
    nb.class_id = scene.objects[i].class_id;
    nb.cx = (b.x_min + b.x_max) / 2 / (double)canvas;
    nb.cy = (b.y_min + b.y_max) / 2 / (double)canvas;
    nb.w = (b.x_max - b.x_min) / (double)canvas;
    nb.h = (b.y_max - b.y_min) / (double)canvas;
    out.push_back(nb);
  }
  return out;
}

// Image `index` of a dataset stream is a pure function of (spec, seed,
// index), so subsets can be materialized without the rest of the stream.
inline Sample generate_sample(const SyntheticSceneSpec& spec, uint64_t seed, size_t index) {
  Rng rng(derive_seed(seed, 0xDA7A, index));
  RenderedScene scene = render_scene(spec, rng);
  Sample s;
  s.image = std::move(scene.image);
  s.annotations = to_annotations(scene, spec.canvas);
  return s;
}

inline std::vector<Sample> generate_dataset(const SyntheticSceneSpec& spec, size_t n,
                                            uint64_t seed) {
  if (n < 1) throw argument_error("generate_dataset: need at least one image");
  std::vector<Sample> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) out.push_back(generate_sample(spec, seed, i));
  return out;
}

// ---- file formats ----

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw argument_error("write_pgm: cannot open " + path);
  os << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> bytes(img.pix.size());
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] =
        (unsigned char)std::lround(std::min(1.0, std::max(0.0, (double)img.pix[i])) * 255.0);
  os.write(reinterpret_cast<const char*>(bytes.data()), (std::streamsize)bytes.size());
}

struct parse_error : std::runtime_error {
  explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw parse_error("read_pgm: cannot open " + path);
  std::string magic;
  size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255) throw parse_error("read_pgm: not a maxval-255 P5 file");
  is.get();  // single whitespace after header
  GrayImage img(h, w);
  std::vector<unsigned char> bytes(w * h);
  is.read(reinterpret_cast<char*>(bytes.data()), (std::streamsize)bytes.size());
  if (is.gcount() != (std::streamsize)bytes.size()) throw parse_error("read_pgm: truncated");
  for (size_t i = 0; i < bytes.size(); ++i) img.pix[i] = (float)bytes[i] / 255.0f;
  return img;
}

inline void write_annotations(const std::string& path, const std::vector<NormBox>& boxes) {
  std::ofstream os(path);
  if (!os) throw argument_error("write_annotations: cannot open " + path);
  char buf[160];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", b.class_id, b.cx, b.cy, b.w, b.h);
    os << buf;
  }
}

inline std::vector<NormBox> read_annotations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw parse_error("read_annotations: cannot open " + path);
  std::vector<NormBox> out;
  NormBox b;
  while (is >> b.class_id >> b.cx >> b.cy >> b.w >> b.h) out.push_back(b);
  return out;
}

inline std::string image_stem(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%06zu", index);
  return buf;
}

inline void write_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  std::ofstream index((fs::path(dir) / "index.txt").string());
  for (size_t i = 0; i < samples.size(); ++i) {
    const std::string stem = image_stem(i);
    write_pgm((fs::path(dir) / "images" / (stem + ".pgm")).string(), samples[i].image);
    write_annotations((fs::path(dir) / "labels" / (stem + ".txt")).string(),
                      samples[i].annotations);
    index << stem << "\n";
  }
}

inline std::vector<Sample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream index((fs::path(dir) / "index.txt").string());
  if (!index) throw parse_error("load_dataset: missing index.txt in " + dir);
  std::vector<Sample> samples;
  std::string stem;
  while (index >> stem) {
    Sample s;
    s.image = read_pgm((fs::path(dir) / "images" / (stem + ".pgm")).string());
    s.annotations = read_annotations((fs::path(dir) / "labels" / (stem + ".txt")).string());
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw parse_error("load_dataset: empty dataset in " + dir);
  return samples;
}

// Ground truth in evaluator pixel coordinates.
inline std::vector<GroundTruthBox> dataset_ground_truth(const std::vector<Sample>& samples,
                                                        double canvas) {
  std::vector<GroundTruthBox> gts;
  for (size_t i = 0; i < samples.size(); ++i)
    for (const auto& nb : samples[i].annotations) {
      GroundTruthBox g;
      g.image_id = (int)i;
      g.class_id = nb.class_id;
      g.box.x_min = (nb.cx - nb.w / 2) * canvas;
      g.box.x_max = (nb.cx + nb.w / 2) * canvas;
      g.box.y_min = (nb.cy - nb.h / 2) * canvas;
      g.box.y_max = (nb.cy + nb.h / 2) * canvas;
      gts.push_back(g);
    }
  return gts;
}

template <typename S>
Tensor4<S> batch_tensor(const std::vector<Sample>& samples, const std::vector<size_t>& indices) {
  if (indices.empty()) throw argument_error("batch_tensor: empty batch");
  const size_t h = samples[indices[0]].image.h, w = samples[indices[0]].image.w;
  Tensor4<S> x(indices.size(), 1, h, w);
  for (size_t b = 0; b < indices.size(); ++b) {
    const GrayImage& img = samples[indices[b]].image;
    for (size_t i = 0; i < h * w; ++i) x.data[x.offset(b, 0, 0, 0) + i] = (S)img.pix[i];
  }
  return x;
}

}  // namespace tensorfact
