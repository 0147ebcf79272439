#include <catch2/catch.hpp>

#include <filesystem>

#include "tensorfact/data.hpp"

using namespace tensorfact;

namespace {
SyntheticSceneSpec small_spec(Modality m = Modality::A) {
  SyntheticSceneSpec spec;
  spec.canvas = 64;
  spec.modality = m;
  return spec;
}
}  // namespace

TEST_CASE("dataset generation is deterministic given the seed") {
  auto spec = small_spec();
  auto a = generate_dataset(spec, 5, 1234);
  auto b = generate_dataset(spec, 5, 1234);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.pix == b[i].image.pix);
    REQUIRE(a[i].annotations.size() == b[i].annotations.size());
    for (size_t j = 0; j < a[i].annotations.size(); ++j) {
      CHECK(a[i].annotations[j].cx == b[i].annotations[j].cx);
      CHECK(a[i].annotations[j].w == b[i].annotations[j].w);
    }
  }
  auto c = generate_dataset(spec, 5, 1235);
  CHECK(a[0].image.pix != c[0].image.pix);
  CHECK_THROWS_AS(generate_dataset(spec, 0, 1), argument_error);
}

TEST_CASE("samples can be materialized individually out of a stream") {
  auto spec = small_spec(Modality::B);
  auto all = generate_dataset(spec, 8, 777);
  for (size_t i : {0ul, 3ul, 7ul}) {
    auto one = generate_sample(spec, 777, i);
    CHECK(one.image.pix == all[i].image.pix);
  }
}

TEST_CASE("emitted boxes are tight around the rendered masks") {
  auto spec = small_spec();
  for (uint64_t seed = 50; seed < 60; ++seed) {
    Rng rng(derive_seed(seed, 0xDA7A, 0));
    RenderedScene scene = render_scene(spec, rng);
    REQUIRE(scene.objects.size() >= 1);
    for (size_t i = 0; i < scene.objects.size(); ++i) {
      // re-measure the mask extent for this object's class at its location
      const Box& b = scene.boxes[i];
      long min_x = 1 << 20, min_y = 1 << 20, max_x = -1, max_y = -1;
      for (long y = 0; y < (long)spec.canvas; ++y)
        for (long x = 0; x < (long)spec.canvas; ++x) {
          if (scene.labels[(size_t)y * spec.canvas + (size_t)x] != scene.objects[i].class_id)
            continue;
          if (!inside_shape(scene.objects[i], x + 0.5, y + 0.5)) continue;
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
          min_y = std::min(min_y, y);
          max_y = std::max(max_y, y);
        }
      REQUIRE(max_x >= 0);
      CHECK(std::abs(b.x_min - (double)min_x) <= 1.0);
      CHECK(std::abs(b.y_min - (double)min_y) <= 1.0);
      CHECK(std::abs(b.x_max - (double)(max_x + 1)) <= 1.0);
      CHECK(std::abs(b.y_max - (double)(max_y + 1)) <= 1.0);
    }
  }
}

TEST_CASE("class draws follow the configured distribution within 5%") {
  auto spec = small_spec();
  spec.class_probs = {0.5, 0.3, 0.2};
  Rng rng(4242);
  std::vector<size_t> counts(3, 0);
  size_t total = 0;
  for (int i = 0; i < 10000; ++i) {
    auto objects = sample_scene(spec, rng);
    for (const auto& o : objects) {
      counts[(size_t)o.class_id] += 1;
      total += 1;
    }
  }
  for (size_t c = 0; c < 3; ++c) {
    const double frac = (double)counts[c] / (double)total;
    CHECK(std::abs(frac - spec.class_probs[c]) <= 0.05);
  }
}

TEST_CASE("modality transform is not an involution and fills the background band") {
  GrayImage black(32, 32, 0.0f);
  std::vector<int16_t> labels(32 * 32, -1);
  Rng rng(99);
  GrayImage once = black;
  modality_transform(once, labels, rng);
  for (float p : once.pix) {
    CHECK(p >= (float)kBackgroundBandLow);
    CHECK(p <= (float)kBackgroundBandHigh);
  }
  Rng rng2(99);
  GrayImage twice = once;
  modality_transform(twice, labels, rng2);
  CHECK(twice.pix != black.pix);  // applying it twice does not return to the source
}

TEST_CASE("class pixels land in their intensity bands in modality B") {
  auto spec = small_spec(Modality::B);
  size_t scenes_checked = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(9000 + seed, 0xDA7A, 0));
    RenderedScene scene = render_scene(spec, rng);
    std::vector<double> sum(3, 0);
    std::vector<size_t> count(3, 0);
    for (size_t i = 0; i < scene.labels.size(); ++i) {
      if (scene.labels[i] < 0) continue;
      sum[(size_t)scene.labels[i]] += scene.image.pix[i];
      count[(size_t)scene.labels[i]] += 1;
    }
    for (int c = 0; c < 3; ++c) {
      if (count[(size_t)c] < 30) continue;
      const double mean = sum[(size_t)c] / (double)count[(size_t)c];
      CHECK(std::abs(mean - class_band_target(c)) <= kBandHalfWidth);
      scenes_checked += 1;
    }
  }
  CHECK(scenes_checked >= 100);
}

TEST_CASE("pgm round-trip preserves quantized pixels exactly") {
  auto spec = small_spec();
  auto samples = generate_dataset(spec, 1, 31337);
  const std::string path = "/tmp/tensorfact_test.pgm";
  write_pgm(path, samples[0].image);
  GrayImage back = read_pgm(path);
  REQUIRE(back.h == samples[0].image.h);
  REQUIRE(back.w == samples[0].image.w);
  CHECK(back.pix == samples[0].image.pix);  // generation quantizes to 8 bits
  std::filesystem::remove(path);
}

TEST_CASE("dataset directory round-trip") {
  auto spec = small_spec(Modality::B);
  auto samples = generate_dataset(spec, 3, 555);
  const std::string dir = "/tmp/tensorfact_ds_test";
  std::filesystem::remove_all(dir);
  write_dataset(dir, samples);
  auto back = load_dataset(dir);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].image.pix == samples[i].image.pix);
    REQUIRE(back[i].annotations.size() == samples[i].annotations.size());
    for (size_t j = 0; j < back[i].annotations.size(); ++j) {
      CHECK(back[i].annotations[j].class_id == samples[i].annotations[j].class_id);
      CHECK(back[i].annotations[j].cx == Approx(samples[i].annotations[j].cx).margin(1e-6));
      CHECK(back[i].annotations[j].w == Approx(samples[i].annotations[j].w).margin(1e-6));
    }
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_dataset("/tmp/tensorfact_no_such_dir"), parse_error);
}

TEST_CASE("ground truth conversion keeps pixel geometry") {
  Sample s;
  s.image = GrayImage(64, 64);
  s.annotations.push_back({2, 0.5, 0.25, 0.25, 0.125});
  auto gts = dataset_ground_truth({s}, 64.0);
  REQUIRE(gts.size() == 1);
  CHECK(gts[0].class_id == 2);
  CHECK(gts[0].box.x_min == Approx(64 * (0.5 - 0.125)));
  CHECK(gts[0].box.x_max == Approx(64 * (0.5 + 0.125)));
  CHECK(gts[0].box.y_min == Approx(64 * (0.25 - 0.0625)));
}
