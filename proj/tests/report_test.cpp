#include <catch2/catch.hpp>

#include "tensorfact/report.hpp"

using namespace tensorfact;

TEST_CASE("compression rows reproduce the published table values exactly") {
  CHECK(compression_report(35400800, 37205480).pct4() == "4.8506");
  CHECK(compression_report(33594257, 37205480).pct4() == "9.7062");
  CHECK(compression_report(1856343, 37205480).pct2() == "95.01");
  CHECK(compression_report(3662886, 37205480).pct2() == "90.16");
  CHECK(compression_report(37205480, 37205480).pct4() == "0.0000");
  CHECK(compression_report(37205480, 37205480).pct2() == "0.00");
}

TEST_CASE("compression handles expansion and rejects a zero baseline") {
  CHECK(compression_report(150, 100).pct4() == "-50.0000");
  CHECK(compression_report(150, 100).value() == Approx(-50.0));
  CHECK_THROWS_AS(compression_report(1, 0), argument_error);
  CHECK(compression_report(25, 100).value() == Approx(75.0));
}

TEST_CASE("manifest parsing and parameter arithmetic") {
  const std::string text =
      "# T S D2 D1\n"
      "64 32 3 3\n"
      "16 1 3 3  # first layer\n"
      "\n"
      "8 8 1 1\n";
  auto shapes = parse_manifest_text(text);
  REQUIRE(shapes.size() == 3);
  CHECK(manifest_dense_params(shapes) == 64ull * 32 * 9 + 16 * 9 + 64);
  // alpha = 0.5: ranks 4, 4, 1 (1x1 layer has r_max = 1)
  CHECK(manifest_factored_params(shapes, 0.5) ==
        4ull * (2048 + 9) + 4ull * (16 + 9) + 1ull * (64 + 1));
  // delta_ratio 0.25: delta ranks max(1, floor(.25 r)) = 1, 1, 1
  CHECK(manifest_delta_params(shapes, 0.5, 0.25) == (2048 + 9) + (16 + 9) + (64 + 1));

  CHECK_THROWS_AS(parse_manifest_text("64 32 3\n"), parse_error);
  CHECK_THROWS_AS(parse_manifest_text("# nothing\n"), parse_error);
}

TEST_CASE("percent strings round half-up at the displayed precision") {
  // 1/8 = 12.5%; 1/3 = 33.3333%
  CHECK(compression_report(7, 8).pct4() == "12.5000");
  CHECK(compression_report(2, 3).pct4() == "33.3333");
  CHECK(compression_report(2, 3).pct2() == "33.33");
  // 0.005% boundary rounds up
  CHECK(compression_report(199990, 200000).pct2() == "0.01");
}

TEST_CASE("report formatting is deterministic") {
  ExperimentReport r;
  r.seed = 5;
  r.config_hash = "00ff";
  r.dense_params = 1000;
  r.frozen = {"phase1_frozen", 600, 600, "40.0000", {0.5, 0.25, {{0, 0.5}, {1, 0.75}}}};
  r.augmented = {"augmented", 700, 120, "30.0000", {0.6, 0.3, {{0, 0.6}, {1, 0.8}}}};
  const std::string a = format_report_text(r);
  const std::string b = format_report_text(r);
  CHECK(a == b);
  CHECK(a.find("phase1_frozen") != std::string::npos);
  CHECK(a.find("40.0000") != std::string::npos);
  const std::string kv = format_report_kv(r);
  CHECK(kv.find("augmented_map50 = 0.600000") != std::string::npos);
  CHECK(kv.find("frozen") != std::string::npos);
}

TEST_CASE("select_b_indices is a deterministic disjoint split") {
  TrainConfig cfg;
  cfg.seed = 77;
  cfg.train_frac_b = 0.01;
  std::vector<size_t> train_ids, val_ids;
  select_b_indices(cfg, 5000, 40, train_ids, val_ids);
  CHECK(train_ids.size() == 50);
  CHECK(val_ids.size() == 40);
  for (size_t t : train_ids)
    for (size_t v : val_ids) CHECK(t != v);
  std::vector<size_t> t2, v2;
  select_b_indices(cfg, 5000, 40, t2, v2);
  CHECK(train_ids == t2);
  CHECK(val_ids == v2);
}
