#include <catch2/catch.hpp>

#include "tensorfact/config.hpp"

using namespace tensorfact;

TEST_CASE("config parses known keys and keeps defaults for the rest") {
  const std::string text =
      "# reference\n"
      "alpha = 0.5\n"
      "p_norm = 1\n"
      "epochs = 40\n"
      "lr_phase1 = 1e-3\n"
      "seed = 9\n"
      "canvas = 64\n";
  TrainConfig cfg = parse_config_text(text);
  CHECK(cfg.alpha == 0.5);
  CHECK(cfg.p_norm == 1);
  CHECK(cfg.epochs == 40);
  CHECK(cfg.lr_phase1 == Approx(1e-3));
  CHECK(cfg.seed == 9);
  CHECK(cfg.canvas == 64);
  // untouched defaults
  CHECK(cfg.omega_c == Approx(0.01));
  CHECK(cfg.batch_size == 40);
  CHECK(cfg.accum_steps == 2);
  CHECK(cfg.patience == 10);
  CHECK(cfg.sched_factor == Approx(0.1));
  CHECK(cfg.train_frac_b == Approx(0.01));
  CHECK(cfg.lr_phase2 == Approx(1e-3));
}

TEST_CASE("unknown keys are rejected") {
  CHECK_THROWS_AS(parse_config_text("aplha = 0.5\n"), parse_error);
  CHECK_THROWS_AS(parse_config_text("alpha 0.5\n"), parse_error);
  CHECK_THROWS_AS(parse_config_text("p_norm = 3\n"), parse_error);
  CHECK_THROWS_AS(parse_config_text("epochs = soon\n"), parse_error);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(parse_config_text("alpha = 0\n"), parse_error);
  CHECK_THROWS_AS(parse_config_text("omega_c = -0.5\n"), parse_error);
  CHECK_THROWS_AS(parse_config_text("alpha = 1.2\n"), parse_error);
  CHECK_THROWS_AS(parse_config_text("canvas = 60\n"), parse_error);
  CHECK_THROWS_AS(parse_config_text("batch_size = 0\n"), parse_error);
  CHECK(parse_config_text("p_norm = none\n").p_norm == 0);
}

TEST_CASE("serialize/parse round-trip and stable hash") {
  TrainConfig cfg;
  cfg.alpha = 0.4;
  cfg.p_norm = 2;
  cfg.seed = 1234567;
  cfg.canvas = 64;
  const std::string text = serialize_config(cfg);
  TrainConfig back = parse_config_text(text);
  CHECK(serialize_config(back) == text);
  CHECK(config_hash(back) == config_hash(cfg));
  TrainConfig other = cfg;
  other.seed = 7;
  CHECK(config_hash(other) != config_hash(cfg));
}
