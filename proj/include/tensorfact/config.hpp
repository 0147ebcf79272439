#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "tensorfact/common.hpp"
#include "tensorfact/data.hpp"

namespace tensorfact {

// Flat key = value experiment configuration. The key set is closed; unknown
// keys are errors so typos cannot silently fall back to defaults.
struct TrainConfig {
  double alpha = 0.5;
  double delta_ratio = 0.25;  // delta_r = max(1, floor(delta_ratio * r))
  double omega_c = 0.01;
  int p_norm = 0;  // 0 = no complementarity term, else 1 or 2
  double lr_phase1 = 1e-5;
  double lr_phase2 = 1e-3;
  int epochs = 200;
  int batch_size = 40;
  int accum_steps = 2;
  int patience = 10;
  double sched_factor = 0.1;
  uint64_t seed = 1;
  size_t canvas = 128;
  size_t classes = 3;
  double train_frac_b = 0.01;

  // not a file key: whether the head keeps training in phase 2
  bool train_head_phase2 = true;
};

namespace detail {
inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}
}  // namespace detail

inline TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    lineno += 1;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw parse_error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      if (key == "alpha") cfg.alpha = std::stod(value);
      else if (key == "delta_ratio") cfg.delta_ratio = std::stod(value);
      else if (key == "omega_c") cfg.omega_c = std::stod(value);
      else if (key == "p_norm") {
        if (value == "none") cfg.p_norm = 0;
        else if (value == "1") cfg.p_norm = 1;
        else if (value == "2") cfg.p_norm = 2;
        else throw parse_error("config: p_norm must be none, 1 or 2, got '" + value + "'");
      }
      else if (key == "lr_phase1") cfg.lr_phase1 = std::stod(value);
      else if (key == "lr_phase2") cfg.lr_phase2 = std::stod(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "accum_steps") cfg.accum_steps = std::stoi(value);
      else if (key == "patience") cfg.patience = std::stoi(value);
      else if (key == "sched_factor") cfg.sched_factor = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "canvas") cfg.canvas = std::stoul(value);
      else if (key == "classes") cfg.classes = std::stoul(value);
      else if (key == "train_frac_b") cfg.train_frac_b = std::stod(value);
      else throw parse_error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw parse_error("config line " + std::to_string(lineno) + ": bad value '" + value +
                        "' for key '" + key + "'");
    }
  }
  if (cfg.alpha <= 0 || cfg.alpha > 1) throw parse_error("config: alpha must be in (0, 1]");
  if (cfg.omega_c < 0) throw parse_error("config: omega_c must be non-negative");
  if (cfg.canvas % 8 != 0 || cfg.canvas < 16)
    throw parse_error("config: canvas must be a multiple of 8, at least 16");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.accum_steps < 1)
    throw parse_error("config: epochs/batch_size/accum_steps out of range");
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw parse_error("config: cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

// Canonical rendering in fixed key order; hashing this pins the run
// configuration in reports.
inline std::string serialize_config(const TrainConfig& c) {
  char buf[640];
  std::snprintf(buf, sizeof buf,
                "alpha = %.6g\n"
                "delta_ratio = %.6g\n"
                "omega_c = %.6g\n"
                "p_norm = %s\n"
                "lr_phase1 = %.6g\n"
                "lr_phase2 = %.6g\n"
                "epochs = %d\n"
                "batch_size = %d\n"
                "accum_steps = %d\n"
                "patience = %d\n"
                "sched_factor = %.6g\n"
                "seed = %llu\n"
                "canvas = %zu\n"
                "classes = %zu\n"
                "train_frac_b = %.6g\n",
                c.alpha, c.delta_ratio, c.omega_c,
                c.p_norm == 0 ? "none" : (c.p_norm == 1 ? "1" : "2"), c.lr_phase1, c.lr_phase2,
                c.epochs, c.batch_size, c.accum_steps, c.patience, c.sched_factor,
                (unsigned long long)c.seed, c.canvas, c.classes, c.train_frac_b);
  return buf;
}

inline std::string config_hash(const TrainConfig& c) {
  const std::string s = serialize_config(c);
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)fnv1a64(s.data(), s.size()));
  return buf;
}

}  // namespace tensorfact
