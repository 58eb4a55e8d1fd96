#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "votebody/pipeline.hpp"

namespace votebody {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": cannot parse number from \"" + v + "\"");
  }
  if (used != v.size()) throw std::invalid_argument("config key " + key + ": trailing junk in \"" + v + "\"");
  return out;
}

inline int64_t to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  const auto i = static_cast<int64_t>(d);
  if (static_cast<double>(i) != d) throw std::invalid_argument("config key " + key + ": expected integer, got " + v);
  return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::invalid_argument("config key " + key + ": expected boolean, got " + v);
}

}  // namespace detail

// one key=value assignment; throws on unknown keys so typos surface instead of
// silently training with defaults
inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::to_bool;
  using detail::to_double;
  using detail::to_int;
  if (key == "seed") cfg.seed = static_cast<uint64_t>(to_int(key, value));
  else if (key == "train_shard") cfg.train_shard = value;
  else if (key == "eval_shard") cfg.eval_shard = value;
  else if (key == "checkpoint") cfg.checkpoint = value;
  else if (key == "points") cfg.points = to_int(key, value);
  else if (key == "noise_sigma") cfg.noise_sigma = to_double(key, value);
  else if (key == "lr") cfg.learning_rate = to_double(key, value);
  else if (key == "steps") cfg.steps = to_int(key, value);
  else if (key == "checkpoint_every") cfg.checkpoint_every = to_int(key, value);
  else if (key == "grad_accum") cfg.grad_accum = to_int(key, value);
  else if (key == "body_asset") cfg.body_asset = value;
  else if (key == "toy_joints") cfg.toy_joints = to_int(key, value);
  else if (key == "toy_vertices") cfg.toy_vertices = to_int(key, value);
  else if (key == "toy_seed") cfg.toy_seed = static_cast<uint64_t>(to_int(key, value));
  else if (key == "param_supervision") cfg.param_supervision = to_bool(key, value);
  else if (key == "lambda1") cfg.weights.l1 = to_double(key, value);
  else if (key == "lambda2") cfg.weights.l2 = to_double(key, value);
  else if (key == "lambda3") cfg.weights.l3 = to_double(key, value);
  else if (key == "lambda11") cfg.weights.l11 = to_double(key, value);
  else if (key == "lambda12") cfg.weights.l12 = to_double(key, value);
  else if (key == "lambda21") cfg.weights.l21 = to_double(key, value);
  else if (key == "lambda22") cfg.weights.l22 = to_double(key, value);
  else if (key == "lambda31") cfg.weights.l31 = to_double(key, value);
  else if (key == "lambda32") cfg.weights.l32 = to_double(key, value);
  else if (key == "lambda33") cfg.weights.l33 = to_double(key, value);
  else throw std::invalid_argument("unknown config key: " + key);
}

// flat key=value file; '#' starts a comment, blank lines allowed
inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + " line " + std::to_string(line_no) + ": expected key=value");
    apply_config_entry(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

}  // namespace votebody
