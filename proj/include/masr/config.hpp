#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "masr/error.hpp"
#include "masr/model.hpp"
#include "masr/training.hpp"

namespace masr {

enum class PipelineModel { mdr, mass, masr };

inline std::string_view to_string(PipelineModel m) {
  switch (m) {
    case PipelineModel::mdr: return "mdr";
    case PipelineModel::mass: return "mass";
    case PipelineModel::masr: return "masr";
  }
  return "?";
}

/// Everything a train run needs. Field defaults are the grid defaults.
struct RunConfig {
  PipelineModel model = PipelineModel::mdr;
  Variant mdr_variant = Variant::ups;
  Variant mass_variant = Variant::ups;
  AttentionKind attention = AttentionKind::mem_metric;
  bool use_bias = true;
  std::size_t dim = 16;
  Hyperparams hyper;
  double alpha = 0.5;
  std::string split;
  std::string out = "out";
  std::string pretrained;       // BPR checkpoint that lets --apr skip Step 1
  std::string mdr_checkpoint;   // masr only
  std::string mass_checkpoint;  // masr only
};

/// Ordered key=value pairs. '#' starts a comment; blank lines are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in,
                                                                         const std::string& source) {
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  };
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error("config", source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) {
      throw Error("config", source + ":" + std::to_string(lineno) + ": empty key");
    }
    for (const auto& kv : out) {
      if (kv.first == key) throw ConfigError(key, "config key '" + key + "' given twice");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

namespace detail {

inline double parse_real(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw ConfigError(key, "config key '" + key + "': '" + v + "' is not a number");
  }
  return x;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key, "config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "config key '" + key + "': expected true or false, got '" + v + "'");
}

inline void require_in(const std::string& key, double x, std::initializer_list<double> allowed) {
  if (std::find(allowed.begin(), allowed.end(), x) != allowed.end()) return;
  std::ostringstream msg;
  msg << "config key '" << key << "': " << x << " is not one of {";
  bool first = true;
  for (double a : allowed) {
    msg << (first ? "" : ", ") << a;
    first = false;
  }
  msg << "}";
  throw ConfigError(key, msg.str());
}

template <class F>
auto wrap_parse(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key, "config key '" + key + "': " + e.what());
  }
}

}  // namespace detail

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "model",         "mdr_variant",    "mass_variant",  "attention",
      "use_bias",      "d",              "learning_rate", "lambda_theta",
      "epochs",        "batch_size",     "negatives_per_positive",
      "epsilon",       "lambda_delta",   "apr_epochs",    "apr_perturb",
      "seed",          "eval_negatives", "alpha",         "split",
      "out",           "pretrained",     "mdr_checkpoint", "mass_checkpoint"};
  return keys;
}

/// Applies one key to `cfg`, validating it against the allowed values.
inline void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  auto& h = cfg.hyper;
  if (key == "model") {
    if (value == "mdr") cfg.model = PipelineModel::mdr;
    else if (value == "mass") cfg.model = PipelineModel::mass;
    else if (value == "masr") cfg.model = PipelineModel::masr;
    else throw ConfigError(key, "config key 'model': expected mdr, mass or masr, got '" + value + "'");
  } else if (key == "mdr_variant") {
    cfg.mdr_variant = parse_variant(value, key);
  } else if (key == "mass_variant") {
    cfg.mass_variant = parse_variant(value, key);
  } else if (key == "attention") {
    cfg.attention = wrap_parse(key, [&] { return parse_attention(value); });
  } else if (key == "use_bias") {
    cfg.use_bias = parse_bool(key, value);
  } else if (key == "d") {
    const auto d = parse_uint(key, value);
    require_in(key, static_cast<double>(d), {8, 16, 32, 64});
    cfg.dim = d;
  } else if (key == "learning_rate") {
    h.learning_rate = parse_real(key, value);
    require_in(key, h.learning_rate, {1e-3, 1e-4});
  } else if (key == "lambda_theta") {
    h.lambda_theta = parse_real(key, value);
    require_in(key, h.lambda_theta, {0.0, 1e-1, 1e-2, 1e-3, 1e-4});
  } else if (key == "epochs" || key == "apr_epochs") {
    const auto e = parse_uint(key, value);
    if (e > 50) throw ConfigError(key, "config key '" + key + "': at most 50 epochs");
    (key == "epochs" ? h.epochs : h.apr_epochs) = e;
  } else if (key == "batch_size" || key == "negatives_per_positive" || key == "eval_negatives") {
    const auto n = parse_uint(key, value);
    if (n == 0) throw ConfigError(key, "config key '" + key + "' must be positive");
    (key == "batch_size" ? h.batch_size : key == "eval_negatives" ? h.eval_negatives : h.negatives) = n;
  } else if (key == "epsilon") {
    h.epsilon = parse_real(key, value);
    require_in(key, h.epsilon, {0.5, 1.0});
  } else if (key == "lambda_delta") {
    h.lambda_delta = parse_real(key, value);
    if (h.lambda_delta <= 0.0) throw ConfigError(key, "config key 'lambda_delta' must be positive");
  } else if (key == "apr_perturb") {
    if (value == "all") h.perturb_all = true;
    else if (value == "embeddings") h.perturb_all = false;
    else throw ConfigError(key, "config key 'apr_perturb': expected all or embeddings");
  } else if (key == "seed") {
    h.seed = parse_uint(key, value);
  } else if (key == "alpha") {
    cfg.alpha = parse_real(key, value);
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) {
      throw ConfigError(key, "config key 'alpha' must lie in [0, 1]");
    }
  } else if (key == "split" || key == "out" || key == "pretrained" || key == "mdr_checkpoint" ||
             key == "mass_checkpoint") {
    if (value.empty()) throw ConfigError(key, "config key '" + key + "' is empty");
    (key == "split"            ? cfg.split
     : key == "out"            ? cfg.out
     : key == "pretrained"     ? cfg.pretrained
     : key == "mdr_checkpoint" ? cfg.mdr_checkpoint
                               : cfg.mass_checkpoint) = value;
  } else {
    throw ConfigError(key, "unknown config key '" + key + "'");
  }
}

inline RunConfig config_from_pairs(const std::vector<std::pair<std::string, std::string>>& kv,
                                   RunConfig cfg = {}) {
  for (const auto& [k, v] : kv) apply_config_value(cfg, k, v);
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open config " + path.string());
  return config_from_pairs(parse_key_values(in, path.string()));
}

/// Cross-key requirements checked before any work starts.
inline void validate_for_training(const RunConfig& cfg) {
  if (cfg.split.empty()) throw ConfigError("split", "missing config key 'split'");
  if (cfg.model == PipelineModel::masr) {
    if (cfg.mdr_checkpoint.empty()) {
      throw ConfigError("mdr_checkpoint", "model = masr needs config key 'mdr_checkpoint'");
    }
    if (cfg.mass_checkpoint.empty()) {
      throw ConfigError("mass_checkpoint", "model = masr needs config key 'mass_checkpoint'");
    }
  }
}

}  // namespace masr
