#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dgm/trainer.hpp"

namespace dgm {

/// Raised for malformed or unknown configuration; the CLI maps it to exit 2.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
  if (used != v.size())
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
  if (used != v.size())
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline std::vector<std::int64_t> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<std::int64_t> out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(parse_int(key, trim(cell)));
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a list, got '" + v + "'");
  return out;
}

}  // namespace detail

/// Applies "section.key" = value pairs onto a RunConfig, rejecting unknown
/// keys by name.
inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  using detail::parse_int_list;
  static const std::map<std::string, std::function<void(RunConfig&, const std::string&,
                                                        const std::string&)>>
      setters = {
          {"model.variant", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v != "dgma" && v != "dgmw")
               throw ConfigError("config: key '" + k + "' must be dgma or dgmw, got '" + v + "'");
             c.variant = v;
           }},
          {"model.latent_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.latent_dim = parse_int(k, v); }},
          {"model.label_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.label_dim = parse_int(k, v); }},
          {"model.g_hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.g_hidden = parse_int_list(k, v); }},
          {"model.d_hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.d_hidden = parse_int_list(k, v); }},
          {"model.precision", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v != "f64" && v != "f32")
               throw ConfigError("config: key '" + k + "' must be f64 or f32, got '" + v + "'");
             c.precision = v;
           }},
          {"masks.s_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.s_max = parse_double(k, v); }},
          {"losses.lambda_ru", [](RunConfig& c, const std::string& k, const std::string& v) { c.lambda_ru = parse_double(k, v); }},
          {"losses.lambda_gp", [](RunConfig& c, const std::string& k, const std::string& v) { c.lambda_gp = parse_double(k, v); }},
          {"losses.n_critic", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_critic = parse_int(k, v); }},
          {"losses.gp_point", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v != "interpolate" && v != "fake")
               throw ConfigError("config: key '" + k + "' must be interpolate or fake, got '" + v + "'");
             c.gp_point = v;
           }},
          {"schedule.epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.epochs = parse_int(k, v); }},
          {"schedule.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_int(k, v); }},
          {"schedule.epochs_growth", [](RunConfig& c, const std::string& k, const std::string& v) { c.epochs_growth = parse_double(k, v); }},
          {"schedule.lr_g", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr_g = parse_double(k, v); }},
          {"schedule.lr_d", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr_d = parse_double(k, v); }},
          {"schedule.lr_e", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr_e = parse_double(k, v); }},
          {"schedule.adam_beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_beta1 = parse_double(k, v); }},
          {"schedule.adam_beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_beta2 = parse_double(k, v); }},
          {"schedule.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
          {"schedule.eval_every_epoch", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_every_epoch = parse_bool(k, v); }},
          {"schedule.jt_epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.jt_epochs = parse_int(k, v); }},
          {"replay.enabled", [](RunConfig& c, const std::string& k, const std::string& v) { c.replay_enabled = parse_bool(k, v); }},
          {"replay.batch_total", [](RunConfig& c, const std::string& k, const std::string& v) { c.replay_total = parse_int(k, v); }},
          {"expansion.enabled", [](RunConfig& c, const std::string& k, const std::string& v) { c.expansion_enabled = parse_bool(k, v); }},
          {"data.kind", [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v != "gaussian2d" && v != "idx")
               throw ConfigError("config: key '" + k + "' must be gaussian2d or idx, got '" + v + "'");
             c.data_kind = v;
           }},
          {"data.tasks", [](RunConfig& c, const std::string& k, const std::string& v) { c.tasks = parse_int(k, v); }},
          {"data.classes_per_task", [](RunConfig& c, const std::string& k, const std::string& v) { c.classes_per_task = parse_int(k, v); }},
          {"data.samples_per_class", [](RunConfig& c, const std::string& k, const std::string& v) { c.samples_per_class = parse_int(k, v); }},
          {"data.train_images", [](RunConfig& c, const std::string&, const std::string& v) { c.idx_train_images = v; }},
          {"data.train_labels", [](RunConfig& c, const std::string&, const std::string& v) { c.idx_train_labels = v; }},
          {"data.test_images", [](RunConfig& c, const std::string&, const std::string& v) { c.idx_test_images = v; }},
          {"data.test_labels", [](RunConfig& c, const std::string&, const std::string& v) { c.idx_test_labels = v; }},
          {"data.downsample2x", [](RunConfig& c, const std::string& k, const std::string& v) { c.downsample2x = parse_bool(k, v); }},
          {"data.per_class_cap", [](RunConfig& c, const std::string& k, const std::string& v) { c.per_class_cap = parse_int(k, v); }},
          {"data.permutation_seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.permutation_seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
      };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(cfg, key, value);
}

/// Parses the sectioned key=value format:
///   [schedule]
///   epochs = 10        # comment
inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open file '" + path + "'");
  RunConfig cfg;
  std::string line, section;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section header at " + path + ":" +
                          std::to_string(lineno));
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at " + path + ":" + std::to_string(lineno));
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config: key '" + key + "' appears before any [section]");
    apply_config_entry(cfg, section + "." + key, value);
  }
  return cfg;
}

/// `--set section.key=value` override.
inline void apply_override(RunConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: --set expects section.key=value, got '" + kv + "'");
  apply_config_entry(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
}

}  // namespace dgm
