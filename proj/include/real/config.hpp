#pragma once

// Run configuration: flat `key = value` text, `#` starts a comment.
// Unknown keys are rejected. `sgd.*` keys set the shared optimizer defaults
// for all three training stages; `sl.*`, `sscl.*` and `red.*` override them
// per stage regardless of line order.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "real/errors.hpp"
#include "real/protocol.hpp"

namespace real {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::config, "config key " + key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error(ErrorKind::config, "config key " + key + ": expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string fmt_real(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) out += fmt_real(v[i]);
    else out += std::to_string(v[i]);
  }
  return out;
}

struct ConfigKey {
  std::string name;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename Field>
ConfigKey real_key(std::string name, Field field) {
  return {name,
          [name, field](PipelineConfig& c, const std::string& v) { field(c) = parse_real(name, v); },
          [field](const PipelineConfig& c) { return fmt_real(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
ConfigKey count_key(std::string name, Field field) {
  return {name,
          [name, field](PipelineConfig& c, const std::string& v) {
            field(c) = static_cast<std::size_t>(parse_uint(name, v));
          },
          [field](const PipelineConfig& c) {
            return std::to_string(field(const_cast<PipelineConfig&>(c)));
          }};
}

template <typename Field>
ConfigKey seed_key(std::string name, Field field) {
  return {name,
          [name, field](PipelineConfig& c, const std::string& v) { field(c) = RngSeed{parse_uint(name, v)}; },
          [field](const PipelineConfig& c) {
            return std::to_string(field(const_cast<PipelineConfig&>(c)).value);
          }};
}

inline void add_stage_keys(std::vector<ConfigKey>& keys, const std::string& prefix,
                           TrainConfig& (*stage)(PipelineConfig&)) {
  keys.push_back(real_key(prefix + ".lr", [stage](PipelineConfig& c) -> double& { return stage(c).lr; }));
  keys.push_back(real_key(prefix + ".momentum", [stage](PipelineConfig& c) -> double& { return stage(c).momentum; }));
  keys.push_back(real_key(prefix + ".weight_decay", [stage](PipelineConfig& c) -> double& { return stage(c).weight_decay; }));
  keys.push_back(count_key(prefix + ".batch", [stage](PipelineConfig& c) -> std::size_t& { return stage(c).batch_size; }));
}

inline TrainConfig& sl_stage(PipelineConfig& c) { return c.sl; }
inline TrainConfig& sscl_stage(PipelineConfig& c) { return c.sscl; }
inline TrainConfig& red_stage(PipelineConfig& c) { return c.red.sgd; }

/// Every recognized key, in a fixed order.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    using C = PipelineConfig;
    k.push_back(count_key("data.classes", [](C& c) -> std::size_t& { return c.synthetic.classes; }));
    k.push_back(count_key("data.dim", [](C& c) -> std::size_t& { return c.synthetic.dim; }));
    k.push_back(count_key("data.train_per_class", [](C& c) -> std::size_t& { return c.synthetic.train_per_class; }));
    k.push_back(count_key("data.test_per_class", [](C& c) -> std::size_t& { return c.synthetic.test_per_class; }));
    k.push_back(real_key("data.separation", [](C& c) -> double& { return c.synthetic.separation; }));
    k.push_back(real_key("data.noise", [](C& c) -> double& { return c.synthetic.noise; }));
    k.push_back({"backbone.hidden",
                 [](C& c, const std::string& v) {
                   c.hidden.clear();
                   for (const auto& s : split_list(v)) c.hidden.push_back(parse_uint("backbone.hidden", s));
                 },
                 [](const C& c) { return join(c.hidden); }});
    k.push_back(count_key("backbone.d_cnn", [](C& c) -> std::size_t& { return c.d_cnn; }));
    k.push_back({"sgd.milestones",
                 [](C& c, const std::string& v) {
                   std::vector<double> m;
                   for (const auto& s : split_list(v)) m.push_back(parse_real("sgd.milestones", s));
                   c.sl.schedule.milestones = c.sscl.schedule.milestones = c.red.sgd.schedule.milestones = m;
                 },
                 [](const C& c) { return join(c.sl.schedule.milestones); }});
    k.push_back({"sgd.lr_divisor",
                 [](C& c, const std::string& v) {
                   c.sl.schedule.divisor = c.sscl.schedule.divisor = c.red.sgd.schedule.divisor =
                       parse_real("sgd.lr_divisor", v);
                 },
                 [](const C& c) { return fmt_real(c.sl.schedule.divisor); }});
    add_stage_keys(k, "sl", sl_stage);
    k.push_back(count_key("sl.epochs", [](C& c) -> std::size_t& { return c.sl.epochs; }));
    add_stage_keys(k, "sscl", sscl_stage);
    k.push_back(count_key("sscl.epochs", [](C& c) -> std::size_t& { return c.sscl.epochs; }));
    k.push_back(real_key("sscl.jitter", [](C& c) -> double& { return c.jitter; }));
    k.push_back(real_key("sscl.mask", [](C& c) -> double& { return c.mask; }));
    k.push_back(count_key("sscl.d_proj", [](C& c) -> std::size_t& { return c.d_proj; }));
    k.push_back(count_key("sscl.d_pred_hidden", [](C& c) -> std::size_t& { return c.d_pred_hidden; }));
    add_stage_keys(k, "red", red_stage);
    k.push_back(real_key("red.lambda", [](C& c) -> double& { return c.red.lambda; }));
    k.push_back(count_key("red.epochs", [](C& c) -> std::size_t& { return c.red.epochs; }));
    k.push_back(real_key("analytic.gamma", [](C& c) -> double& { return c.gamma; }));
    k.push_back(count_key("analytic.d_b", [](C& c) -> std::size_t& { return c.d_b; }));
    k.push_back(real_key("analytic.buffer_scale", [](C& c) -> double& { return c.buffer_scale; }));
    k.push_back(count_key("analytic.chunk", [](C& c) -> std::size_t& { return c.update_chunk; }));
    k.push_back(count_key("plan.k", [](C& c) -> std::size_t& { return c.phases; }));
    k.push_back({"pipeline.arm", [](C& c, const std::string& v) { c.arm = parse_arm(v); },
                 [](const C& c) { return std::string(arm_name(c.arm)); }});
    k.push_back(seed_key("seed.data", [](C& c) -> RngSeed& { return c.seeds.data; }));
    k.push_back(seed_key("seed.plan", [](C& c) -> RngSeed& { return c.seeds.plan; }));
    k.push_back(seed_key("seed.init", [](C& c) -> RngSeed& { return c.seeds.init; }));
    k.push_back(seed_key("seed.shuffle", [](C& c) -> RngSeed& { return c.seeds.shuffle; }));
    k.push_back(seed_key("seed.augment", [](C& c) -> RngSeed& { return c.seeds.augment; }));
    k.push_back(seed_key("seed.buffer", [](C& c) -> RngSeed& { return c.seeds.buffer; }));
    return k;
  }();
  return keys;
}

inline void apply_shared_sgd(PipelineConfig& c, const std::string& key, const std::string& v) {
  const std::string field = key.substr(4);  // after "sgd."
  for (TrainConfig* t : {&c.sl, &c.sscl, &c.red.sgd}) {
    if (field == "lr") t->lr = parse_real(key, v);
    else if (field == "momentum") t->momentum = parse_real(key, v);
    else if (field == "weight_decay") t->weight_decay = parse_real(key, v);
    else if (field == "batch") t->batch_size = static_cast<std::size_t>(parse_uint(key, v));
  }
}

inline bool is_shared_sgd_key(const std::string& key) {
  return key == "sgd.lr" || key == "sgd.momentum" || key == "sgd.weight_decay" || key == "sgd.batch";
}

}  // namespace detail

/// Sets every seed.* from one master seed.
inline void apply_master_seed(PipelineConfig& c, std::uint64_t master) {
  const RngSeed m{master};
  c.seeds.data = derive_seed(m, 0);
  c.seeds.plan = derive_seed(m, 1);
  c.seeds.init = derive_seed(m, 2);
  c.seeds.shuffle = derive_seed(m, 3);
  c.seeds.augment = derive_seed(m, 4);
  c.seeds.buffer = derive_seed(m, 5);
  c.synthetic.seed = c.seeds.data;
}

inline void validate(const PipelineConfig& c) {
  c.sl.validate();
  c.sscl.validate();
  c.red.validate();
  if (!(c.gamma > 0.0)) throw Error(ErrorKind::config, "analytic.gamma must be > 0");
  if (c.d_b == 0 || c.d_cnn == 0) throw Error(ErrorKind::config, "analytic.d_b and backbone.d_cnn must be >= 1");
  if (c.update_chunk == 0) throw Error(ErrorKind::config, "analytic.chunk must be >= 1");
  if (c.phases == 0) throw Error(ErrorKind::config, "plan.k must be >= 1");
  AugmentationPolicy(c.jitter, c.mask, c.seeds.augment);
}

/// Parses config text on top of `base`. Errors carry the 1-based line number.
inline PipelineConfig parse_config(const std::string& text, PipelineConfig base = {}) {
  std::map<std::string, std::pair<std::string, std::size_t>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw LocatedError(ErrorKind::config, line_no, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto& keys = detail::config_keys();
    const bool known = detail::is_shared_sgd_key(key) ||
                       std::any_of(keys.begin(), keys.end(), [&](const auto& k) { return k.name == key; });
    if (!known) {
      throw LocatedError(ErrorKind::config, line_no, "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    entries[key] = {value, line_no};
  }
  PipelineConfig c = std::move(base);
  auto apply = [&](const std::string& key, const std::string& value, std::size_t ln) {
    try {
      if (detail::is_shared_sgd_key(key)) {
        detail::apply_shared_sgd(c, key, value);
        return;
      }
      for (const auto& k : detail::config_keys())
        if (k.name == key) k.set(c, value);
    } catch (const Error& e) {
      throw LocatedError(ErrorKind::config, ln, "config line " + std::to_string(ln) + ": " + e.what());
    }
  };
  for (const auto& [key, v] : entries)
    if (detail::is_shared_sgd_key(key)) apply(key, v.first, v.second);
  for (const auto& [key, v] : entries)
    if (!detail::is_shared_sgd_key(key)) apply(key, v.first, v.second);
  c.synthetic.seed = c.seeds.data;
  validate(c);
  return c;
}

/// Resolved configuration as ordered (key, value) pairs; parse_config of the
/// rendered text reproduces the same configuration.
inline std::vector<std::pair<std::string, std::string>> config_entries(const PipelineConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : detail::config_keys()) out.emplace_back(k.name, k.get(c));
  return out;
}

inline std::string render_config(const PipelineConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace real
