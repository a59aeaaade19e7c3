#pragma once

// Workbench configuration: one struct aggregating every module's settings and
// a small "[section] / key = value" text format with line-anchored errors.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pitchrl/episode.hpp"
#include "pitchrl/errors.hpp"
#include "pitchrl/trpo.hpp"

namespace pitchrl {

struct NetworkConfig {
  // Empty means the default sizing rule (10 n_in, geometric mean, 10 n_out).
  std::vector<int> policy_hidden;
  std::vector<int> value_hidden;
  double policy_output_gain = 0.01;
  double initial_log_var = -10.0;
};

struct ReplayConfig {
  int capacity = 10;               // batches
  int episodes_per_batch = 2;
  double ser_threshold = 2.0;      // g
  int sample_size = 5000;          // steps drawn by BPER
  double success_error = 0.5;      // g, priority-level threshold
  bool her_mean = true;
  bool her_final = true;
};

struct CurriculumConfig {
  double start_cap = 2.0;   // g
  double max_cap = 10.0;    // g
  double increment = 1.0;   // g per promotion
  int test_interval = 25;   // episodes between intermediate tests
  double test_amplitude = 10.0;
};

struct RobustifyConfig {
  int screen_episode = 2500;
  int total_episodes = 5000;
  int screen_window = 100;
  double screen_floor = 5.0;   // g
  double screen_factor = 2.0;
  std::vector<double> latency_bounds = {1, 3, 5, 10};               // ms
  std::vector<double> estimation_bounds = {0.01, 0.02, 0.03, 0.05};  // 3 sigma
  std::vector<double> parametric_bounds = {0.05, 0.07, 0.10, 0.15};  // 3 sigma
};

struct WorkbenchConfig {
  EnvConfig env;
  NetworkConfig network;
  ExplorationConfig exploration;
  TrpoConfig trpo;
  ReplayConfig replay;
  CurriculumConfig curriculum;
  RobustifyConfig robustify;
  std::uint64_t seed = 1;
  int episodes = 5000;
  int max_faults = 5;
  std::string output_dir = "runs";

  void validate() const {
    env.validate();
    exploration.validate();
    trpo.validate();
    if (replay.capacity <= 0) throw InvalidArgument("replay.capacity must be > 0");
    if (replay.episodes_per_batch <= 0) throw InvalidArgument("replay.episodes_per_batch must be > 0");
    if (replay.sample_size <= 0) throw InvalidArgument("replay.sample_size must be > 0");
    if (!(curriculum.start_cap >= 0.0 && curriculum.start_cap <= curriculum.max_cap))
      throw InvalidArgument("curriculum caps must satisfy 0 <= start_cap <= max_cap");
    if (curriculum.test_interval <= 0) throw InvalidArgument("curriculum.test_interval must be > 0");
    if (episodes < 0) throw InvalidArgument("episodes must be >= 0");
    if (robustify.screen_window <= 0 || robustify.screen_episode < 0 ||
        robustify.total_episodes < robustify.screen_episode)
      throw InvalidArgument("robustify episode budgets are inconsistent");
    for (int h : network.policy_hidden)
      if (h <= 0) throw InvalidArgument("network.policy_hidden widths must be > 0");
    for (int h : network.value_hidden)
      if (h <= 0) throw InvalidArgument("network.value_hidden widths must be > 0");
  }
};

namespace detail {

using FieldRef = std::variant<double*, int*, std::uint64_t*, bool*, std::string*, std::vector<int>*,
                              std::vector<double>*, EstimationPlacement*>;

struct Field {
  std::string key;  // "section.name" or "name" for top-level
  FieldRef ref;
  bool semantic = true;  // participates in the digest
};

template <class Cfg>
std::vector<Field> fields_of(Cfg& c) {
  return {
      {"seed", &c.seed},
      {"episodes", &c.episodes, false},
      {"max_faults", &c.max_faults},
      {"output_dir", &c.output_dir, false},
      {"aero.mass", &c.env.aero.mass},
      {"aero.pitch_inertia", &c.env.aero.pitch_inertia},
      {"aero.ref_area", &c.env.aero.ref_area},
      {"aero.ref_length", &c.env.aero.ref_length},
      {"aero.cz_alpha", &c.env.aero.cz_alpha},
      {"aero.cz_eta", &c.env.aero.cz_eta},
      {"aero.cm_alpha", &c.env.aero.cm_alpha},
      {"aero.cm_q", &c.env.aero.cm_q},
      {"aero.cm_eta", &c.env.aero.cm_eta},
      {"aero.mach_nominal", &c.env.aero.mach_nominal},
      {"aero.height_nominal", &c.env.aero.height_nominal},
      {"aero.sea_level_density", &c.env.aero.sea_level_density},
      {"aero.density_scale_height", &c.env.aero.density_scale_height},
      {"aero.mach_singularity_floor", &c.env.aero.mach_singularity_floor},
      {"aero.alpha_limit", &c.env.aero.alpha_limit},
      {"actuator.natural_frequency", &c.env.actuator.natural_frequency},
      {"actuator.damping", &c.env.actuator.damping},
      {"actuator.deflection_limit", &c.env.actuator.deflection_limit},
      {"reference.natural_frequency", &c.env.reference.natural_frequency},
      {"reference.damping", &c.env.reference.damping},
      {"command.episode_steps", &c.env.command.episode_steps},
      {"command.dt", &c.env.command.dt},
      {"command.first_rise_min", &c.env.command.first_rise_min},
      {"command.first_rise_max", &c.env.command.first_rise_max},
      {"command.second_rise_min", &c.env.command.second_rise_min},
      {"command.second_rise_max", &c.env.command.second_rise_max},
      {"command.hold_min", &c.env.command.hold_min},
      {"command.hold_max", &c.env.command.hold_max},
      {"command.transition_window", &c.env.command.transition_window},
      {"reward.w1", &c.env.reward.w1},
      {"reward.w2", &c.env.reward.w2},
      {"reward.w3", &c.env.reward.w3},
      {"reward.w4", &c.env.reward.w4},
      {"reward.eta_max", &c.env.reward.eta_max},
      {"reward.e_u_max", &c.env.reward.e_u_max},
      {"reward.bonus_error", &c.env.reward.bonus_error},
      {"reward.bonus_eta", &c.env.reward.bonus_eta},
      {"env.estimation_placement", &c.env.placement},
      {"env.error_integral_clip", &c.env.error_integral_clip},
      {"env.divergence_penalty", &c.env.divergence_penalty},
      {"network.policy_hidden", &c.network.policy_hidden},
      {"network.value_hidden", &c.network.value_hidden},
      {"network.policy_output_gain", &c.network.policy_output_gain},
      {"network.initial_log_var", &c.network.initial_log_var},
      {"exploration.gain", &c.exploration.gain},
      {"exploration.error_scale", &c.exploration.error_scale},
      {"trpo.gamma", &c.trpo.gamma},
      {"trpo.gae_lambda", &c.trpo.gae_lambda},
      {"trpo.trust_radius", &c.trpo.trust_radius},
      {"trpo.alpha0", &c.trpo.alpha0},
      {"trpo.beta", &c.trpo.beta},
      {"trpo.epochs", &c.trpo.epochs},
      {"trpo.minibatch", &c.trpo.minibatch},
      {"trpo.lr_policy", &c.trpo.lr_policy},
      {"trpo.lr_value", &c.trpo.lr_value},
      {"trpo.alpha_factor", &c.trpo.alpha_factor},
      {"trpo.alpha_range", &c.trpo.alpha_range},
      {"replay.capacity", &c.replay.capacity},
      {"replay.episodes_per_batch", &c.replay.episodes_per_batch},
      {"replay.ser_threshold", &c.replay.ser_threshold},
      {"replay.sample_size", &c.replay.sample_size},
      {"replay.success_error", &c.replay.success_error},
      {"replay.her_mean", &c.replay.her_mean},
      {"replay.her_final", &c.replay.her_final},
      {"curriculum.start_cap", &c.curriculum.start_cap},
      {"curriculum.max_cap", &c.curriculum.max_cap},
      {"curriculum.increment", &c.curriculum.increment},
      {"curriculum.test_interval", &c.curriculum.test_interval},
      {"curriculum.test_amplitude", &c.curriculum.test_amplitude},
      {"robustify.screen_episode", &c.robustify.screen_episode},
      {"robustify.total_episodes", &c.robustify.total_episodes},
      {"robustify.screen_window", &c.robustify.screen_window},
      {"robustify.screen_floor", &c.robustify.screen_floor},
      {"robustify.screen_factor", &c.robustify.screen_factor},
      {"robustify.latency_bounds", &c.robustify.latency_bounds},
      {"robustify.estimation_bounds", &c.robustify.estimation_bounds},
      {"robustify.parametric_bounds", &c.robustify.parametric_bounds},
  };
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// Whole-string decimal parse. Unlike std::stod it keeps subnormals, which
/// shortest-form output does produce.
inline std::optional<double> to_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline double parse_double(const std::string& s, int line, const std::string& key) {
  if (const auto v = to_double(s)) return *v;
  throw ConfigError(line, "'" + key + "': expected a number, got '" + s + "'");
}

template <class Int>
Int parse_integer(const std::string& s, int line, const std::string& key) {
  Int v{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(line, "'" + key + "': expected an integer, got '" + s + "'");
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& s, int line, const std::string& key) {
  std::vector<T> out;
  std::string body = trim(s);
  if (body.size() >= 2 && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, int>)
      out.push_back(parse_integer<int>(item, line, key));
    else
      out.push_back(parse_double(item, line, key));
  }
  return out;
}

struct Assign {
  const std::string& value;
  int line;
  const std::string& key;

  void operator()(double* p) const { *p = parse_double(value, line, key); }
  void operator()(int* p) const { *p = parse_integer<int>(value, line, key); }
  void operator()(std::uint64_t* p) const { *p = parse_integer<std::uint64_t>(value, line, key); }
  void operator()(bool* p) const {
    if (value == "true" || value == "1") *p = true;
    else if (value == "false" || value == "0") *p = false;
    else throw ConfigError(line, "'" + key + "': expected true/false, got '" + value + "'");
  }
  void operator()(std::string* p) const {
    std::string v = value;
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
    *p = v;
  }
  void operator()(std::vector<int>* p) const { *p = parse_list<int>(value, line, key); }
  void operator()(std::vector<double>* p) const { *p = parse_list<double>(value, line, key); }
  void operator()(EstimationPlacement* p) const {
    if (value == "observation") *p = EstimationPlacement::kObservation;
    else if (value == "plant") *p = EstimationPlacement::kPlant;
    else throw ConfigError(line, "'" + key + "': expected observation|plant, got '" + value + "'");
  }
};

struct Render {
  std::string operator()(const double* p) const { return format_double(*p); }
  std::string operator()(const int* p) const { return std::to_string(*p); }
  std::string operator()(const std::uint64_t* p) const { return std::to_string(*p); }
  std::string operator()(const bool* p) const { return *p ? "true" : "false"; }
  std::string operator()(const std::string* p) const { return "\"" + *p + "\""; }
  std::string operator()(const std::vector<int>* p) const {
    std::string s = "[";
    for (std::size_t i = 0; i < p->size(); ++i) s += (i ? ", " : "") + std::to_string((*p)[i]);
    return s + "]";
  }
  std::string operator()(const std::vector<double>* p) const {
    std::string s = "[";
    for (std::size_t i = 0; i < p->size(); ++i) s += (i ? ", " : "") + format_double((*p)[i]);
    return s + "]";
  }
  std::string operator()(const EstimationPlacement* p) const {
    return *p == EstimationPlacement::kPlant ? "plant" : "observation";
  }
};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Sets one dotted key ("trpo.gamma") from text. `line` anchors error messages.
inline void set_config_value(WorkbenchConfig& cfg, const std::string& key, const std::string& value,
                             int line = 0) {
  for (auto& f : detail::fields_of(cfg)) {
    if (f.key == key) {
      std::visit(detail::Assign{value, line, key}, f.ref);
      return;
    }
  }
  throw ConfigError(line, "unknown key '" + key + "'");
}

/// Parses the text format. Unknown sections/keys and malformed lines are
/// rejected; fields left out keep their defaults. The result is validated.
inline WorkbenchConfig parse_config(std::string_view text) {
  WorkbenchConfig cfg;
  std::string section;
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    std::string s = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(line, "malformed section header '" + s + "'");
      section = detail::trim(s.substr(1, s.size() - 2));
      bool known = false;
      for (const auto& f : detail::fields_of(cfg))
        if (f.key.rfind(section + ".", 0) == 0) known = true;
      if (!known) throw ConfigError(line, "unknown section '" + section + "'");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value', got '" + s + "'");
    const std::string name = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    const std::string key = section.empty() ? name : section + "." + name;
    if (auto it = seen.find(key); it != seen.end())
      throw ConfigError(line, "duplicate key '" + key + "' (first set on line " +
                                  std::to_string(it->second) + ")");
    seen[key] = line;
    set_config_value(cfg, key, value, line);
  }
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(0, e.what());
  }
  return cfg;
}

inline WorkbenchConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(0, "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text of every field, grouped by section; parse_config of the
/// result reproduces `cfg` exactly.
inline std::string serialize_config(const WorkbenchConfig& cfg) {
  WorkbenchConfig copy = cfg;
  std::string out;
  std::string section;
  for (const auto& f : detail::fields_of(copy)) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += name + " = " + std::visit(detail::Render{}, f.ref) + "\n";
  }
  return out;
}

/// 64-bit FNV-1a over the canonical rendering of every field that affects
/// results (run budget and output location excluded), as 16 hex digits.
inline std::string config_digest(const WorkbenchConfig& cfg) {
  WorkbenchConfig copy = cfg;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : detail::fields_of(copy)) {
    if (!f.semantic) continue;
    h = detail::fnv1a(f.key + "=" + std::visit(detail::Render{}, f.ref) + "\n", h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pitchrl
