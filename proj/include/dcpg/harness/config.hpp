#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcpg/distributions.hpp"
#include "dcpg/pg_attention.hpp"
#include "dcpg/rewards.hpp"

namespace dcpg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Every hyperparameter and ablation switch of a run. Defaults are the
// desk-scale settings; the full-scale recipe is reachable through keys.
struct ModelConfig {
  // data
  std::size_t classes = 32;
  std::size_t regions = 8;
  std::size_t tokens = 6;
  std::size_t region_dim = 64;
  std::size_t vocab = 64;
  double noise = 0.1;
  std::size_t train_per_class = 8;
  std::size_t val_per_class = 1;
  std::size_t test_per_class = 1;
  std::uint64_t data_seed = 7;

  // model
  std::size_t word_dim = 32;
  std::size_t hidden = 64;
  std::size_t embed = 64;
  std::size_t gcn_layers = 1;
  bool tied_affinity = false;
  std::size_t decoder_width = 32;
  std::size_t decoder_hidden = 64;
  std::string embedding_file;

  // policy
  std::size_t actions = 100;
  double temperature = 1.0;
  double lambda = 20.0;
  std::size_t heads = 1;
  PgMode pg = PgMode::compound;
  RewardMode reward = RewardMode::r_at_1_plus_ap;
  bool pg_baseline = true;
  double beta = 0.5;
  bool pg_batch_sum = false;
  LabelForward label_forward = LabelForward::hard;

  // objective
  double margin = 0.2;
  bool triplet = true;
  bool instance = true;
  bool decode = true;

  // optimisation
  std::size_t batch = 16;
  std::size_t epochs = 50;
  double lr = 4e-4;
  std::size_t lr_drop_epoch = 25;
  double lr_after = 4e-5;
  std::uint64_t seed = 1;
  bool wall_time = true;

  ActionSpace action_space() const { return {actions, temperature}; }
  double effective_beta() const { return pg_baseline ? beta : 0.0; }

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("invalid config: " + what);
    };
    require(classes >= 2, "classes must be >= 2");
    require(regions >= 1 && tokens >= 1, "regions and tokens must be >= 1");
    require(region_dim >= 1 && word_dim >= 1 && hidden >= 1 && embed >= 1, "dimensions must be positive");
    require(vocab >= 2, "vocab must be >= 2");
    require(noise >= 0.0, "noise must be >= 0");
    require(train_per_class >= 1 && val_per_class >= 1 && test_per_class >= 1, "split sizes must be >= 1");
    require(actions >= 2, "actions must be >= 2");
    require(temperature > 0.0, "temperature must be > 0");
    require(lambda > 0.0, "lambda must be > 0");
    require(heads == 1 || heads == 2, "heads must be 1 or 2");
    require(margin > 0.0, "margin must be > 0");
    require(batch >= 2, "batch must be >= 2");
    require(epochs >= 1, "epochs must be >= 1");
    require(lr > 0.0 && lr_after > 0.0, "learning rates must be > 0");
    require(gcn_layers <= 8, "gcn_layers must be <= 8");
  }
};

inline std::string to_string(PgMode m) {
  switch (m) {
    case PgMode::off: return "off";
    case PgMode::discrete_only: return "discrete";
    case PgMode::continuous_only: return "continuous";
    case PgMode::compound: return "compound";
  }
  return "compound";
}

inline std::string to_string(RewardMode m) {
  switch (m) {
    case RewardMode::r_at_1: return "r1";
    case RewardMode::ap: return "ap";
    case RewardMode::r_at_1_plus_ap: return "r1+ap";
  }
  return "r1+ap";
}

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    std::size_t used = 0;
    unsigned long long u = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct ConfigKey {
  std::string name;
  std::function<std::string(const ModelConfig&)> get;
  std::function<void(ModelConfig&, const std::string&)> set;
};

template <class T>
ConfigKey size_key(std::string name, T ModelConfig::*field) {
  return {name, [field](const ModelConfig& c) { return std::to_string(c.*field); },
          [field, name](ModelConfig& c, const std::string& v) { c.*field = static_cast<T>(parse_uint(name, v)); }};
}

inline ConfigKey double_key(std::string name, double ModelConfig::*field) {
  return {name, [field](const ModelConfig& c) { return format_double(c.*field); },
          [field, name](ModelConfig& c, const std::string& v) { c.*field = parse_double(name, v); }};
}

inline ConfigKey bool_key(std::string name, bool ModelConfig::*field) {
  return {name, [field](const ModelConfig& c) { return std::string(c.*field ? "true" : "false"); },
          [field, name](ModelConfig& c, const std::string& v) { c.*field = parse_bool(name, v); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k{
        size_key("classes", &ModelConfig::classes),
        size_key("regions", &ModelConfig::regions),
        size_key("tokens", &ModelConfig::tokens),
        size_key("region_dim", &ModelConfig::region_dim),
        size_key("vocab", &ModelConfig::vocab),
        double_key("noise", &ModelConfig::noise),
        size_key("train_per_class", &ModelConfig::train_per_class),
        size_key("val_per_class", &ModelConfig::val_per_class),
        size_key("test_per_class", &ModelConfig::test_per_class),
        size_key("data_seed", &ModelConfig::data_seed),
        size_key("word_dim", &ModelConfig::word_dim),
        size_key("hidden", &ModelConfig::hidden),
        size_key("embed", &ModelConfig::embed),
        size_key("gcn_layers", &ModelConfig::gcn_layers),
        bool_key("tied_affinity", &ModelConfig::tied_affinity),
        size_key("decoder_width", &ModelConfig::decoder_width),
        size_key("decoder_hidden", &ModelConfig::decoder_hidden),
        {"embedding_file", [](const ModelConfig& c) { return c.embedding_file; },
         [](ModelConfig& c, const std::string& v) { c.embedding_file = v; }},
        size_key("actions", &ModelConfig::actions),
        double_key("temperature", &ModelConfig::temperature),
        double_key("lambda", &ModelConfig::lambda),
        size_key("heads", &ModelConfig::heads),
        {"pg", [](const ModelConfig& c) { return to_string(c.pg); },
         [](ModelConfig& c, const std::string& v) {
           if (v == "off") c.pg = PgMode::off;
           else if (v == "discrete") c.pg = PgMode::discrete_only;
           else if (v == "continuous") c.pg = PgMode::continuous_only;
           else if (v == "compound") c.pg = PgMode::compound;
           else throw ConfigError("config key 'pg': expected off|discrete|continuous|compound, got '" + v + "'");
         }},
        {"reward", [](const ModelConfig& c) { return to_string(c.reward); },
         [](ModelConfig& c, const std::string& v) {
           if (v == "r1") c.reward = RewardMode::r_at_1;
           else if (v == "ap") c.reward = RewardMode::ap;
           else if (v == "r1+ap") c.reward = RewardMode::r_at_1_plus_ap;
           else throw ConfigError("config key 'reward': expected r1|ap|r1+ap, got '" + v + "'");
         }},
        bool_key("pg_baseline", &ModelConfig::pg_baseline),
        double_key("beta", &ModelConfig::beta),
        bool_key("pg_batch_sum", &ModelConfig::pg_batch_sum),
        {"label_forward", [](const ModelConfig& c) { return std::string(c.label_forward == LabelForward::hard ? "hard" : "soft"); },
         [](ModelConfig& c, const std::string& v) {
           if (v == "hard") c.label_forward = LabelForward::hard;
           else if (v == "soft") c.label_forward = LabelForward::soft;
           else throw ConfigError("config key 'label_forward': expected hard|soft, got '" + v + "'");
         }},
        double_key("margin", &ModelConfig::margin),
        bool_key("triplet", &ModelConfig::triplet),
        bool_key("instance", &ModelConfig::instance),
        bool_key("decode", &ModelConfig::decode),
        size_key("batch", &ModelConfig::batch),
        size_key("epochs", &ModelConfig::epochs),
        double_key("lr", &ModelConfig::lr),
        size_key("lr_drop_epoch", &ModelConfig::lr_drop_epoch),
        double_key("lr_after", &ModelConfig::lr_after),
        size_key("seed", &ModelConfig::seed),
        bool_key("wall_time", &ModelConfig::wall_time),
    };
    return k;
  }();
  return keys;
}

}  // namespace detail

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& k : detail::config_keys()) out.push_back(k.name);
  return out;
}

inline void set_config_value(ModelConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  std::string valid;
  for (const auto& name : config_key_names()) valid += (valid.empty() ? "" : ", ") + name;
  throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
}

inline std::string get_config_value(const ModelConfig& cfg, const std::string& key) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) return k.get(cfg);
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Parses `key = value` lines; `#` starts a comment.
inline void apply_config_text(ModelConfig& cfg, const std::string& text, const std::string& origin = "<config>") {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline ModelConfig load_config_file(const std::string& path, ModelConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(base, buf.str(), path);
  return base;
}

inline std::string config_to_text(const ModelConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

inline std::map<std::string, std::string> config_to_map(const ModelConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& k : detail::config_keys()) out[k.name] = k.get(cfg);
  return out;
}

}  // namespace dcpg
