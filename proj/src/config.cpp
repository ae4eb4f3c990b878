#include "cstt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>

#include "cstt/errors.hpp"

namespace cstt {

namespace {

enum class Kind { Int, Real, Bool, Text, IntList };

struct Key {
  const char* name;
  Kind kind;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v +
                      "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected on/off, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  return out;
}

std::string real_str(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string list_str(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string out;
  for (std::size_t x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

std::string bool_str(bool v) { return v ? "on" : "off"; }

// Geometry lives in both the generator and the model config.
#define GEOMETRY(field)                                                              \
  Key {                                                                              \
    #field, Kind::Int, [](const RunConfig& c) { return std::to_string(c.model.field); }, \
        [](RunConfig& c, const std::string& v) {                                     \
          c.model.field = c.data.field = parse_uint(#field, v);                      \
        }                                                                            \
  }
#define UINT(name, expr)                                                        \
  Key {                                                                         \
    name, Kind::Int, [](const RunConfig& c) { return std::to_string(c.expr); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parse_uint(name, v); } \
  }
#define REAL(name, expr)                                                   \
  Key {                                                                    \
    name, Kind::Real, [](const RunConfig& c) { return real_str(c.expr); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parse_real(name, v); } \
  }
#define FLAG(name, expr)                                                   \
  Key {                                                                    \
    name, Kind::Bool, [](const RunConfig& c) { return bool_str(c.expr); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parse_bool(name, v); } \
  }
#define CHOICE(name, expr, parser)                                          \
  Key {                                                                     \
    name, Kind::Text, [](const RunConfig& c) { return to_string(c.expr); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parser(v); }      \
  }

const std::vector<Key>& registry() {
  static const std::vector<Key> keys{
      GEOMETRY(frames),
      GEOMETRY(individuals),
      GEOMETRY(input_dim),
      GEOMETRY(group_classes),
      GEOMETRY(action_classes),
      GEOMETRY(scene_channels),
      GEOMETRY(scene_height),
      GEOMETRY(scene_width),
      Key{"seed", Kind::Int, [](const RunConfig& c) { return std::to_string(c.train.seed); },
          [](RunConfig& c, const std::string& v) {
            c.train.seed = c.data.seed = parse_uint("seed", v);
          }},
      // data
      CHOICE("task_family", data.family, parse_task_family),
      UINT("clips", clips),
      REAL("noise_sigma", data.noise_sigma),
      REAL("step", data.step),
      REAL("min_separation", data.min_separation),
      REAL("meet_distance", data.meet_distance),
      REAL("velocity_scale", data.velocity_scale),
      REAL("embedding_scale", data.embedding_scale),
      CHOICE("position_encoding", data.position_encoding, parse_position_encoding),
      // model
      UINT("width", model.width),
      UINT("heads", model.heads),
      UINT("ffn_multiplier", model.ffn_multiplier),
      UINT("blocks", model.blocks),
      REAL("dropout", model.dropout),
      FLAG("decoder_self_attention", model.decoder_self_attention),
      CHOICE("variant", model.variant, parse_variant),
      FLAG("grg", model.grg),
      UINT("scene_tokens", model.scene_tokens),
      CHOICE("grg_fusion", model.grg_fusion, parse_fusion),
      UINT("clusters", model.clusters),
      FLAG("intra", model.intra),
      FLAG("inter", model.inter),
      CHOICE("cluster_mode", model.cluster_mode, parse_cluster_mode),
      UINT("kmeans_iterations", model.kmeans_iterations),
      CHOICE("cluster_scope", model.cluster_scope, parse_cluster_scope),
      FLAG("cluster_temporal", model.cluster_temporal),
      CHOICE("group_pooling", model.group_pooling, parse_group_pooling),
      CHOICE("individual_pooling", model.individual_pooling, parse_individual_pooling),
      // training
      REAL("lr", train.lr),
      Key{"decay_epochs", Kind::IntList,
          [](const RunConfig& c) { return list_str(c.train.decay_epochs); },
          [](RunConfig& c, const std::string& v) {
            c.train.decay_epochs = parse_list("decay_epochs", v);
          }},
      REAL("decay_factor", train.decay_factor),
      UINT("batch_size", train.batch_size),
      UINT("epochs", train.epochs),
      REAL("lambda", train.lambda),
      REAL("clip_norm", train.clip_norm),
      UINT("workers", train.workers),
      UINT("eval_every", train.eval_every),
  };
  return keys;
}

#undef GEOMETRY
#undef UINT
#undef REAL
#undef FLAG
#undef CHOICE

const Key& lookup(const std::string& key) {
  for (const auto& k : registry())
    if (key == k.name) return k;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(decay_factor > 1.0)) throw ConfigError("decay_factor must be greater than 1");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (workers == 0) throw ConfigError("workers must be at least 1");
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  if (clips < 2) throw ConfigError("clips must be at least 2");
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Key& k = lookup(key);
  if (value.empty()) throw ConfigError("config key '" + key + "' has no value");
  try {
    k.set(cfg, value);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.find("'" + key + "'") != std::string::npos) throw;
    throw ConfigError("config key '" + key + "': " + msg);
  }
}

std::string get_key(const RunConfig& cfg, const std::string& key) { return lookup(key).get(cfg); }

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : registry()) out.emplace_back(k.name);
    return out;
  }();
  return names;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string key = trim(line.substr(0, eq));
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key +
                        "' has no value");
    set_key(base, key, trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : registry()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

std::string config_json(const RunConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& k : registry()) {
    const std::string v = k.get(cfg);
    switch (k.kind) {
      case Kind::Int:
        j[k.name] = parse_uint(k.name, v);
        break;
      case Kind::Real:
        j[k.name] = parse_real(k.name, v);
        break;
      case Kind::Bool:
        j[k.name] = parse_bool(k.name, v);
        break;
      case Kind::Text:
        j[k.name] = v;
        break;
      case Kind::IntList:
        j[k.name] = parse_list(k.name, v);
        break;
    }
  }
  return j.dump();
}

RunConfig config_from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config snapshot: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    std::string text;
    if (value.is_boolean()) {
      text = bool_str(value.get<bool>());
    } else if (value.is_array()) {
      text = list_str(value.get<std::vector<std::size_t>>());
    } else if (value.is_number_float()) {
      text = real_str(value.get<double>());
    } else if (value.is_number()) {
      text = std::to_string(value.get<std::uint64_t>());
    } else {
      text = value.get<std::string>();
    }
    set_key(cfg, key, text);
  }
  return cfg;
}

std::string model_incompatibility(const ModelConfig& have, const ModelConfig& want) {
  static const char* const kArchitecture[] = {
      "frames",         "individuals",  "input_dim",         "group_classes",
      "action_classes", "scene_channels", "scene_height",    "scene_width",
      "width",          "heads",        "ffn_multiplier",    "blocks",
      "decoder_self_attention", "variant", "grg",             "scene_tokens",
      "grg_fusion",     "clusters",     "intra",             "inter",
      "cluster_mode",   "kmeans_iterations", "cluster_scope", "cluster_temporal",
      "group_pooling",  "individual_pooling"};
  RunConfig a, b;
  a.model = have;
  b.model = want;
  std::string out;
  for (const char* key : kArchitecture) {
    const std::string x = get_key(a, key), y = get_key(b, key);
    if (x == y) continue;
    out += (out.empty() ? "" : ", ") + std::string(key) + " " + x + " (checkpoint) vs " + y +
           " (config)";
  }
  return out;
}

}  // namespace cstt
