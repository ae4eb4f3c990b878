#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cstt/model_config.hpp"
#include "cstt/synth.hpp"

namespace cstt {

struct TrainConfig {
  double lr = 1e-4;
  std::vector<std::size_t> decay_epochs{50, 100};
  double decay_factor = 10.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 60;
  double lambda = 1.0;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::size_t workers = 1;
  // Validate every n epochs; 0 validates only after the last epoch.
  std::size_t eval_every = 1;

  void validate() const;
};

// Everything a run needs. Clip geometry (frames, individuals, ...) is shared
// by the generator and the model and is kept in sync by the setters below.
struct RunConfig {
  GeneratorConfig data;
  std::size_t clips = 2000;
  ModelConfig model;
  TrainConfig train;

  void validate() const;
};

// `key = value` lines; `#` starts a comment. Unset keys keep their defaults.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

// Applies one setting; throws ConfigError naming the key.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_key(const RunConfig& cfg, const std::string& key);
const std::vector<std::string>& config_keys();

// Every key, one per line, in the file format above.
std::string format_config(const RunConfig& cfg);
// Typed JSON object with every key.
std::string config_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& json);

// Empty when the checkpoint's model can be loaded into `want`; otherwise a
// description of each incompatible field.
std::string model_incompatibility(const ModelConfig& have, const ModelConfig& want);

}  // namespace cstt
