// Flat "key = value" configuration with dotted namespaces. Unknown keys are
// errors. Builders resolve a parsed file (plus the CLI base seed) into the
// typed settings of each subsystem.
#pragma once

#include <map>
#include <string>

#include "hsnerf/scene.hpp"
#include "hsnerf/trainer.hpp"

namespace hsnerf::config {

struct Config {
  std::map<std::string, std::string> kv;

  bool has(const std::string& key) const { return kv.count(key) > 0; }
  std::string get_str(const std::string& key, const std::string& def) const;
  int64_t get_int(const std::string& key, int64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
};

Config parse_text(const std::string& text);
Config parse_file(const std::string& path);

scene::SceneParams scene_params(const Config& cfg);
scene::EmitConfig emit_config(const Config& cfg, uint64_t base_seed,
                              int threads);
uint64_t scene_seed(const Config& cfg, uint64_t base_seed);
int sim_channels(const Config& cfg);

// Resolves the training configuration; channel count and scene radius come
// from the dataset, and config_hash is filled from the canonical form.
train::TrainConfig train_config(const Config& cfg, uint64_t base_seed,
                                int threads, const train::Dataset& ds);

std::string train_config_canonical(const train::TrainConfig& cfg);
std::string short_hash(const std::string& text);  // 16 hex chars of SHA-256

struct DetectSettings {
  double threshold = 0.6;
  double shrinkage = 1e-3;
  std::string label_source = "truth";  // "truth" | "ace"
};
DetectSettings detect_settings(const Config& cfg);

}  // namespace hsnerf::config
