#pragma once
// Run configuration: flat `section.key = value` text. `[section]` headers
// prefix the keys that follow; `#` starts a comment.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ctxtts/audio.hpp"
#include "ctxtts/model.hpp"
#include "ctxtts/semantic.hpp"
#include "ctxtts/trainer.hpp"

namespace ctxtts::config {

using KeyValues = std::map<std::string, std::string>;

// Throws InvalidConfig with `origin` and the line number on malformed lines.
KeyValues parse_key_values(const std::string& text, const std::string& origin);
// Sorted "key = value" lines.
std::string format_key_values(const KeyValues& kv);

// Shortest text that reads back to the same double.
std::string format_double(double v);

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;  // throws InvalidConfig
};

std::vector<Field> audio_fields(audio::AudioConfig& c);
std::vector<Field> model_fields(model::ModelConfig& c);
std::vector<Field> train_fields(trainer::TrainConfig& c);
std::vector<Field> embedder_fields(semantic::EmbedderSpec& c);

struct SynthConfig {
  int griffin_lim_iters = 60;
  std::uint64_t vocoder_seed = 0;
  // Frames around an edit boundary that the PostNet may change.
  std::size_t edit_margin = 10;
};
std::vector<Field> synth_fields(SynthConfig& c);

struct RunConfig {
  audio::AudioConfig audio;
  model::ModelConfig model;
  trainer::TrainConfig train;
  semantic::EmbedderSpec embedder;
  SynthConfig synth;
  std::uint64_t seed = 0;
  std::size_t valid_count = 1;
  std::size_t test_count = 1;
  int max_duration_residual = 10;
  // Per key: "default", "file:<path>", or "flag".
  std::map<std::string, std::string> provenance;

  std::vector<Field> fields();
  // Applies every pair; unknown keys throw InvalidConfig.
  void apply(const KeyValues& kv, const std::string& origin);
  void apply_file(const std::string& path);
  KeyValues values() const;
  // Sorted key-value text with a provenance comment per line.
  std::string snapshot() const;
  // Cross-section checks (shapes shared between sections).
  void validate() const;
};

// Model presets. "tiny" is sized for CPU overfit runs.
void apply_preset(RunConfig& cfg, const std::string& name);

}  // namespace ctxtts::config
