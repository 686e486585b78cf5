#include "ctxtts/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "ctxtts/errors.hpp"

namespace ctxtts::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* want) {
  throw InvalidConfig(key + ": expected " + want + ", got '" + v + "'");
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

Field f_size(const std::string& key, std::size_t& x) {
  return {key, [&x] { return std::to_string(x); }, [&x, key](const std::string& v) { x = parse_int<std::size_t>(key, v); }};
}
Field f_u64(const std::string& key, std::uint64_t& x) {
  return {key, [&x] { return std::to_string(x); }, [&x, key](const std::string& v) { x = parse_int<std::uint64_t>(key, v); }};
}
Field f_int(const std::string& key, int& x) {
  return {key, [&x] { return std::to_string(x); }, [&x, key](const std::string& v) { x = parse_int<int>(key, v); }};
}
Field f_double(const std::string& key, double& x) {
  return {key, [&x] { return format_double(x); }, [&x, key](const std::string& v) { x = parse_double(key, v); }};
}
Field f_bool(const std::string& key, bool& x) {
  return {key, [&x] { return std::string(x ? "true" : "false"); },
          [&x, key](const std::string& v) { x = parse_bool(key, v); }};
}
Field f_string(const std::string& key, std::string& x) {
  return {key, [&x] { return x; }, [&x](const std::string& v) { x = v; }};
}
Field f_words(const std::string& key, std::vector<std::string>& x) {
  return {key,
          [&x] {
            std::string s;
            for (const auto& w : x) s += (s.empty() ? "" : " ") + w;
            return s;
          },
          [&x](const std::string& v) {
            x.clear();
            std::istringstream ss(v);
            for (std::string w; ss >> w;) x.push_back(w);
          }};
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line, section;
  for (int no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw InvalidConfig(origin + ":" + std::to_string(no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig(origin + ":" + std::to_string(no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw InvalidConfig(origin + ":" + std::to_string(no) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    kv[key] = value;
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::vector<Field> audio_fields(audio::AudioConfig& c) {
  return {f_int("audio.sample_rate_hz", c.sample_rate_hz),
          f_double("audio.frame_shift_ms", c.frame_shift_ms),
          f_double("audio.frame_length_ms", c.frame_length_ms),
          f_int("audio.mel_bins", c.mel_bins),
          f_double("audio.fmin_hz", c.fmin_hz),
          f_double("audio.fmax_hz", c.fmax_hz),
          f_double("audio.log_floor", c.log_floor),
          f_double("audio.f0_min_hz", c.f0_min_hz),
          f_double("audio.f0_max_hz", c.f0_max_hz),
          f_double("audio.voicing_threshold", c.voicing_threshold)};
}

std::vector<Field> model_fields(model::ModelConfig& c) {
  return {f_words("model.phones", c.phones),
          f_size("model.d_model", c.d_model),
          f_size("model.encoder_layers", c.encoder_layers),
          f_size("model.encoder_heads", c.encoder_heads),
          f_size("model.encoder_ff", c.encoder_ff),
          f_size("model.encoder_ff_kernel", c.encoder_ff_kernel),
          f_size("model.decoder_blocks", c.decoder_blocks),
          f_size("model.decoder_heads", c.decoder_heads),
          f_size("model.decoder_ff", c.decoder_ff),
          f_size("model.conformer_kernel", c.conformer_kernel),
          f_size("model.melenc_layers", c.melenc_layers),
          f_size("model.melenc_filters", c.melenc_filters),
          f_size("model.melenc_kernel", c.melenc_kernel),
          f_size("model.postnet_layers", c.postnet_layers),
          f_size("model.postnet_channels", c.postnet_channels),
          f_size("model.postnet_kernel", c.postnet_kernel),
          f_size("model.variance_filters", c.variance_filters),
          f_size("model.variance_kernel", c.variance_kernel),
          f_size("model.pitch_bins", c.pitch_bins),
          f_size("model.energy_bins", c.energy_bins),
          f_double("model.pitch_min_hz", c.pitch_min_hz),
          f_double("model.pitch_max_hz", c.pitch_max_hz),
          f_double("model.pitch_mean", c.pitch_mean),
          f_double("model.pitch_std", c.pitch_std),
          f_double("model.energy_mean", c.energy_mean),
          f_double("model.energy_std", c.energy_std),
          f_double("model.energy_min", c.energy_min),
          f_double("model.energy_max", c.energy_max),
          f_double("model.dropout", c.dropout),
          f_double("model.variance_dropout", c.variance_dropout),
          f_size("model.mel_bins", c.mel_bins),
          f_size("model.d_pbe", c.d_pbe),
          f_size("model.semantic_context", c.semantic_context),
          f_size("model.cu_heads", c.cu.heads),
          f_size("model.cu_hidden", c.cu.hidden),
          f_bool("model.cu_pair_position", c.cu.use_pair_position),
          f_bool("model.use_cu", c.use_cu),
          f_bool("model.use_mel_encoder", c.use_mel_encoder),
          f_u64("model.init_seed", c.init_seed)};
}

std::vector<Field> train_fields(trainer::TrainConfig& c) {
  Field schedule{"train.schedule",
                 [&c] { return std::string(c.schedule == trainer::Schedule::kExponential ? "exponential" : "inverse_sqrt"); },
                 [&c](const std::string& v) {
                   if (v == "exponential") c.schedule = trainer::Schedule::kExponential;
                   else if (v == "inverse_sqrt") c.schedule = trainer::Schedule::kInverseSqrt;
                   else bad_value("train.schedule", v, "exponential or inverse_sqrt");
                 }};
  return {f_size("train.batch_size", c.batch_size),
          f_size("train.max_steps", c.max_steps),
          f_size("train.warmup_steps", c.warmup_steps),
          f_double("train.peak_lr", c.peak_lr),
          f_double("train.decay_rate", c.decay_rate),
          schedule,
          f_double("train.beta1", c.beta1),
          f_double("train.beta2", c.beta2),
          f_double("train.epsilon", c.epsilon),
          f_double("train.weight_decay", c.weight_decay),
          f_double("train.grad_clip_norm", c.grad_clip_norm),
          f_size("train.checkpoint_every", c.checkpoint_every),
          f_size("train.valid_every", c.valid_every),
          f_size("train.max_consecutive_failures", c.max_consecutive_failures),
          f_int("train.acoustic_context", c.acoustic_context),
          f_size("train.max_frames", c.max_frames),
          f_double("train.weight_mel_before", c.weights.mel_before),
          f_double("train.weight_mel_after", c.weights.mel_after),
          f_double("train.weight_duration", c.weights.duration),
          f_double("train.weight_pitch", c.weights.pitch),
          f_double("train.weight_energy", c.weights.energy)};
}

std::vector<Field> embedder_fields(semantic::EmbedderSpec& c) {
  return {f_string("embedder.kind", c.kind), f_size("embedder.dim", c.dim), f_u64("embedder.seed", c.seed),
          f_string("embedder.path", c.path)};
}

std::vector<Field> synth_fields(SynthConfig& c) {
  return {f_int("synth.griffin_lim_iters", c.griffin_lim_iters), f_u64("synth.vocoder_seed", c.vocoder_seed),
          f_size("synth.edit_margin", c.edit_margin)};
}

std::vector<Field> RunConfig::fields() {
  std::vector<Field> all;
  auto append = [&all](std::vector<Field> f) { all.insert(all.end(), f.begin(), f.end()); };
  append(audio_fields(audio));
  append(model_fields(model));
  append(train_fields(train));
  append(embedder_fields(embedder));
  append(synth_fields(synth));
  append({f_u64("run.seed", seed), f_size("data.valid_count", valid_count), f_size("data.test_count", test_count),
          f_int("data.max_duration_residual", max_duration_residual)});
  return all;
}

void RunConfig::apply(const KeyValues& kv, const std::string& origin) {
  auto fs = fields();
  for (const auto& [k, v] : kv) {
    auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return f.key == k; });
    if (it == fs.end()) throw InvalidConfig(origin + ": unknown key " + k);
    it->set(v);
    provenance[k] = origin;
  }
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply(parse_key_values(ss.str(), path), "file:" + path);
}

KeyValues RunConfig::values() const {
  auto copy = *this;
  KeyValues kv;
  for (const auto& f : copy.fields()) kv[f.key] = f.get();
  return kv;
}

std::string RunConfig::snapshot() const {
  std::string out;
  for (const auto& [k, v] : values()) {
    auto it = provenance.find(k);
    out += k + " = " + v + "  # " + (it == provenance.end() ? "default" : it->second) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  audio.validate();
  train.validate();
  if (static_cast<std::size_t>(audio.mel_bins) != model.mel_bins) {
    throw InvalidConfig("audio.mel_bins (" + std::to_string(audio.mel_bins) + ") differs from model.mel_bins (" +
                        std::to_string(model.mel_bins) + ")");
  }
  if (model.use_cu && embedder.dim != model.d_pbe) {
    throw InvalidConfig("embedder.dim differs from model.d_pbe");
  }
  if (model.semantic_context < 1) throw InvalidConfig("model.semantic_context must be >= 1");
  if (synth.griffin_lim_iters < 1) throw InvalidConfig("synth.griffin_lim_iters must be >= 1");
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "full") return;
  if (name != "tiny") throw InvalidConfig("unknown preset '" + name + "'");
  KeyValues kv{{"model.d_model", "32"},          {"model.encoder_layers", "1"},   {"model.encoder_heads", "2"},
               {"model.encoder_ff", "64"},       {"model.encoder_ff_kernel", "3"}, {"model.decoder_blocks", "2"},
               {"model.decoder_heads", "2"},     {"model.decoder_ff", "64"},      {"model.conformer_kernel", "7"},
               {"model.melenc_filters", "32"},   {"model.postnet_channels", "32"}, {"model.variance_filters", "32"},
               {"model.pitch_bins", "32"},       {"model.energy_bins", "32"},     {"model.dropout", "0"},
               {"model.variance_dropout", "0"},  {"model.d_pbe", "64"},           {"model.cu_heads", "2"},
               {"model.cu_hidden", "32"},        {"embedder.dim", "64"},          {"train.batch_size", "4"},
               {"train.warmup_steps", "100"},    {"train.decay_rate", "0.9995"},  {"train.peak_lr", "0.003"},
               {"train.checkpoint_every", "500"}, {"train.valid_every", "100"}};
  cfg.apply(kv, "preset:tiny");
}

}  // namespace ctxtts::config
