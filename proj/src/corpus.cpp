#include "ctxtts/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "ctxtts/errors.hpp"
#include "ctxtts/record_io.hpp"
#include "json.hpp"

namespace ctxtts::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

void Utterance::validate() const {
  if (durations.size() != phonemes.size()) {
    throw AlignmentError(utterance_id, "duration count differs from phoneme count");
  }
  long total = 0;
  for (int d : durations) {
    if (d < 0) throw AlignmentError(utterance_id, "negative duration");
    total += d;
  }
  if (static_cast<std::size_t>(total) != mel.rows()) {
    throw AlignmentError(utterance_id, "durations sum to " + std::to_string(total) + " but mel has " +
                                           std::to_string(mel.rows()) + " frames");
  }
  if (f0.size() != mel.rows() || energy.size() != mel.rows()) {
    throw AlignmentError(utterance_id, "f0/energy length differs from mel frame count");
  }
  for (float v : f0) {
    if (v != 0.0f && (v < 30.0f || v > 800.0f)) throw AlignmentError(utterance_id, "f0 out of range");
  }
}

// ---------------------------------------------------------------------------
// Manifest

CorpusManifest CorpusManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(path, "cannot open manifest");
  const fs::path base = fs::path(path).parent_path();
  CorpusManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.utterance_id = j.at("utterance_id").get<std::string>();
      e.paragraph_id = j.at("paragraph_id").get<std::string>();
      e.index = j.at("index").get<int>();
      e.text = j.at("text").get<std::string>();
      e.audio_path = (base / j.at("audio_path").get<std::string>()).string();
      e.alignment_path = (base / j.at("alignment_path").get<std::string>()).string();
      m.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw IngestError(path, "line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  m.validate();
  return m;
}

void CorpusManifest::validate() const {
  std::set<std::string> ids;
  std::set<std::string> closed;
  std::string current;
  int expect = 0;
  for (const auto& e : entries) {
    if (!ids.insert(e.utterance_id).second) {
      throw InvalidInput("duplicate utterance id " + e.utterance_id);
    }
    if (e.paragraph_id != current) {
      if (closed.count(e.paragraph_id)) {
        throw InvalidInput("paragraph " + e.paragraph_id + " is not contiguous in the manifest");
      }
      if (!current.empty()) closed.insert(current);
      current = e.paragraph_id;
      expect = 0;
    }
    if (e.index != expect) {
      throw InvalidInput("utterance " + e.utterance_id + " breaks reading order (index " +
                         std::to_string(e.index) + ", expected " + std::to_string(expect) + ")");
    }
    ++expect;
  }
}

// ---------------------------------------------------------------------------
// Alignment

std::vector<AlignmentInterval> read_alignment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(path, "cannot open alignment");
  std::vector<AlignmentInterval> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    AlignmentInterval iv;
    if (!(ss >> iv.phoneme)) continue;
    if (!(ss >> iv.start_sec >> iv.end_sec) || iv.end_sec < iv.start_sec) {
      throw IngestError(path, "malformed interval: " + line);
    }
    out.push_back(std::move(iv));
  }
  return out;
}

std::vector<int> quantize_durations(std::span<const AlignmentInterval> intervals,
                                    const audio::AudioConfig& cfg, std::size_t total_frames,
                                    const std::string& utterance_id, int max_residual) {
  if (intervals.empty()) throw AlignmentError(utterance_id, "empty alignment");
  const double frames_per_sec = 1000.0 / cfg.frame_shift_ms;
  std::vector<int> durations;
  durations.reserve(intervals.size());
  long prev = 0;
  for (const auto& iv : intervals) {
    const long boundary = std::lround(iv.end_sec * frames_per_sec);
    const long d = std::max(0L, boundary - prev);
    durations.push_back(static_cast<int>(d));
    prev += d;
  }
  const long residual = static_cast<long>(total_frames) - prev;
  if (std::abs(residual) > max_residual) {
    throw AlignmentError(utterance_id, "alignment covers " + std::to_string(prev) + " frames, audio has " +
                                           std::to_string(total_frames));
  }
  // Absorb the residual at the end, borrowing from earlier phonemes when the
  // final one is too short to give frames back.
  long rest = residual;
  for (auto it = durations.rbegin(); it != durations.rend() && rest != 0; ++it) {
    const long take = std::max(rest, -static_cast<long>(*it));
    *it += static_cast<int>(take);
    rest -= take;
  }
  if (rest != 0) throw AlignmentError(utterance_id, "cannot repair duration residual");
  return durations;
}

std::vector<float> phoneme_average(std::span<const float> contour, std::span<const int> durations,
                                   bool voiced_only) {
  long total = 0;
  for (int d : durations) {
    if (d < 0) throw InvalidInput("phoneme_average: negative duration");
    total += d;
  }
  if (static_cast<std::size_t>(total) != contour.size()) {
    throw InvalidInput("phoneme_average: durations sum to " + std::to_string(total) +
                       " but contour has " + std::to_string(contour.size()) + " frames");
  }
  std::vector<float> out(durations.size(), 0.0f);
  std::size_t at = 0;
  for (std::size_t k = 0; k < durations.size(); ++k) {
    double acc = 0.0;
    int n = 0;
    for (int i = 0; i < durations[k]; ++i, ++at) {
      const float v = contour[at];
      if (voiced_only && v <= 0.0f) continue;
      acc += v;
      ++n;
    }
    out[k] = n > 0 ? static_cast<float>(acc / n) : 0.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion

Utterance ingest_one(const ManifestEntry& entry, const audio::AudioConfig& cfg,
                     const IngestOptions& opts) {
  if (!fs::exists(entry.audio_path)) throw IngestError(entry.audio_path);
  if (!fs::exists(entry.alignment_path)) throw IngestError(entry.alignment_path);
  const audio::Wave wave = audio::read_wav(entry.audio_path);
  if (wave.sample_rate_hz != cfg.sample_rate_hz) {
    throw IngestError(entry.audio_path, "sample rate " + std::to_string(wave.sample_rate_hz) +
                                            " differs from configured " +
                                            std::to_string(cfg.sample_rate_hz));
  }
  if (wave.samples.size() < cfg.win_samples()) {
    throw IngestError(entry.audio_path, "shorter than one analysis window");
  }
  Utterance u;
  u.utterance_id = entry.utterance_id;
  u.paragraph_id = entry.paragraph_id;
  u.index_in_paragraph = entry.index;
  u.text = entry.text;
  u.mel = audio::extract_mel(wave.samples, cfg);
  u.f0 = audio::extract_f0(wave.samples, cfg);
  u.energy = audio::frame_energy(u.mel);

  const auto intervals = read_alignment(entry.alignment_path);
  for (const auto& iv : intervals) {
    if (opts.phone_set && !opts.phone_set->count(iv.phoneme)) {
      throw AlignmentError(entry.utterance_id, "phoneme '" + iv.phoneme + "' not in lexicon");
    }
    u.phonemes.push_back(iv.phoneme);
  }
  u.durations = quantize_durations(intervals, cfg, u.mel.rows(), entry.utterance_id,
                                   opts.max_duration_residual);
  u.validate();
  return u;
}

Split make_split(const std::vector<std::string>& ids_in_order, const IngestOptions& opts) {
  if (opts.valid_count + opts.test_count > ids_in_order.size()) {
    throw InvalidConfig("split sizes exceed corpus size");
  }
  std::vector<std::size_t> order(ids_in_order.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> bucket(ids_in_order.size(), 0);
  for (std::size_t i = 0; i < opts.test_count; ++i) bucket[order[i]] = 2;
  for (std::size_t i = 0; i < opts.valid_count; ++i) bucket[order[opts.test_count + i]] = 1;
  Split s;
  for (std::size_t i = 0; i < ids_in_order.size(); ++i) {
    (bucket[i] == 0 ? s.train : bucket[i] == 1 ? s.valid : s.test).push_back(ids_in_order[i]);
  }
  return s;
}

CorpusStore ingest(const CorpusManifest& manifest, const audio::AudioConfig& cfg,
                   const IngestOptions& opts) {
  cfg.validate();
  manifest.validate();
  CorpusStore store;
  std::vector<std::string> ids;
  for (const auto& e : manifest.entries) {
    store.add(ingest_one(e, cfg, opts));
    ids.push_back(e.utterance_id);
  }
  store.set_split(make_split(ids, opts));
  store.compute_stats();
  return store;
}

// ---------------------------------------------------------------------------
// Store

const Utterance& CorpusStore::get(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw InvalidInput("unknown utterance " + id);
  return utts_[it->second];
}

void CorpusStore::add(Utterance u) {
  if (by_id_.count(u.utterance_id)) throw InvalidInput("duplicate utterance id " + u.utterance_id);
  by_id_[u.utterance_id] = utts_.size();
  utts_.push_back(std::move(u));
}

std::vector<const Utterance*> CorpusStore::paragraph(const std::string& paragraph_id) const {
  std::vector<const Utterance*> out;
  for (const auto& u : utts_) {
    if (u.paragraph_id == paragraph_id) out.push_back(&u);
  }
  std::stable_sort(out.begin(), out.end(), [](const Utterance* a, const Utterance* b) {
    return a->index_in_paragraph < b->index_in_paragraph;
  });
  return out;
}

std::vector<std::string> CorpusStore::paragraph_ids() const {
  std::vector<std::string> out;
  for (const auto& u : utts_) {
    if (std::find(out.begin(), out.end(), u.paragraph_id) == out.end()) out.push_back(u.paragraph_id);
  }
  return out;
}

void CorpusStore::compute_stats() {
  FeatureStats s;
  std::set<std::string> phones;
  double psum = 0.0, psq = 0.0;
  std::size_t pn = 0;
  double esum = 0.0, esq = 0.0;
  std::size_t en = 0;
  double emin = std::numeric_limits<double>::infinity();
  double emax = -std::numeric_limits<double>::infinity();
  const std::set<std::string> train(split_.train.begin(), split_.train.end());
  for (const auto& u : utts_) {
    phones.insert(u.phonemes.begin(), u.phonemes.end());
    if (!train.empty() && !train.count(u.utterance_id)) continue;
    for (float v : u.f0) {
      if (v <= 0.0f) continue;
      psum += v;
      psq += double(v) * v;
      ++pn;
    }
    for (float v : u.energy) {
      esum += v;
      esq += double(v) * v;
      emin = std::min(emin, double(v));
      emax = std::max(emax, double(v));
      ++en;
    }
  }
  if (pn > 0) {
    s.pitch_mean = psum / double(pn);
    s.pitch_std = std::sqrt(std::max(psq / double(pn) - s.pitch_mean * s.pitch_mean, 0.0));
    if (s.pitch_std < 1e-6) s.pitch_std = 1.0;
  }
  if (en > 0) {
    s.energy_mean = esum / double(en);
    s.energy_std = std::sqrt(std::max(esq / double(en) - s.energy_mean * s.energy_mean, 0.0));
    if (s.energy_std < 1e-6) s.energy_std = 1.0;
    s.energy_min = emin;
    s.energy_max = emax > emin ? emax : emin + 1.0;
  }
  s.phones.assign(phones.begin(), phones.end());
  stats_ = std::move(s);
}

namespace {

MatF column(const std::vector<float>& v) { return MatF(v.size(), 1, std::vector<float>(v)); }
std::vector<float> flatten(const MatF& m) { return m.storage(); }

json stats_to_json(const FeatureStats& s) {
  return json{{"energy_max", s.energy_max}, {"energy_mean", s.energy_mean},
              {"energy_min", s.energy_min}, {"energy_std", s.energy_std},
              {"phones", s.phones},         {"pitch_mean", s.pitch_mean},
              {"pitch_std", s.pitch_std}};
}

}  // namespace

void CorpusStore::save(const std::string& dir) const {
  fs::create_directories(fs::path(dir) / "features");
  std::ostringstream lines;
  for (const auto& u : utts_) {
    const json j{{"utterance_id", u.utterance_id}, {"paragraph_id", u.paragraph_id},
                 {"index", u.index_in_paragraph},  {"text", u.text},
                 {"phonemes", u.phonemes},         {"durations", u.durations},
                 {"frames", u.frames()}};
    lines << j.dump() << '\n';
    const fs::path base = fs::path(dir) / "features" / u.utterance_id;
    io::write_record(base.string() + ".mel", u.mel);
    io::write_record(base.string() + ".f0", column(u.f0));
    io::write_record(base.string() + ".energy", column(u.energy));
  }
  io::write_file_atomic((fs::path(dir) / "utterances.jsonl").string(), lines.str());
  const json split{{"test", split_.test}, {"train", split_.train}, {"valid", split_.valid}};
  io::write_file_atomic((fs::path(dir) / "split.json").string(), split.dump(2) + "\n");
  io::write_file_atomic((fs::path(dir) / "stats.json").string(), stats_to_json(stats_).dump(2) + "\n");
}

CorpusStore CorpusStore::load(const std::string& dir) {
  const fs::path root(dir);
  const std::string meta = (root / "utterances.jsonl").string();
  std::ifstream in(meta);
  if (!in) throw IngestError(meta, "cannot open");
  CorpusStore store;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Utterance u;
      u.utterance_id = j.at("utterance_id").get<std::string>();
      u.paragraph_id = j.at("paragraph_id").get<std::string>();
      u.index_in_paragraph = j.at("index").get<int>();
      u.text = j.at("text").get<std::string>();
      u.phonemes = j.at("phonemes").get<std::vector<std::string>>();
      u.durations = j.at("durations").get<std::vector<int>>();
      const std::string base = (root / "features" / u.utterance_id).string();
      u.mel = io::read_record(base + ".mel");
      u.f0 = flatten(io::read_record(base + ".f0"));
      u.energy = flatten(io::read_record(base + ".energy"));
      u.validate();
      store.add(std::move(u));
    } catch (const json::exception& ex) {
      throw IngestError(meta, ex.what());
    }
  }
  const auto split_path = root / "split.json";
  if (fs::exists(split_path)) {
    const json j = json::parse(io::read_file(split_path.string()));
    Split s;
    s.train = j.at("train").get<std::vector<std::string>>();
    s.valid = j.at("valid").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    store.set_split(std::move(s));
  }
  store.compute_stats();
  return store;
}

}  // namespace ctxtts::corpus
