#pragma once
// Corpus ingestion: waveform + transcript + forced alignment in, paragraph
// ordered utterance records with mel, F0, energy and phoneme durations out.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ctxtts/audio.hpp"
#include "ctxtts/matrix.hpp"

namespace ctxtts::corpus {

struct Utterance {
  std::string utterance_id;
  std::string paragraph_id;
  int index_in_paragraph = 0;
  std::string text;
  std::vector<std::string> phonemes;
  std::vector<int> durations;  // frames per phoneme
  std::vector<float> f0;       // Hz per frame, 0 = unvoiced
  std::vector<float> energy;   // per frame
  MatF mel;                    // [frames x mel_bins]

  std::size_t frames() const { return mel.rows(); }
  // Throws AlignmentError when the framing invariants do not hold.
  void validate() const;
};

struct ManifestEntry {
  std::string utterance_id;
  std::string paragraph_id;
  int index = 0;
  std::string text;
  std::string audio_path;      // resolved against the manifest directory
  std::string alignment_path;  // ditto
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;  // grouped by paragraph, reading order

  // JSON Lines; throws IngestError on a missing/garbled file, InvalidInput
  // on duplicate ids or broken paragraph order.
  static CorpusManifest load(const std::string& path);
  void validate() const;
};

struct AlignmentInterval {
  std::string phoneme;
  double start_sec = 0.0;
  double end_sec = 0.0;
};

// Text tier: one "phoneme start_sec end_sec" per line; '#' starts a comment.
std::vector<AlignmentInterval> read_alignment(const std::string& path);

// Quantize interval end times to frame boundaries with cumulative rounding,
// then absorb any residual against `total_frames` into the final phoneme.
std::vector<int> quantize_durations(std::span<const AlignmentInterval> intervals,
                                    const audio::AudioConfig& cfg, std::size_t total_frames,
                                    const std::string& utterance_id, int max_residual = 10);

// Per-phoneme mean of a frame contour. Zero-duration phonemes give 0; with
// voiced_only, zeros are skipped (0 when a phoneme has no voiced frame).
// Throws InvalidInput when sum(durations) != contour length.
std::vector<float> phoneme_average(std::span<const float> contour, std::span<const int> durations,
                                   bool voiced_only = false);

struct Split {
  std::vector<std::string> train, valid, test;
};

struct FeatureStats {
  double pitch_mean = 0.0, pitch_std = 1.0;  // voiced frames, Hz
  double energy_mean = 0.0, energy_std = 1.0, energy_min = 0.0, energy_max = 1.0;
  std::vector<std::string> phones;  // sorted inventory
};

struct IngestOptions {
  std::uint64_t seed = 0;
  std::size_t valid_count = 0;
  std::size_t test_count = 0;
  // When set, every aligned phoneme must belong to this inventory.
  std::optional<std::set<std::string>> phone_set;
  // Residual beyond this many frames is treated as a broken alignment.
  int max_duration_residual = 10;
};

class CorpusStore {
 public:
  const std::vector<Utterance>& utterances() const { return utts_; }
  const Utterance& get(const std::string& id) const;
  bool contains(const std::string& id) const { return by_id_.count(id) != 0; }
  // Paragraph members in reading order.
  std::vector<const Utterance*> paragraph(const std::string& paragraph_id) const;
  std::vector<std::string> paragraph_ids() const;
  const Split& split() const { return split_; }
  const FeatureStats& stats() const { return stats_; }

  void add(Utterance u);
  void set_split(Split s) { split_ = std::move(s); }
  // Phone inventory over every utterance; pitch and energy statistics over
  // the training split (every utterance when the split is empty).
  void compute_stats();

  // Layout: utterances.jsonl, split.json, stats.json, features/<id>.{mel,f0,energy}.
  void save(const std::string& dir) const;
  static CorpusStore load(const std::string& dir);

 private:
  std::vector<Utterance> utts_;
  std::map<std::string, std::size_t> by_id_;
  Split split_;
  FeatureStats stats_;
};

// Build one Utterance from its waveform and alignment.
Utterance ingest_one(const ManifestEntry& entry, const audio::AudioConfig& cfg,
                     const IngestOptions& opts);

CorpusStore ingest(const CorpusManifest& manifest, const audio::AudioConfig& cfg,
                   const IngestOptions& opts);

Split make_split(const std::vector<std::string>& ids_in_order, const IngestOptions& opts);

}  // namespace ctxtts::corpus
