#pragma once
// Context windows over a paragraph, sentence-pair derivation, and assembly
// of masked training/inference examples.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctxtts/corpus.hpp"

namespace ctxtts::context {

using corpus::Utterance;

enum class Segment : std::uint8_t { kPrev = 0, kCur = 1, kNext = 2 };

// Marks model-hidden cells of concat_mel. Any arithmetic that touches it
// yields NaN, so a leak into the model would be loud.
inline const float kMaskSentinel = std::numeric_limits<float>::quiet_NaN();

// Duration placeholder for phonemes whose frame count the model predicts.
inline constexpr int kPredictDuration = -1;

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

// An utterance with phonemes but no durations/mel is "text-only": its
// phonemes reach the encoder but contribute no acoustic frames.
inline bool has_acoustics(const Utterance& u) { return !u.durations.empty(); }

struct ContextWindow {
  Utterance current;
  std::vector<Utterance> preceding;  // nearest last
  std::vector<Utterance> following;  // nearest first
  int L = 2;
};

struct SentencePair {
  std::string text_a;
  std::string text_b;
  int pair_index = 0;
};

struct TrainingExample {
  std::string utterance_id;
  std::vector<std::size_t> phoneme_ids;
  std::vector<Segment> segment_ids;
  // Frames per phoneme; kPredictDuration where the model must decide.
  std::vector<int> durations;
  std::vector<float> pitch;   // per-phoneme voiced-mean F0 (Hz)
  std::vector<float> energy;  // per-phoneme mean energy
  // True where pitch/energy targets come from real features.
  std::vector<bool> has_targets;
  // Rows cover phonemes with known durations, in order. Masked rows hold
  // kMaskSentinel.
  MatF concat_mel;
  // Unmasked ground truth for concat_mel rows. Used only for losses.
  MatF target_mel;
  std::vector<bool> mask_flags;
  Span current_phoneme_span;
  Span current_frame_span;
  std::vector<SentencePair> pairs;

  std::size_t phoneme_count() const { return phoneme_ids.size(); }
};

// Phoneme symbol table; id order is the insertion order.
class PhoneVocab {
 public:
  PhoneVocab() = default;
  explicit PhoneVocab(std::vector<std::string> symbols);
  std::size_t size() const { return symbols_.size(); }
  // Throws InvalidInput for an unknown symbol.
  std::size_t id(const std::string& symbol) const;
  bool contains(const std::string& symbol) const { return ids_.count(symbol) != 0; }
  const std::vector<std::string>& symbols() const { return symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, std::size_t> ids_;
};

struct MaskPolicy {
  enum class Kind { kCurrentSentence, kFrameSpans };
  Kind kind = Kind::kCurrentSentence;
  // Concatenated-frame coordinates; each must lie inside the current sentence.
  std::vector<Span> spans;

  static MaskPolicy current_sentence() { return {}; }
  static MaskPolicy frame_spans(std::vector<Span> s) { return {Kind::kFrameSpans, std::move(s)}; }
};

struct AssembleOptions {
  int acoustic_context = 1;
  std::size_t max_frames = 3000;
};

ContextWindow build_window(const std::vector<const Utterance*>& paragraph, std::size_t index, int L);

std::vector<SentencePair> derive_pairs(const ContextWindow& window);

TrainingExample assemble_example(const ContextWindow& window, const MaskPolicy& policy,
                                 const PhoneVocab& vocab, const AssembleOptions& opts = {});

// Model-visible acoustic input: concat_mel with masked rows. Exposed so the
// masking contract can be checked directly.
MatF model_visible_mel(const TrainingExample& ex);

}  // namespace ctxtts::context
