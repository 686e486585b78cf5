#pragma once
// Inference orchestration: context-mode synthesis, sequential paragraph
// reading, and span editing of recorded utterances.

#include <optional>
#include <string>
#include <vector>

#include "ctxtts/context.hpp"
#include "ctxtts/frontend.hpp"
#include "ctxtts/model.hpp"
#include "ctxtts/semantic.hpp"

namespace ctxtts::synth {

using context::Span;
using corpus::Utterance;

enum class Mode { kFullContext, kPrevSpeechOnly, kTextOnly, kEdit };

// "full", "prev", "text", "edit"; throws InvalidRequest otherwise.
Mode parse_mode(const std::string& name);
std::string mode_name(Mode m);

// One sentence of a paragraph: text only, or a recorded/cached utterance.
struct ParagraphLine {
  std::string id;
  std::string text;
  std::optional<Utterance> speech;
};

struct SynthesisRequest {
  Mode mode = Mode::kPrevSpeechOnly;
  std::vector<ParagraphLine> paragraph;
  std::size_t target = 0;
};

struct SynthesisResult {
  std::string id;
  std::vector<std::string> phonemes;
  std::vector<int> durations;
  MatF mel;                 // current sentence [frames x mel_bins]
  std::vector<float> f0;    // per frame, from predicted pitch
  // Model-visible acoustic frames that preceded the current sentence.
  MatF preceding_context_mel;

  // The result as an utterance usable as acoustic context.
  Utterance as_utterance(const std::string& paragraph_id, int index, const std::string& text) const;
};

struct SynthOptions {
  int acoustic_context = 1;
  std::size_t max_frames = 3000;
  std::size_t edit_margin = 10;
};

struct EditRequest {
  Utterance base;
  // Recorded neighbours in reading order; base must appear among them at
  // `base_index`, or the list may be empty.
  std::vector<Utterance> paragraph;
  std::size_t base_index = 0;
  Span words;  // [first, last) word indices of the base text
  std::string replacement;
};

struct EditResult {
  MatF mel;                // full edited utterance
  std::vector<float> f0;
  std::vector<std::string> phonemes;
  std::vector<int> durations;
  std::string text;
  Span generated;          // frames produced by the model (edited coordinates)
  Span band;               // frames taken from the refined output
  MatF refined;            // model's post-PostNet mel for the whole edited sentence
  bool unchanged = false;  // empty span and empty replacement
};

class Synthesizer {
 public:
  Synthesizer(const model::AcousticModel<float>& model, const semantic::PairEmbedder& embedder,
              const frontend::Lexicon& lexicon, const SynthOptions& opts = {});

  // Throws InvalidRequest when the mode's acoustic context is missing,
  // FrontendError when text cannot be phonemized.
  SynthesisResult synthesize(const SynthesisRequest& req) const;

  // Synthesizes every line without speech, in order; each result becomes the
  // cached speech of its line for the sentences after it.
  std::vector<SynthesisResult> read_paragraph(std::vector<ParagraphLine> lines, Mode mode,
                                              const std::string& paragraph_id = "para") const;

  // Throws EditError when the span does not fit the base utterance.
  EditResult edit(const EditRequest& req) const;

 private:
  Utterance text_utterance(const ParagraphLine& line, int index) const;

  const model::AcousticModel<float>& model_;
  const semantic::PairEmbedder& embedder_;
  const frontend::Lexicon& lexicon_;
  context::PhoneVocab vocab_;
  SynthOptions opts_;
};

}  // namespace ctxtts::synth
