#pragma once
// Synthetic paragraph corpus for smoke runs and tests: harmonic vowels and
// nasals, noise fricatives, silence at both ends, with exact alignments.
//
// Layout written under the output directory:
//   manifest.jsonl, lexicon.txt, wav/<id>.wav, align/<id>.txt

#include <cstdint>
#include <string>

#include "ctxtts/audio.hpp"

namespace ctxtts::toy {

struct ToyCorpusOptions {
  std::size_t paragraphs = 3;
  std::size_t sentences = 4;
  std::size_t words_per_sentence = 3;
  std::uint64_t seed = 0;
};

// Returns the number of utterances written.
std::size_t write_toy_corpus(const std::string& dir, const audio::AudioConfig& cfg,
                             const ToyCorpusOptions& opts = {});

}  // namespace ctxtts::toy
