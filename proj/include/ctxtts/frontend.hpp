#pragma once
// Text to phonemes through a lexicon table.
//
// Lexicon file: one entry per line, "word ph1 ph2 ...". Words are matched
// after lower-casing and stripping punctuation; a word without an entry is
// spelled character by character through single-character entries.

#include <map>
#include <string>
#include <vector>

#include "ctxtts/context.hpp"

namespace ctxtts::frontend {

struct Phonemized {
  std::vector<std::string> phonemes;
  // Phoneme span of each word, in word order.
  std::vector<context::Span> words;
};

class Lexicon {
 public:
  Lexicon() = default;
  // Throws InvalidInput on a missing file or a malformed line.
  static Lexicon load(const std::string& path);

  void add(const std::string& word, std::vector<std::string> phonemes);
  bool contains(const std::string& word) const { return entries_.count(word) != 0; }
  std::size_t size() const { return entries_.size(); }
  std::string to_text() const;

  // Symbol placed at both ends of a sentence; empty for none.
  void set_boundary(std::string symbol) { boundary_ = std::move(symbol); }
  const std::string& boundary() const { return boundary_; }

  // Throws FrontendError when a word cannot be spelled.
  Phonemized phonemize(const std::string& text, bool with_boundaries = true) const;

 private:
  std::map<std::string, std::vector<std::string>> entries_;
  std::string boundary_ = "sil";
};

// Lower-cased words with punctuation removed.
std::vector<std::string> normalize_words(const std::string& text);

}  // namespace ctxtts::frontend
