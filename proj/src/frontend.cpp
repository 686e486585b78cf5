#include "ctxtts/frontend.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "ctxtts/errors.hpp"

namespace ctxtts::frontend {

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read lexicon " + path);
  Lexicon lex;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word) || word[0] == '#') continue;
    std::vector<std::string> phones;
    for (std::string p; ss >> p;) phones.push_back(p);
    if (phones.empty()) throw InvalidInput(path + ":" + std::to_string(no) + ": entry without phonemes");
    lex.add(word, std::move(phones));
  }
  return lex;
}

void Lexicon::add(const std::string& word, std::vector<std::string> phonemes) {
  entries_[word] = std::move(phonemes);
}

std::string Lexicon::to_text() const {
  std::string out;
  for (const auto& [w, ps] : entries_) {
    out += w;
    for (const auto& p : ps) out += " " + p;
    out += "\n";
  }
  return out;
}

Phonemized Lexicon::phonemize(const std::string& text, bool with_boundaries) const {
  Phonemized out;
  const bool bounds = with_boundaries && !boundary_.empty();
  if (bounds) out.phonemes.push_back(boundary_);
  for (const auto& w : normalize_words(text)) {
    const std::size_t begin = out.phonemes.size();
    auto it = entries_.find(w);
    if (it != entries_.end()) {
      out.phonemes.insert(out.phonemes.end(), it->second.begin(), it->second.end());
    } else {
      for (char c : w) {
        auto ct = entries_.find(std::string(1, c));
        if (ct == entries_.end()) throw FrontendError("cannot phonemize '" + w + "'");
        out.phonemes.insert(out.phonemes.end(), ct->second.begin(), ct->second.end());
      }
    }
    out.words.push_back({begin, out.phonemes.size()});
  }
  if (bounds) out.phonemes.push_back(boundary_);
  return out;
}

}  // namespace ctxtts::frontend
