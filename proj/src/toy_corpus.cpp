#include "ctxtts/toy_corpus.hpp"

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxtts/errors.hpp"

namespace ctxtts::toy {

namespace {

struct Phone {
  enum class Kind { kSilence, kVoiced, kNoise } kind;
  std::vector<double> formants;  // Hz; voiced envelope peaks or noise band centre
  int min_frames, max_frames;
};

const std::map<std::string, Phone>& phone_table() {
  static const std::map<std::string, Phone> t{
      {"sil", {Phone::Kind::kSilence, {}, 4, 4}},
      {"aa", {Phone::Kind::kVoiced, {700, 1200, 2600}, 6, 8}},
      {"iy", {Phone::Kind::kVoiced, {300, 2300, 3000}, 6, 8}},
      {"uw", {Phone::Kind::kVoiced, {320, 900, 2300}, 6, 8}},
      {"eh", {Phone::Kind::kVoiced, {550, 1800, 2500}, 5, 7}},
      {"ow", {Phone::Kind::kVoiced, {500, 850, 2400}, 6, 8}},
      {"m", {Phone::Kind::kVoiced, {250, 1100}, 3, 5}},
      {"n", {Phone::Kind::kVoiced, {280, 1600}, 3, 5}},
      {"l", {Phone::Kind::kVoiced, {350, 1300, 2800}, 3, 5}},
      {"s", {Phone::Kind::kNoise, {5500}, 4, 5}},
      {"sh", {Phone::Kind::kNoise, {3200}, 4, 5}},
      {"f", {Phone::Kind::kNoise, {2000}, 3, 4}},
  };
  return t;
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& words() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> w{
      {"see", {"s", "iy"}},        {"me", {"m", "iy"}},         {"no", {"n", "ow"}},
      {"moon", {"m", "uw", "n"}},  {"fall", {"f", "aa", "l"}},  {"shell", {"sh", "eh", "l"}},
      {"low", {"l", "ow"}},        {"sum", {"s", "aa", "m"}},    {"new", {"n", "uw"}},
      {"fee", {"f", "iy"}},        {"show", {"sh", "ow"}},       {"mellow", {"m", "eh", "l", "ow"}},
  };
  return w;
}

double envelope(const std::vector<double>& formants, double hz) {
  double a = 0.0;
  for (std::size_t k = 0; k < formants.size(); ++k) {
    const double bw = 80.0 + 0.08 * formants[k];
    a += std::exp(-0.5 * std::pow((hz - formants[k]) / bw, 2)) / double(k + 1);
  }
  return a;
}

}  // namespace

std::size_t write_toy_corpus(const std::string& dir, const audio::AudioConfig& cfg, const ToyCorpusOptions& opts) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (opts.paragraphs == 0 || opts.sentences == 0 || opts.words_per_sentence == 0) {
    throw InvalidInput("toy corpus needs at least one paragraph, sentence and word");
  }
  fs::create_directories(fs::path(dir) / "wav");
  fs::create_directories(fs::path(dir) / "align");

  {
    std::ofstream lex(fs::path(dir) / "lexicon.txt");
    for (const auto& [w, ph] : words()) {
      lex << w;
      for (const auto& p : ph) lex << ' ' << p;
      lex << '\n';
    }
  }

  std::mt19937_64 rng(opts.seed);
  const auto& table = phone_table();
  const double sr = cfg.sample_rate_hz;
  const std::size_t hop = cfg.hop_samples();
  const double nyquist = 0.5 * sr;
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
  std::size_t count = 0;

  for (std::size_t p = 0; p < opts.paragraphs; ++p) {
    const std::string pid = "p" + std::to_string(p);
    const double para_f0 = 120.0 + 30.0 * double(p % 3);
    for (std::size_t s = 0; s < opts.sentences; ++s) {
      const std::string uid = pid + "_s" + std::to_string(s);
      std::vector<std::string> text_words, phones{"sil"};
      for (std::size_t k = 0; k < opts.words_per_sentence; ++k) {
        const auto& [w, ph] = words()[rng() % words().size()];
        text_words.push_back(w);
        phones.insert(phones.end(), ph.begin(), ph.end());
      }
      phones.push_back("sil");

      std::vector<int> durs;
      for (const auto& ph : phones) {
        const auto& info = table.at(ph);
        durs.push_back(info.min_frames + int(rng() % std::uint64_t(info.max_frames - info.min_frames + 1)));
      }
      int total = 0;
      for (int d : durs) total += d;
      std::vector<float> wave(std::size_t(total) * hop, 0.0f);

      // Sentence-level declination; later sentences start a little lower.
      const double f0_start = para_f0 * (1.0 - 0.04 * double(s)), f0_end = 0.85 * f0_start;
      double phase = 0.0;
      std::normal_distribution<double> noise(0.0, 1.0);
      double lp = 0.0;
      std::size_t sample = 0;
      std::ofstream align(fs::path(dir) / "align" / (uid + ".txt"));
      align.precision(17);
      int frame = 0;
      for (std::size_t k = 0; k < phones.size(); ++k) {
        const auto& info = table.at(phones[k]);
        const std::size_t n = std::size_t(durs[k]) * hop;
        align << phones[k] << ' ' << double(frame) * double(hop) / sr << ' '
              << double(frame + durs[k]) * double(hop) / sr << '\n';
        for (std::size_t i = 0; i < n; ++i, ++sample) {
          const double t = double(sample) / double(wave.size());
          double v = 0.0;
          if (info.kind == Phone::Kind::kVoiced) {
            const double f0 = f0_start + (f0_end - f0_start) * t;
            phase += 2.0 * std::numbers::pi * f0 / sr;
            for (int h = 1; h * f0 < std::min(4000.0, nyquist); ++h) {
              v += envelope(info.formants, h * f0) * std::sin(h * phase);
            }
            v *= 0.12;
          } else if (info.kind == Phone::Kind::kNoise) {
            // One-pole high-pass noise; the cutoff sets the brightness.
            const double x = noise(rng);
            const double c = info.formants[0] / nyquist;
            lp = (1.0 - c) * lp + c * x;
            v = 0.08 * (x - lp);
          } else {
            v = 1e-4 * noise(rng);
          }
          wave[sample] = float(v);
        }
        frame += durs[k];
      }
      audio::write_wav((fs::path(dir) / "wav" / (uid + ".wav")).string(), {cfg.sample_rate_hz, wave});

      std::string text;
      for (const auto& w : text_words) text += (text.empty() ? "" : " ") + w;
      text += ".";
      text[0] = char(std::toupper(static_cast<unsigned char>(text[0])));
      nlohmann::ordered_json j{{"utterance_id", uid},          {"paragraph_id", pid},
                               {"index", s},                   {"text", text},
                               {"audio_path", "wav/" + uid + ".wav"}, {"alignment_path", "align/" + uid + ".txt"}};
      manifest << j.dump() << '\n';
      ++count;
    }
  }
  return count;
}

}  // namespace ctxtts::toy
