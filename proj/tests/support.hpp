#pragma once
// Shared fixtures: temporary directories, the toy corpus, tiny models.

#include <atomic>
#include <cstring>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <unistd.h>

#include "ctxtts/config.hpp"
#include "ctxtts/context.hpp"
#include "ctxtts/corpus.hpp"
#include "ctxtts/frontend.hpp"
#include "ctxtts/model.hpp"
#include "ctxtts/toy_corpus.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using namespace ctxtts;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("ctxtts_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  std::string str(const std::string& sub = {}) const { return sub.empty() ? path_.string() : (path_ / sub).string(); }

 private:
  fs::path path_;
};

// Byte-level equality; NaN payloads compare equal to themselves.
template <typename T>
bool bit_equal(const Mat<T>& a, const Mat<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

template <typename T>
Mat<T> random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat<T> m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = T(u(rng));
  return m;
}

// The toy corpus written and ingested once per process.
struct ToyCorpus {
  TempDir dir{"toy"};
  corpus::CorpusStore store;
  frontend::Lexicon lexicon;
  audio::AudioConfig audio;
};

inline const ToyCorpus& toy_corpus() {
  static const std::unique_ptr<ToyCorpus> c = [] {
    auto t = std::make_unique<ToyCorpus>();
    toy::write_toy_corpus(t->dir.str(), t->audio);
    corpus::IngestOptions opts;
    t->store = corpus::ingest(corpus::CorpusManifest::load(t->dir.str("manifest.jsonl")), t->audio, opts);
    t->lexicon = frontend::Lexicon::load(t->dir.str("lexicon.txt"));
    return t;
  }();
  return *c;
}

// Tiny-preset run configuration with the toy corpus inventory and statistics.
inline config::RunConfig tiny_run_config() {
  config::RunConfig cfg;
  config::apply_preset(cfg, "tiny");
  const auto& st = toy_corpus().store.stats();
  cfg.model.phones = st.phones;
  cfg.model.pitch_mean = st.pitch_mean;
  cfg.model.pitch_std = st.pitch_std;
  cfg.model.energy_mean = st.energy_mean;
  cfg.model.energy_std = st.energy_std;
  cfg.model.energy_min = st.energy_min;
  cfg.model.energy_max = st.energy_max;
  return cfg;
}

inline std::vector<const corpus::Utterance*> toy_paragraph(std::size_t p) {
  return toy_corpus().store.paragraph("p" + std::to_string(p));
}

}  // namespace testsupport
