#include "ctxtts/semantic.hpp"

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctxtts/errors.hpp"
#include "ctxtts/record_io.hpp"

namespace ctxtts::semantic {

namespace {

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) {
    for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(w);
  }
  return out;
}

void add_feature(std::vector<double>& acc, const std::string& feature, std::uint64_t seed) {
  std::uint64_t state = fnv1a(feature) ^ seed;
  for (auto& v : acc) {
    const double u = double(splitmix64(state) >> 11) * 0x1.0p-53;  // [0,1)
    v += 2.0 * u - 1.0;
  }
}

}  // namespace

std::vector<float> ToyPairEmbedder::embed(const SentencePair& pair) const {
  std::vector<double> acc(dim_, 0.0);
  add_feature(acc, "[CLS]", seed_);
  add_feature(acc, "[SEP]", seed_);
  const std::string* sides[2] = {&pair.text_a, &pair.text_b};
  for (int s = 0; s < 2; ++s) {
    const std::string tag = s == 0 ? "A\x1f" : "B\x1f";
    const auto w = words(*sides[s]);
    for (std::size_t i = 0; i < w.size(); ++i) {
      add_feature(acc, tag + w[i], seed_);
      if (i + 1 < w.size()) add_feature(acc, tag + w[i] + "\x1e" + w[i + 1], seed_);
    }
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<float> out(dim_);
  for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(norm > 0.0 ? acc[i] / norm : 0.0);
  return out;
}

std::unique_ptr<FilePairEmbedder> FilePairEmbedder::load(const std::string& dir) {
  namespace fs = std::filesystem;
  std::unique_ptr<FilePairEmbedder> e(new FilePairEmbedder());
  const fs::path root(dir);
  try {
    std::ifstream vocab(root / "vocab.txt");
    if (!vocab) throw EmbedderError("missing vocab.txt in " + dir);
    std::string tok;
    while (std::getline(vocab, tok)) {
      if (!tok.empty() && tok.back() == '\r') tok.pop_back();
      if (tok.empty()) continue;
      e->vocab_.emplace(tok, e->vocab_.size());
    }
    e->tokens_ = io::read_record((root / "token_embeddings.rec").string());
    e->segments_ = io::read_record((root / "segment_embeddings.rec").string());
    e->pooler_w_ = io::read_record((root / "pooler_weight.rec").string());
    e->pooler_b_ = io::read_record((root / "pooler_bias.rec").string());
  } catch (const IngestError& ex) {
    throw EmbedderError(ex.what());
  }
  const std::size_t d = e->tokens_.cols();
  if (e->tokens_.rows() != e->vocab_.size()) throw EmbedderError("token table rows differ from vocab size");
  if (e->segments_.rows() != 2 || e->segments_.cols() != d) throw EmbedderError("segment table must be 2 x d");
  if (e->pooler_w_.rows() != d || e->pooler_w_.cols() != d) throw EmbedderError("pooler weight must be d x d");
  if (e->pooler_b_.rows() != 1 || e->pooler_b_.cols() != d) throw EmbedderError("pooler bias must be 1 x d");
  for (const char* special : {"[CLS]", "[SEP]", "[UNK]"}) {
    if (!e->vocab_.count(special)) throw EmbedderError(std::string("vocab lacks ") + special);
  }
  return e;
}

std::vector<float> FilePairEmbedder::embed(const SentencePair& pair) const {
  const std::size_t d = dim();
  std::vector<std::pair<std::size_t, int>> seq;  // (token id, segment)
  auto lookup = [&](const std::string& t) {
    auto it = vocab_.find(t);
    return it == vocab_.end() ? vocab_.at("[UNK]") : it->second;
  };
  seq.emplace_back(lookup("[CLS]"), 0);
  for (const auto& w : words(pair.text_a)) seq.emplace_back(lookup(w), 0);
  seq.emplace_back(lookup("[SEP]"), 0);
  for (const auto& w : words(pair.text_b)) seq.emplace_back(lookup(w), 1);
  seq.emplace_back(lookup("[SEP]"), 1);

  std::vector<double> pooled(d, 0.0);
  for (const auto& [id, seg] : seq) {
    for (std::size_t j = 0; j < d; ++j) pooled[j] += double(tokens_(id, j)) + double(segments_(seg, j));
  }
  for (auto& v : pooled) v /= double(seq.size());
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = pooler_b_(0, j);
    for (std::size_t i = 0; i < d; ++i) acc += pooled[i] * pooler_w_(i, j);
    out[j] = static_cast<float>(std::tanh(acc));
  }
  return out;
}

std::unique_ptr<PairEmbedder> make_embedder(const EmbedderSpec& spec) {
  if (spec.kind == "toy") return std::make_unique<ToyPairEmbedder>(spec.dim, spec.seed);
  if (spec.kind == "file") {
    auto e = FilePairEmbedder::load(spec.path);
    if (e->dim() != spec.dim) {
      throw EmbedderError("embedder at " + spec.path + " has dim " + std::to_string(e->dim()) +
                          ", configured " + std::to_string(spec.dim));
    }
    return e;
  }
  throw InvalidConfig("unknown embedder kind '" + spec.kind + "'");
}

MatF embed_pairs(const std::vector<SentencePair>& pairs, const PairEmbedder& embedder) {
  const std::size_t d = embedder.dim();
  MatF out(pairs.size(), d);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    std::vector<float> v;
    try {
      v = embedder.embed(pairs[k]);
    } catch (const EmbedderError&) {
      throw;
    } catch (const std::exception& ex) {
      throw EmbedderError(std::string("embedder failed: ") + ex.what());
    }
    if (v.size() != d) throw EmbedderError("embedder returned wrong dimension");
    std::copy(v.begin(), v.end(), out.row(k).begin());
  }
  return out;
}

}  // namespace ctxtts::semantic
