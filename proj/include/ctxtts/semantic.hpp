#pragma once
// Sentence-pair embeddings from a frozen text encoder, and the
// cross-utterance attention that injects them into phoneme features.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <memory>
#include <string>
#include <vector>

#include "ctxtts/context.hpp"
#include "ctxtts/nn.hpp"

namespace ctxtts::semantic {

using context::SentencePair;

// Frozen pair encoder. Implementations must return identical vectors for
// identical pairs for the lifetime of the object.
class PairEmbedder {
 public:
  virtual ~PairEmbedder() = default;
  virtual std::size_t dim() const = 0;
  virtual bool deterministic() const { return true; }
  virtual std::vector<float> embed(const SentencePair& pair) const = 0;
};

// Hashes word uni/bigrams of each side (tagged by side) into a fixed random
// direction per n-gram, sums, and L2-normalizes. No downloads, no state.
class ToyPairEmbedder final : public PairEmbedder {
 public:
  explicit ToyPairEmbedder(std::size_t dim = 768, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
  std::size_t dim() const override { return dim_; }
  std::vector<float> embed(const SentencePair& pair) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Adapter for an exported static pair encoder stored on disk:
//   vocab.txt               one token per line ([CLS], [SEP], [UNK] required)
//   token_embeddings.rec    [vocab x d] feature record
//   segment_embeddings.rec  [2 x d]
//   pooler_weight.rec       [d x d]
//   pooler_bias.rec         [1 x d]
// The pair is tokenized as [CLS] a [SEP] b [SEP] (lower-cased whitespace
// tokens), token+segment embeddings are mean-pooled and passed through a
// tanh pooler.
class FilePairEmbedder final : public PairEmbedder {
 public:
  // Throws EmbedderError when files are missing or inconsistent.
  static std::unique_ptr<FilePairEmbedder> load(const std::string& dir);
  std::size_t dim() const override { return tokens_.cols(); }
  std::vector<float> embed(const SentencePair& pair) const override;

 private:
  FilePairEmbedder() = default;
  std::map<std::string, std::size_t> vocab_;
  MatF tokens_, segments_, pooler_w_, pooler_b_;
};

struct EmbedderSpec {
  std::string kind = "toy";  // "toy" | "file"
  std::size_t dim = 768;
  std::uint64_t seed = 0;
  std::string path;  // for "file"
};

std::unique_ptr<PairEmbedder> make_embedder(const EmbedderSpec& spec);

// [pairs x dim]; row k = embedder.embed(pairs[k]). Throws EmbedderError.
MatF embed_pairs(const std::vector<SentencePair>& pairs, const PairEmbedder& embedder);

struct CUAttentionConfig {
  std::size_t heads = 4;
  std::size_t hidden = 512;
  bool use_pair_position = true;
  double dropout = 0.0;

  void validate() const {
    if (heads == 0 || hidden % heads != 0) throw InvalidConfig("cu hidden must be divisible by heads");
  }
};

// Row indices sorted by the rows' bit patterns.
template <typename T>
std::vector<std::size_t> canonical_row_order(const Mat<T>& m) {
  std::vector<std::size_t> order(m.rows());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::memcmp(m.row(a).data(), m.row(b).data(), m.cols() * sizeof(T)) < 0;
  });
  return order;
}

// Phoneme-level queries attend over the pair embeddings (keys and values).
template <typename T>
class CrossUtteranceAttention {
 public:
  CrossUtteranceAttention() = default;
  CrossUtteranceAttention(nn::ParamStore<T>& ps, const std::string& name, std::size_t d_model,
                          std::size_t d_pbe, std::size_t n_pairs, const CUAttentionConfig& cfg)
      : cfg_(cfg), n_pairs_(n_pairs), d_model_(d_model), d_pbe_(d_pbe),
        attn_(ps, name + ".attn", d_model, d_pbe, cfg.hidden, cfg.heads, d_model) {
    cfg.validate();
    if (cfg.use_pair_position) pair_pos_ = &ps.normal(name + ".pair_position", n_pairs, cfg.hidden, 0.1);
  }

  nn::AttentionResult<T> operator()(const ag::Var<T>& query_seq, const ag::Var<T>& pbes) const {
    if (query_seq.cols() != d_model_ || pbes.cols() != d_pbe_) {
      throw InvalidInput("cu_attend: width mismatch");
    }
    if (pbes.rows() == 0) throw InvalidInput("cu_attend: no pair embeddings");
    if (cfg_.use_pair_position) {
      if (pbes.rows() != n_pairs_) {
        throw InvalidInput("cu_attend: expected " + std::to_string(n_pairs_) + " pair embeddings");
      }
      return attn_(query_seq, pbes, ag::param(*pair_pos_));
    }
    // Keys are reduced in a canonical order so the result is bit-identical
    // under any row permutation; weights are reported in the caller's order.
    const auto order = canonical_row_order(pbes.value());
    auto res = attn_(query_seq, ag::gather_rows(pbes, order));
    for (auto& w : res.weights) {
      Mat<T> back(w.rows(), w.cols());
      for (std::size_t q = 0; q < w.rows(); ++q)
        for (std::size_t k = 0; k < order.size(); ++k) back(q, order[k]) = w(q, k);
      w = std::move(back);
    }
    return res;
  }

  const nn::MultiHeadAttention<T>& attention() const { return attn_; }
  const CUAttentionConfig& config() const { return cfg_; }

 private:
  CUAttentionConfig cfg_;
  std::size_t n_pairs_ = 0, d_model_ = 0, d_pbe_ = 0;
  nn::MultiHeadAttention<T> attn_;
  ag::Parameter<T>* pair_pos_ = nullptr;
};

// [phoneme_hidden | cu_out] -> linear -> d_model.
template <typename T>
class Fuse {
 public:
  Fuse() = default;
  Fuse(nn::ParamStore<T>& ps, const std::string& name, std::size_t d_model)
      : proj_(ps, name, 2 * d_model, d_model) {}

  ag::Var<T> operator()(const ag::Var<T>& phoneme_hidden, const ag::Var<T>& cu_out) const {
    if (phoneme_hidden.rows() != cu_out.rows() || phoneme_hidden.cols() != cu_out.cols()) {
      throw InvalidInput("fuse: sequence length mismatch");
    }
    return proj_(ag::concat_cols<T>({phoneme_hidden, cu_out}));
  }
  const nn::Linear<T>& projection() const { return proj_; }

 private:
  nn::Linear<T> proj_;
};

}  // namespace ctxtts::semantic
