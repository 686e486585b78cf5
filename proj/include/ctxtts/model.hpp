#pragma once
// The context-aware acoustic model.
//
//   phonemes(prev|cur|next) -> encoder -> CU attention + fuse
//     -> variance adaptor (duration, pitch, energy; length regulation)
//     -> [frame hidden | masked mel-encoder(concat mel)] -> projection
//     -> Conformer decoder -> mel_before
//     -> splice ground truth outside the masked frames -> PostNet residual

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ctxtts/context.hpp"
#include "ctxtts/nn.hpp"
#include "ctxtts/semantic.hpp"

namespace ctxtts::model {

using ag::Var;
using context::Span;
using context::TrainingExample;

struct ModelConfig {
  std::vector<std::string> phones;
  std::size_t d_model = 256;
  std::size_t encoder_layers = 4;
  std::size_t encoder_heads = 2;
  std::size_t encoder_ff = 1024;
  std::size_t encoder_ff_kernel = 9;
  std::size_t decoder_blocks = 4;
  std::size_t decoder_heads = 2;
  std::size_t decoder_ff = 1024;
  std::size_t conformer_kernel = 15;
  std::size_t melenc_layers = 2;
  std::size_t melenc_filters = 256;
  std::size_t melenc_kernel = 3;
  std::size_t postnet_layers = 5;
  std::size_t postnet_channels = 256;
  std::size_t postnet_kernel = 5;
  std::size_t variance_filters = 256;
  std::size_t variance_kernel = 3;
  std::size_t pitch_bins = 256;
  std::size_t energy_bins = 256;
  double pitch_min_hz = 50.0;
  double pitch_max_hz = 600.0;
  // Normalization statistics, filled from the training corpus.
  double pitch_mean = 150.0, pitch_std = 50.0;
  double energy_mean = 1.0, energy_std = 1.0, energy_min = 0.0, energy_max = 10.0;
  double dropout = 0.1;
  double variance_dropout = 0.5;
  std::size_t mel_bins = 80;
  std::size_t d_pbe = 768;
  std::size_t semantic_context = 2;  // L; the model sees 2L pair embeddings
  semantic::CUAttentionConfig cu;
  // Ablation switches: both off gives the plain backbone, only CU gives the
  // pair-embedding model.
  bool use_cu = true;
  bool use_mel_encoder = true;
  std::uint64_t init_seed = 0;

  std::size_t vocab_size() const { return phones.size(); }
  std::size_t n_pairs() const { return 2 * semantic_context; }
  // Throws InvalidConfig.
  void validate() const;
};

// Bin table for pitch: index 0 is unvoiced; voiced values map to
// 1 + (number of edges below the value), edges log-spaced over
// [pitch_min_hz, pitch_max_hz].
std::vector<double> pitch_bin_edges(const ModelConfig& cfg);
std::size_t pitch_bucket(const ModelConfig& cfg, double hz);
std::vector<double> energy_bin_edges(const ModelConfig& cfg);
std::size_t energy_bucket(const ModelConfig& cfg, double energy);

// Length regulator index: frame f belongs to phoneme map[f].
std::vector<std::size_t> expand_index(const std::vector<int>& durations);

// Frame count for a predicted log-duration: max(1, round(exp(x) - 1)).
int duration_from_log(double log_duration);

enum class Mode { kTrain, kInfer };

struct ForwardOptions {
  Mode mode = Mode::kTrain;
  // Dropout is active only when a generator is supplied.
  std::mt19937_64* dropout_rng = nullptr;
};

template <typename T>
struct VarianceOutputs {
  Var<T> frame_hidden;       // [T_fr x d_model]
  Var<T> log_duration_pred;  // [T_ph x 1]
  Var<T> pitch_pred;         // [T_ph x 1], normalized
  Var<T> energy_pred;        // [T_ph x 1], normalized
  std::vector<int> durations;
  std::vector<std::size_t> frame_to_phoneme;
};

template <typename T>
struct ModelOutputs {
  Var<T> log_duration_pred, pitch_pred, energy_pred;
  Var<T> mel_before, mel_spliced, mel_after;
  std::vector<int> durations;        // frames per phoneme actually used
  std::vector<bool> mask_flags;      // per output frame; true = model-generated
  Mat<T> input_mel;                  // model-visible mel (masked rows hold NaN)
  Span current_phoneme_span;
  Span current_frame_span;
  std::vector<std::size_t> frame_to_phoneme;
  std::vector<Mat<T>> cu_weights;    // per head [T_ph x n_pairs]

  std::size_t frames() const { return mel_after.rows(); }
  // mel_after restricted to the current sentence.
  Mat<T> current_mel() const;
  // Per-frame F0 from predicted (generated phonemes) or target pitch.
  std::vector<float> frame_pitch_hz(const ModelConfig& cfg, const TrainingExample& ex) const;
};

// Transformer block with post-norm and a convolutional feed-forward.
template <typename T>
class FftBlock {
 public:
  FftBlock() = default;
  FftBlock(nn::ParamStore<T>& ps, const std::string& name, std::size_t d, std::size_t heads,
           std::size_t ff, std::size_t ff_kernel, double dropout);
  Var<T> operator()(const Var<T>& x, std::mt19937_64* rng, std::vector<Mat<T>>* weights = nullptr) const;

 private:
  nn::MultiHeadAttention<T> attn_;
  nn::LayerNorm<T> ln1_, ln2_;
  nn::Conv1d<T> ff1_, ff2_;
  T dropout_ = T(0);
};

// Macaron Conformer block (pre-norm): half FF, MHSA, conv module, half FF, LN.
template <typename T>
class ConformerBlock {
 public:
  ConformerBlock() = default;
  ConformerBlock(nn::ParamStore<T>& ps, const std::string& name, std::size_t d, std::size_t heads,
                 std::size_t ff, std::size_t conv_kernel, double dropout);
  Var<T> operator()(const Var<T>& x, std::mt19937_64* rng, std::vector<Mat<T>>* weights = nullptr) const;

 private:
  Var<T> feed_forward(const nn::LayerNorm<T>& ln, const nn::Linear<T>& a, const nn::Linear<T>& b,
                      const Var<T>& x, std::mt19937_64* rng) const;
  nn::LayerNorm<T> ln_ff1_, ln_attn_, ln_conv_, ln_dw_, ln_ff2_, ln_out_;
  nn::Linear<T> ff1_a_, ff1_b_, ff2_a_, ff2_b_;
  nn::MultiHeadAttention<T> attn_;
  nn::Linear<T> pw1_, pw2_;
  ag::Parameter<T>* dw_weight_ = nullptr;
  ag::Parameter<T>* dw_bias_ = nullptr;
  T dropout_ = T(0);
};

// conv -> ReLU -> LN -> dropout, twice, then a scalar projection per step.
template <typename T>
class VariancePredictor {
 public:
  VariancePredictor() = default;
  VariancePredictor(nn::ParamStore<T>& ps, const std::string& name, std::size_t d,
                    std::size_t filters, std::size_t kernel, double dropout);
  Var<T> operator()(const Var<T>& x, std::mt19937_64* rng) const;

 private:
  nn::Conv1d<T> c1_, c2_;
  nn::LayerNorm<T> ln1_, ln2_;
  nn::Linear<T> out_;
  T dropout_ = T(0);
};

template <typename T>
class AcousticModel {
 public:
  explicit AcousticModel(const ModelConfig& cfg);
  AcousticModel(const AcousticModel&) = delete;
  AcousticModel& operator=(const AcousticModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  ModelOutputs<T> forward(const TrainingExample& ex, const MatF& pbes, const ForwardOptions& opt) const;

  // Stages, exposed for probing.
  Var<T> phoneme_encode(const std::vector<std::size_t>& ids,
                        const std::vector<context::Segment>& segments, std::mt19937_64* rng) const;
  nn::AttentionResult<T> cu_attend(const Var<T>& hidden, const Var<T>& pbes) const;
  Var<T> fuse(const Var<T>& hidden, const Var<T>& cu_out) const;
  // durations: per phoneme, context::kPredictDuration to predict. Pitch and
  // energy embeddings use targets where has_targets and the duration is known.
  VarianceOutputs<T> variance_adapt(const Var<T>& hidden, const TrainingExample& ex, Mode mode,
                                    std::mt19937_64* rng) const;
  // mel rows flagged in `masked` are replaced by the learned MASK vector.
  Var<T> masked_mel_encode(const Mat<T>& mel, const std::vector<bool>& masked,
                           std::mt19937_64* rng) const;
  Var<T> decode(const Var<T>& frame_hidden, const Var<T>& melenc_out, std::mt19937_64* rng,
                std::vector<Mat<T>>* weights = nullptr) const;
  struct Refined {
    Var<T> mel_spliced;
    Var<T> mel_after;
  };
  Refined splice_and_refine(const Var<T>& mel_before, const Mat<T>& ground_truth,
                            const std::vector<bool>& generated, std::mt19937_64* rng) const;
  Var<T> postnet(const Var<T>& mel, std::mt19937_64* rng) const;

  // PostNet receptive radius in frames: layers * (kernel / 2).
  std::size_t postnet_radius() const { return cfg_.postnet_layers * (cfg_.postnet_kernel / 2); }

 private:
  ModelConfig cfg_;
  nn::ParamStore<T> params_;
  nn::Embedding<T> token_emb_, segment_emb_;
  std::vector<FftBlock<T>> encoder_;
  semantic::CrossUtteranceAttention<T> cu_;
  semantic::Fuse<T> fuse_;
  VariancePredictor<T> duration_pred_, pitch_pred_, energy_pred_;
  nn::Embedding<T> pitch_emb_, energy_emb_;
  ag::Parameter<T>* mask_embedding_ = nullptr;
  std::vector<nn::Conv1d<T>> melenc_conv_;
  std::vector<nn::LayerNorm<T>> melenc_ln_;
  nn::Linear<T> decoder_in_;
  std::vector<ConformerBlock<T>> decoder_;
  nn::LayerNorm<T> decoder_ln_;
  nn::Linear<T> mel_out_;
  std::vector<nn::Conv1d<T>> postnet_;
};

extern template class AcousticModel<float>;
extern template class AcousticModel<double>;

}  // namespace ctxtts::model
