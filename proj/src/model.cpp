#include "ctxtts/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctxtts/errors.hpp"

namespace ctxtts::model {

namespace {

template <typename T>
Var<T> drop(const Var<T>& x, T p, std::mt19937_64* rng) {
  if (!rng || p <= T(0)) return x;
  return ag::dropout(x, p, *rng);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidConfig(what);
}

bool odd(std::size_t k) { return k % 2 == 1; }

}  // namespace

void ModelConfig::validate() const {
  require(!phones.empty(), "model: phone vocabulary is empty");
  require(d_model > 0, "model: d_model must be positive");
  require(encoder_layers > 0 && decoder_blocks > 0, "model: need at least one encoder and decoder block");
  require(encoder_heads > 0 && d_model % encoder_heads == 0, "model: d_model not divisible by encoder heads");
  require(decoder_heads > 0 && d_model % decoder_heads == 0, "model: d_model not divisible by decoder heads");
  require(encoder_ff > 0 && decoder_ff > 0, "model: feed-forward widths must be positive");
  require(odd(encoder_ff_kernel) && odd(conformer_kernel) && odd(melenc_kernel) && odd(postnet_kernel) &&
              odd(variance_kernel),
          "model: kernel sizes must be odd");
  require(!use_mel_encoder || (melenc_layers > 0 && melenc_filters > 0), "model: mel encoder needs layers");
  require(postnet_layers > 0 && postnet_channels > 0, "model: postnet needs layers");
  require(variance_filters > 0, "model: variance filters must be positive");
  require(pitch_bins > 1 && energy_bins > 1, "model: need at least two pitch and energy bins");
  require(pitch_min_hz > 0.0 && pitch_max_hz > pitch_min_hz, "model: bad pitch range");
  require(pitch_std > 0.0 && energy_std > 0.0, "model: normalization std must be positive");
  require(energy_max > energy_min, "model: bad energy range");
  require(dropout >= 0.0 && dropout < 1.0 && variance_dropout >= 0.0 && variance_dropout < 1.0,
          "model: dropout must lie in [0,1)");
  require(mel_bins > 0, "model: mel_bins must be positive");
  require(semantic_context >= 1, "model: semantic context L must be >= 1");
  if (use_cu) {
    require(d_pbe > 0, "model: d_pbe must be positive");
    cu.validate();
  }
}

std::vector<double> pitch_bin_edges(const ModelConfig& cfg) {
  std::vector<double> e(cfg.pitch_bins - 1);
  const double lo = std::log(cfg.pitch_min_hz), hi = std::log(cfg.pitch_max_hz);
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = std::exp(lo + double(i + 1) * (hi - lo) / double(cfg.pitch_bins));
  }
  return e;
}

std::size_t pitch_bucket(const ModelConfig& cfg, double hz) {
  if (!(hz >= 0.5 * cfg.pitch_min_hz)) return 0;
  const auto edges = pitch_bin_edges(cfg);
  return 1 + static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), hz) - edges.begin());
}

std::vector<double> energy_bin_edges(const ModelConfig& cfg) {
  std::vector<double> e(cfg.energy_bins - 1);
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = cfg.energy_min + double(i + 1) * (cfg.energy_max - cfg.energy_min) / double(cfg.energy_bins);
  }
  return e;
}

std::size_t energy_bucket(const ModelConfig& cfg, double energy) {
  if (std::isnan(energy)) return 0;
  const auto edges = energy_bin_edges(cfg);
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), energy) - edges.begin());
}

std::vector<std::size_t> expand_index(const std::vector<int>& durations) {
  std::vector<std::size_t> map;
  for (std::size_t k = 0; k < durations.size(); ++k) {
    if (durations[k] < 0) throw InvalidInput("expand_index: negative duration");
    map.insert(map.end(), static_cast<std::size_t>(durations[k]), k);
  }
  return map;
}

int duration_from_log(double log_duration) {
  if (std::isnan(log_duration) || log_duration == std::numeric_limits<double>::infinity()) {
    throw NumericalError("non-finite duration prediction");
  }
  const double d = std::round(std::exp(std::min(log_duration, 20.0)) - 1.0);
  return std::max(1, static_cast<int>(d));
}

template <typename T>
Mat<T> ModelOutputs<T>::current_mel() const {
  return mel_after.value().slice_rows(current_frame_span.begin, current_frame_span.end);
}

template <typename T>
std::vector<float> ModelOutputs<T>::frame_pitch_hz(const ModelConfig& cfg, const TrainingExample& ex) const {
  std::vector<float> out(frame_to_phoneme.size(), 0.0f);
  for (std::size_t f = 0; f < out.size(); ++f) {
    const std::size_t k = frame_to_phoneme[f];
    double hz;
    if (ex.has_targets[k] && ex.durations[k] != context::kPredictDuration) {
      hz = ex.pitch[k];
    } else {
      hz = double(pitch_pred.value()(k, 0)) * cfg.pitch_std + cfg.pitch_mean;
      hz = hz < 0.5 * cfg.pitch_min_hz ? 0.0 : std::clamp(hz, cfg.pitch_min_hz, cfg.pitch_max_hz);
    }
    out[f] = static_cast<float>(hz);
  }
  return out;
}

template <typename T>
FftBlock<T>::FftBlock(nn::ParamStore<T>& ps, const std::string& name, std::size_t d, std::size_t heads,
                      std::size_t ff, std::size_t ff_kernel, double dropout)
    : attn_(ps, name + ".attn", d, d, d, heads, d),
      ln1_(ps, name + ".ln1", d),
      ln2_(ps, name + ".ln2", d),
      ff1_(ps, name + ".ff1", d, ff, ff_kernel),
      ff2_(ps, name + ".ff2", ff, d, 1),
      dropout_(T(dropout)) {}

template <typename T>
Var<T> FftBlock<T>::operator()(const Var<T>& x, std::mt19937_64* rng, std::vector<Mat<T>>* weights) const {
  auto a = attn_(x, x);
  if (weights) *weights = std::move(a.weights);
  Var<T> h = ln1_(ag::add(x, drop(a.output, dropout_, rng)));
  Var<T> f = ff2_(ag::relu(ff1_(h)));
  return ln2_(ag::add(h, drop(f, dropout_, rng)));
}

template <typename T>
ConformerBlock<T>::ConformerBlock(nn::ParamStore<T>& ps, const std::string& name, std::size_t d,
                                  std::size_t heads, std::size_t ff, std::size_t conv_kernel,
                                  double dropout)
    : ln_ff1_(ps, name + ".ff1.ln", d),
      ln_attn_(ps, name + ".attn.ln", d),
      ln_conv_(ps, name + ".conv.ln", d),
      ln_dw_(ps, name + ".conv.dw_ln", d),
      ln_ff2_(ps, name + ".ff2.ln", d),
      ln_out_(ps, name + ".out_ln", d),
      ff1_a_(ps, name + ".ff1.a", d, ff),
      ff1_b_(ps, name + ".ff1.b", ff, d),
      ff2_a_(ps, name + ".ff2.a", d, ff),
      ff2_b_(ps, name + ".ff2.b", ff, d),
      attn_(ps, name + ".attn", d, d, d, heads, d),
      pw1_(ps, name + ".conv.pw1", d, 2 * d),
      pw2_(ps, name + ".conv.pw2", d, d),
      dw_weight_(&ps.weight(name + ".conv.dw.weight", conv_kernel, d, conv_kernel, 1)),
      dw_bias_(&ps.constant(name + ".conv.dw.bias", 1, d, T(0))),
      dropout_(T(dropout)) {}

template <typename T>
Var<T> ConformerBlock<T>::feed_forward(const nn::LayerNorm<T>& ln, const nn::Linear<T>& a,
                                       const nn::Linear<T>& b, const Var<T>& x,
                                       std::mt19937_64* rng) const {
  Var<T> h = drop(ag::silu(a(ln(x))), dropout_, rng);
  return drop(b(h), dropout_, rng);
}

template <typename T>
Var<T> ConformerBlock<T>::operator()(const Var<T>& x0, std::mt19937_64* rng,
                                     std::vector<Mat<T>>* weights) const {
  Var<T> x = ag::add(x0, ag::scale(feed_forward(ln_ff1_, ff1_a_, ff1_b_, x0, rng), T(0.5)));
  Var<T> n = ln_attn_(x);
  auto a = attn_(n, n);
  if (weights) *weights = std::move(a.weights);
  x = ag::add(x, drop(a.output, dropout_, rng));
  Var<T> c = ag::glu(pw1_(ln_conv_(x)));
  c = ag::depthwise_conv1d(c, ag::param(*dw_weight_), ag::param(*dw_bias_));
  c = pw2_(ag::silu(ln_dw_(c)));
  x = ag::add(x, drop(c, dropout_, rng));
  x = ag::add(x, ag::scale(feed_forward(ln_ff2_, ff2_a_, ff2_b_, x, rng), T(0.5)));
  return ln_out_(x);
}

template <typename T>
VariancePredictor<T>::VariancePredictor(nn::ParamStore<T>& ps, const std::string& name, std::size_t d,
                                        std::size_t filters, std::size_t kernel, double dropout)
    : c1_(ps, name + ".conv1", d, filters, kernel),
      c2_(ps, name + ".conv2", filters, filters, kernel),
      ln1_(ps, name + ".ln1", filters),
      ln2_(ps, name + ".ln2", filters),
      out_(ps, name + ".out", filters, 1),
      dropout_(T(dropout)) {}

template <typename T>
Var<T> VariancePredictor<T>::operator()(const Var<T>& x, std::mt19937_64* rng) const {
  Var<T> h = drop(ln1_(ag::relu(c1_(x))), dropout_, rng);
  h = drop(ln2_(ag::relu(c2_(h))), dropout_, rng);
  return out_(h);
}

template <typename T>
AcousticModel<T>::AcousticModel(const ModelConfig& cfg) : cfg_(cfg), params_(cfg.init_seed) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  const double emb_std = 1.0 / std::sqrt(double(d));
  token_emb_ = nn::Embedding<T>(params_, "encoder.token_embedding", cfg_.vocab_size(), d, emb_std);
  segment_emb_ = nn::Embedding<T>(params_, "encoder.segment_embedding", 3, d, emb_std);
  for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) {
    encoder_.emplace_back(params_, "encoder.layers." + std::to_string(i), d, cfg_.encoder_heads,
                          cfg_.encoder_ff, cfg_.encoder_ff_kernel, cfg_.dropout);
  }
  if (cfg_.use_cu) {
    cu_ = semantic::CrossUtteranceAttention<T>(params_, "cu", d, cfg_.d_pbe, cfg_.n_pairs(), cfg_.cu);
    fuse_ = semantic::Fuse<T>(params_, "fuse", d);
  }
  duration_pred_ = VariancePredictor<T>(params_, "variance.duration", d, cfg_.variance_filters,
                                        cfg_.variance_kernel, cfg_.variance_dropout);
  pitch_pred_ = VariancePredictor<T>(params_, "variance.pitch", d, cfg_.variance_filters,
                                     cfg_.variance_kernel, cfg_.variance_dropout);
  energy_pred_ = VariancePredictor<T>(params_, "variance.energy", d, cfg_.variance_filters,
                                      cfg_.variance_kernel, cfg_.variance_dropout);
  pitch_emb_ = nn::Embedding<T>(params_, "variance.pitch_embedding", cfg_.pitch_bins + 1, d, emb_std);
  energy_emb_ = nn::Embedding<T>(params_, "variance.energy_embedding", cfg_.energy_bins, d, emb_std);
  std::size_t dec_in = d;
  if (cfg_.use_mel_encoder) {
    mask_embedding_ = &params_.normal("melenc.mask_embedding", 1, cfg_.mel_bins, 0.1);
    std::size_t in = cfg_.mel_bins;
    for (std::size_t i = 0; i < cfg_.melenc_layers; ++i) {
      const std::string n = "melenc.layers." + std::to_string(i);
      melenc_conv_.emplace_back(params_, n + ".conv", in, cfg_.melenc_filters, cfg_.melenc_kernel);
      melenc_ln_.emplace_back(params_, n + ".ln", cfg_.melenc_filters);
      in = cfg_.melenc_filters;
    }
    dec_in += cfg_.melenc_filters;
  }
  decoder_in_ = nn::Linear<T>(params_, "decoder.input", dec_in, d);
  for (std::size_t i = 0; i < cfg_.decoder_blocks; ++i) {
    decoder_.emplace_back(params_, "decoder.blocks." + std::to_string(i), d, cfg_.decoder_heads,
                          cfg_.decoder_ff, cfg_.conformer_kernel, cfg_.dropout);
  }
  decoder_ln_ = nn::LayerNorm<T>(params_, "decoder.ln", d);
  mel_out_ = nn::Linear<T>(params_, "decoder.mel_out", d, cfg_.mel_bins);
  for (std::size_t i = 0; i < cfg_.postnet_layers; ++i) {
    const std::size_t in = i == 0 ? cfg_.mel_bins : cfg_.postnet_channels;
    const std::size_t out = i + 1 == cfg_.postnet_layers ? cfg_.mel_bins : cfg_.postnet_channels;
    postnet_.emplace_back(params_, "postnet." + std::to_string(i), in, out, cfg_.postnet_kernel);
  }
}

template <typename T>
Var<T> AcousticModel<T>::phoneme_encode(const std::vector<std::size_t>& ids,
                                        const std::vector<context::Segment>& segments,
                                        std::mt19937_64* rng) const {
  if (ids.empty()) throw InvalidInput("phoneme_encode: empty phoneme sequence");
  if (ids.size() != segments.size()) throw InvalidInput("phoneme_encode: segment ids length mismatch");
  for (auto id : ids) {
    if (id >= cfg_.vocab_size()) throw InvalidInput("phoneme_encode: phoneme id out of vocabulary");
  }
  std::vector<std::size_t> seg(segments.size());
  for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = static_cast<std::size_t>(segments[i]);
  Var<T> x = ag::add(token_emb_(ids), segment_emb_(std::move(seg)));
  x = ag::add(x, Var<T>::constant(nn::sinusoid_positions<T>(ids.size(), cfg_.d_model)));
  x = drop(x, T(cfg_.dropout), rng);
  for (const auto& b : encoder_) x = b(x, rng);
  return x;
}

template <typename T>
nn::AttentionResult<T> AcousticModel<T>::cu_attend(const Var<T>& hidden, const Var<T>& pbes) const {
  if (!cfg_.use_cu) throw InvalidConfig("cu_attend: model built without CU attention");
  return cu_(hidden, pbes);
}

template <typename T>
Var<T> AcousticModel<T>::fuse(const Var<T>& hidden, const Var<T>& cu_out) const {
  if (!cfg_.use_cu) throw InvalidConfig("fuse: model built without CU attention");
  return fuse_(hidden, cu_out);
}

template <typename T>
VarianceOutputs<T> AcousticModel<T>::variance_adapt(const Var<T>& hidden, const TrainingExample& ex,
                                                    Mode mode, std::mt19937_64* rng) const {
  const std::size_t n = hidden.rows();
  if (ex.durations.size() != n || ex.pitch.size() != n || ex.energy.size() != n || ex.has_targets.size() != n) {
    throw InvalidInput("variance_adapt: per-phoneme arrays disagree with the phoneme count");
  }
  VarianceOutputs<T> out;
  out.log_duration_pred = duration_pred_(hidden, rng);
  out.durations.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const int d = ex.durations[k];
    if (d == context::kPredictDuration) {
      if (mode == Mode::kTrain) throw InvalidInput("training example lacks durations for " + ex.utterance_id);
      out.durations[k] = duration_from_log(double(out.log_duration_pred.value()(k, 0)));
    } else if (d < 0) {
      throw InvalidInput("variance_adapt: negative duration");
    } else {
      out.durations[k] = d;
    }
  }
  auto known = [&](std::size_t k) { return ex.has_targets[k] && ex.durations[k] != context::kPredictDuration; };

  out.pitch_pred = pitch_pred_(hidden, rng);
  std::vector<std::size_t> pbins(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double hz = known(k) ? double(ex.pitch[k])
                               : double(out.pitch_pred.value()(k, 0)) * cfg_.pitch_std + cfg_.pitch_mean;
    pbins[k] = pitch_bucket(cfg_, hz);
  }
  Var<T> h = ag::add(hidden, pitch_emb_(std::move(pbins)));

  out.energy_pred = energy_pred_(h, rng);
  std::vector<std::size_t> ebins(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double e = known(k) ? double(ex.energy[k])
                              : double(out.energy_pred.value()(k, 0)) * cfg_.energy_std + cfg_.energy_mean;
    ebins[k] = energy_bucket(cfg_, e);
  }
  h = ag::add(h, energy_emb_(std::move(ebins)));

  out.frame_to_phoneme = expand_index(out.durations);
  out.frame_hidden = ag::gather_rows(h, out.frame_to_phoneme);
  return out;
}

template <typename T>
Var<T> AcousticModel<T>::masked_mel_encode(const Mat<T>& mel, const std::vector<bool>& masked,
                                           std::mt19937_64* rng) const {
  if (!cfg_.use_mel_encoder) throw InvalidConfig("masked_mel_encode: model built without mel encoder");
  if (mel.cols() != cfg_.mel_bins) throw InvalidInput("masked_mel_encode: wrong mel width");
  if (masked.size() != mel.rows()) throw InvalidInput("masked_mel_encode: mask length mismatch");
  Var<T> x = ag::where_rows(masked, ag::param(*mask_embedding_), Var<T>::constant(mel));
  for (std::size_t i = 0; i < melenc_conv_.size(); ++i) {
    x = drop(melenc_ln_[i](ag::relu(melenc_conv_[i](x))), T(cfg_.dropout), rng);
  }
  return x;
}

template <typename T>
Var<T> AcousticModel<T>::decode(const Var<T>& frame_hidden, const Var<T>& melenc_out, std::mt19937_64* rng,
                                std::vector<Mat<T>>* weights) const {
  Var<T> x = frame_hidden;
  if (cfg_.use_mel_encoder) {
    if (!melenc_out.defined() || melenc_out.rows() != frame_hidden.rows()) {
      throw InvalidInput("decode: mel encoder output length differs from expanded phoneme length");
    }
    x = ag::concat_cols<T>({frame_hidden, melenc_out});
  }
  x = decoder_in_(x);
  x = ag::add(x, Var<T>::constant(nn::sinusoid_positions<T>(x.rows(), cfg_.d_model)));
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    x = decoder_[i](x, rng, (weights && i + 1 == decoder_.size()) ? weights : nullptr);
  }
  return mel_out_(decoder_ln_(x));
}

template <typename T>
Var<T> AcousticModel<T>::postnet(const Var<T>& mel, std::mt19937_64* rng) const {
  Var<T> y = mel;
  for (std::size_t i = 0; i < postnet_.size(); ++i) {
    y = postnet_[i](y);
    if (i + 1 < postnet_.size()) y = ag::tanh(y);
    y = drop(y, T(cfg_.dropout), rng);
  }
  return y;
}

template <typename T>
typename AcousticModel<T>::Refined AcousticModel<T>::splice_and_refine(const Var<T>& mel_before,
                                                                       const Mat<T>& ground_truth,
                                                                       const std::vector<bool>& generated,
                                                                       std::mt19937_64* rng) const {
  if (!mel_before.value().same_shape(ground_truth)) throw InvalidInput("splice: shape mismatch");
  Refined r;
  r.mel_spliced = ag::where_rows(generated, mel_before, Var<T>::constant(ground_truth));
  r.mel_after = ag::add(r.mel_spliced, postnet(r.mel_spliced, rng));
  return r;
}

template <typename T>
ModelOutputs<T> AcousticModel<T>::forward(const TrainingExample& ex, const MatF& pbes,
                                          const ForwardOptions& opt) const {
  std::mt19937_64* rng = opt.dropout_rng;
  const std::size_t n = ex.phoneme_count();
  if (ex.concat_mel.rows() != ex.mask_flags.size()) throw InvalidInput("forward: mask flags length mismatch");
  if (ex.concat_mel.rows() > 0 && ex.concat_mel.cols() != cfg_.mel_bins) {
    throw InvalidInput("forward: mel width differs from the model's mel_bins");
  }
  if (ex.current_phoneme_span.end > n || ex.current_phoneme_span.begin > ex.current_phoneme_span.end) {
    throw InvalidInput("forward: current phoneme span out of range");
  }

  ModelOutputs<T> out;
  Var<T> h = phoneme_encode(ex.phoneme_ids, ex.segment_ids, rng);
  if (cfg_.use_cu) {
    auto cu = cu_attend(h, Var<T>::constant(pbes.template cast<T>()));
    out.cu_weights = std::move(cu.weights);
    h = fuse(h, cu.output);
  }
  auto va = variance_adapt(h, ex, opt.mode, rng);
  const std::size_t frames = va.frame_to_phoneme.size();
  if (frames == 0) throw InvalidInput("forward: example expands to zero frames");

  // Lay out the model-visible mel on the expanded frame axis; predicted
  // phonemes get fully masked rows.
  Mat<T> mel_in(frames, cfg_.mel_bins);
  std::vector<bool> flags(frames, false);
  std::size_t src = 0, f = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k == ex.current_phoneme_span.begin) out.current_frame_span.begin = f;
    const auto d = static_cast<std::size_t>(va.durations[k]);
    if (ex.durations[k] == context::kPredictDuration) {
      for (std::size_t j = 0; j < d; ++j, ++f) {
        std::fill(mel_in.row(f).begin(), mel_in.row(f).end(), std::numeric_limits<T>::quiet_NaN());
        flags[f] = true;
      }
    } else {
      if (src + d > ex.concat_mel.rows()) throw InvalidInput("forward: durations exceed the mel length");
      for (std::size_t j = 0; j < d; ++j, ++f, ++src) {
        const auto from = ex.concat_mel.row(src);
        std::transform(from.begin(), from.end(), mel_in.row(f).begin(), [](float v) { return T(v); });
        flags[f] = ex.mask_flags[src];
      }
    }
    if (k + 1 == ex.current_phoneme_span.end) out.current_frame_span.end = f;
  }
  if (src != ex.concat_mel.rows()) {
    throw InvalidInput("forward: mel has " + std::to_string(ex.concat_mel.rows()) + " frames, durations cover " +
                       std::to_string(src));
  }
  if (ex.current_phoneme_span.size() == 0) out.current_frame_span = {0, 0};

  Var<T> menc;
  if (cfg_.use_mel_encoder) menc = masked_mel_encode(mel_in, flags, rng);
  out.mel_before = decode(va.frame_hidden, menc, rng);
  auto refined = splice_and_refine(out.mel_before, mel_in, flags, rng);
  out.mel_spliced = refined.mel_spliced;
  out.mel_after = refined.mel_after;
  out.log_duration_pred = va.log_duration_pred;
  out.pitch_pred = va.pitch_pred;
  out.energy_pred = va.energy_pred;
  out.durations = std::move(va.durations);
  out.frame_to_phoneme = std::move(va.frame_to_phoneme);
  out.mask_flags = std::move(flags);
  out.input_mel = std::move(mel_in);
  out.current_phoneme_span = ex.current_phoneme_span;
  return out;
}

template struct ModelOutputs<float>;
template struct ModelOutputs<double>;
template class FftBlock<float>;
template class FftBlock<double>;
template class ConformerBlock<float>;
template class ConformerBlock<double>;
template class VariancePredictor<float>;
template class VariancePredictor<double>;
template class AcousticModel<float>;
template class AcousticModel<double>;

}  // namespace ctxtts::model
