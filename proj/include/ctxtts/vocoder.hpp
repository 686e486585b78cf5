#pragma once
// Classical waveform reconstruction from log-mel frames: pseudo-inverse of
// the mel filterbank, then Griffin-Lim phase iterations.

#include <cstdint>

#include "ctxtts/audio.hpp"

namespace ctxtts::vocoder {

// [bins x mel_bins] Moore-Penrose pseudo-inverse of mel_filterbank(cfg).
MatD mel_pseudo_inverse(const audio::AudioConfig& cfg);

// Linear-magnitude spectrogram [frames x bins], clamped at zero.
MatD mel_to_linear(const MatF& log_mel, const audio::AudioConfig& cfg);

// Output has frames * hop samples. Throws InvalidInput on a non-finite mel or
// a width other than cfg.mel_bins.
audio::Wave mel_to_wave(const MatF& log_mel, const audio::AudioConfig& cfg, int iters, std::uint64_t seed);

}  // namespace ctxtts::vocoder
