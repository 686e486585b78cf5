#pragma once
// Waveform I/O and frame-level acoustic features.
//
// Framing: frame t is centred on sample t * hop; a signal of N samples has
// ceil(N / hop) frames. Samples outside the signal read as zero.

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctxtts/matrix.hpp"

namespace ctxtts::audio {

struct AudioConfig {
  int sample_rate_hz = 16000;
  double frame_shift_ms = 12.0;
  double frame_length_ms = 48.0;
  int mel_bins = 80;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = -11.512925464970229;  // ln(1e-5)
  // Pitch estimator search range and voicing threshold.
  double f0_min_hz = 50.0;
  double f0_max_hz = 600.0;
  double voicing_threshold = 0.3;

  // Throws InvalidConfig.
  void validate() const;
  std::size_t hop_samples() const;
  std::size_t win_samples() const;
  // Smallest power of two >= win_samples().
  std::size_t n_fft() const;
  std::size_t frame_count(std::size_t samples) const;
};

struct Wave {
  int sample_rate_hz = 0;
  std::vector<float> samples;  // mono, full scale +-1
};

// Reads 16-bit PCM or 32-bit float RIFF/WAVE; multi-channel input is
// averaged to mono. Throws IngestError.
Wave read_wav(const std::string& path);
// 16-bit PCM mono; samples are clipped to [-1, 1].
void write_wav(const std::string& path, const Wave& wave);

// Triangular HTK-mel filters, [mel_bins x (n_fft/2 + 1)], unit peak.
MatD mel_filterbank(const AudioConfig& cfg);

// Short-time Fourier analysis/synthesis with a periodic Hann window of
// win_samples() zero-padded to n_fft(). Backed by FFTW.
class Stft {
 public:
  explicit Stft(const AudioConfig& cfg);
  ~Stft();
  Stft(const Stft&) = delete;
  Stft& operator=(const Stft&) = delete;

  std::size_t bins() const { return n_fft_ / 2 + 1; }
  std::size_t n_fft() const { return n_fft_; }
  std::size_t hop() const { return hop_; }

  // [frames x bins] complex spectrum.
  std::vector<std::vector<std::complex<double>>> analyze(std::span<const double> x) const;
  // Weighted overlap-add inverse producing `samples` output samples.
  std::vector<double> synthesize(const std::vector<std::vector<std::complex<double>>>& frames,
                                 std::size_t samples) const;

 private:
  struct Plans;
  std::size_t n_fft_, hop_, win_;
  std::vector<double> window_;  // length n_fft_, zero outside the centred win_
  std::unique_ptr<Plans> plans_;
};

// Log-mel magnitude spectrogram [frames x mel_bins], natural log, clamped
// below at cfg.log_floor. Throws InvalidInput on empty input, InvalidConfig
// on a bad config.
MatF extract_mel(std::span<const float> waveform, const AudioConfig& cfg);

// Normalized-autocorrelation pitch, one value per mel frame, 0 = unvoiced.
// Throws InvalidInput when shorter than one analysis window.
std::vector<float> extract_f0(std::span<const float> waveform, const AudioConfig& cfg);

// Per-frame L2 norm of the linear-magnitude mel vector.
std::vector<float> frame_energy(const MatF& log_mel);

}  // namespace ctxtts::audio
