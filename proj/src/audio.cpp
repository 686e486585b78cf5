#include "ctxtts/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "ctxtts/errors.hpp"
#include "ctxtts/kernels.hpp"

namespace ctxtts::audio {

void AudioConfig::validate() const {
  if (sample_rate_hz <= 0) throw InvalidConfig("sample_rate_hz must be positive");
  if (!(frame_shift_ms > 0.0)) throw InvalidConfig("frame_shift_ms must be positive");
  if (!(frame_length_ms > frame_shift_ms)) {
    throw InvalidConfig("frame_length_ms must exceed frame_shift_ms");
  }
  if (mel_bins <= 0) throw InvalidConfig("mel_bins must be positive");
  const double hop = sample_rate_hz * frame_shift_ms / 1000.0;
  if (std::abs(hop - std::round(hop)) > 1e-9) {
    throw InvalidConfig("frame shift is not an integer number of samples");
  }
  if (!(fmax_hz > fmin_hz) || fmin_hz < 0.0 || fmax_hz > sample_rate_hz / 2.0) {
    throw InvalidConfig("mel frequency range must satisfy 0 <= fmin < fmax <= nyquist");
  }
  if (!(f0_max_hz > f0_min_hz) || f0_min_hz <= 0.0) {
    throw InvalidConfig("f0 search range is empty");
  }
}

std::size_t AudioConfig::hop_samples() const {
  return static_cast<std::size_t>(std::llround(sample_rate_hz * frame_shift_ms / 1000.0));
}

std::size_t AudioConfig::win_samples() const {
  return static_cast<std::size_t>(std::llround(sample_rate_hz * frame_length_ms / 1000.0));
}

std::size_t AudioConfig::n_fft() const {
  std::size_t n = 1;
  while (n < win_samples()) n <<= 1;
  return n;
}

std::size_t AudioConfig::frame_count(std::size_t samples) const {
  const std::size_t hop = hop_samples();
  return (samples + hop - 1) / hop;
}

// ---------------------------------------------------------------------------
// WAV

namespace {

template <typename V>
V read_le(std::istream& in) {
  unsigned char buf[sizeof(V)];
  in.read(reinterpret_cast<char*>(buf), sizeof(V));
  V v = 0;
  for (std::size_t i = 0; i < sizeof(V); ++i) v |= V(buf[i]) << (8 * i);
  return v;
}

template <typename V>
void write_le(std::ostream& out, V v) {
  for (std::size_t i = 0; i < sizeof(V); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

Wave read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(path, "cannot open");
  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw IngestError(path, "not a RIFF file");
  read_le<std::uint32_t>(in);
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw IngestError(path, "not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const auto size = read_le<std::uint32_t>(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = read_le<std::uint16_t>(in);
      channels = read_le<std::uint16_t>(in);
      rate = read_le<std::uint32_t>(in);
      read_le<std::uint32_t>(in);
      read_le<std::uint16_t>(in);
      bits = read_le<std::uint16_t>(in);
      in.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt || channels == 0) throw IngestError(path, "data before fmt chunk");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) throw IngestError(path, "unsupported sample format");
      const std::size_t frame_bytes = std::size_t(channels) * bits / 8;
      const std::size_t frames = size / frame_bytes;
      Wave w;
      w.sample_rate_hz = static_cast<int>(rate);
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          if (pcm16) {
            acc += static_cast<std::int16_t>(read_le<std::uint16_t>(in)) / 32768.0;
          } else {
            const auto raw = read_le<std::uint32_t>(in);
            float f;
            std::memcpy(&f, &raw, sizeof f);
            acc += f;
          }
        }
        w.samples[i] = static_cast<float>(acc / channels);
      }
      if (!in) throw IngestError(path, "truncated data chunk");
      return w;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw IngestError(path, "no data chunk");
}

void write_wav(const std::string& path, const Wave& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  const auto rate = static_cast<std::uint32_t>(wave.sample_rate_hz);
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + n * 2);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint32_t>(out, rate);
  write_le<std::uint32_t>(out, rate * 2);
  write_le<std::uint16_t>(out, 2);
  write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  write_le<std::uint32_t>(out, n * 2);
  for (float s : wave.samples) {
    const double c = std::clamp(static_cast<double>(s) * 32768.0, -32768.0, 32767.0);
    const auto q = static_cast<std::int16_t>(std::lround(c));
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(q));
  }
  if (!out) throw Error("short write to " + path);
}

// ---------------------------------------------------------------------------
// Spectral analysis

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

MatD mel_filterbank(const AudioConfig& cfg) {
  cfg.validate();
  const std::size_t n_fft = cfg.n_fft();
  const std::size_t bins = n_fft / 2 + 1;
  const auto n_mels = static_cast<std::size_t>(cfg.mel_bins);
  const double lo = hz_to_mel(cfg.fmin_hz);
  const double hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * double(i) / double(n_mels + 1));
  }
  MatD fb(n_mels, bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = double(k) * cfg.sample_rate_hz / double(n_fft);
      double w = 0.0;
      if (f > left && f <= centre) w = (f - left) / (centre - left);
      else if (f > centre && f < right) w = (right - f) / (right - centre);
      fb(m, k) = w;
    }
  }
  return fb;
}

struct Stft::Plans {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
  ~Plans() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (inverse) fftw_destroy_plan(inverse);
    fftw_free(real);
    fftw_free(spec);
  }
};

Stft::Stft(const AudioConfig& cfg)
    : n_fft_(cfg.n_fft()), hop_(cfg.hop_samples()), win_(cfg.win_samples()),
      window_(cfg.n_fft(), 0.0), plans_(std::make_unique<Plans>()) {
  cfg.validate();
  const std::size_t offset = (n_fft_ - win_) / 2;
  for (std::size_t i = 0; i < win_; ++i) {
    window_[offset + i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(win_));
  }
  std::lock_guard<std::mutex> lock(fftw_planner_mutex());
  plans_->real = fftw_alloc_real(n_fft_);
  plans_->spec = fftw_alloc_complex(n_fft_ / 2 + 1);
  const int n = static_cast<int>(n_fft_);
  plans_->forward = fftw_plan_dft_r2c_1d(n, plans_->real, plans_->spec, FFTW_ESTIMATE);
  plans_->inverse = fftw_plan_dft_c2r_1d(n, plans_->spec, plans_->real, FFTW_ESTIMATE);
}

Stft::~Stft() = default;

std::vector<std::vector<std::complex<double>>> Stft::analyze(std::span<const double> x) const {
  const std::size_t frames = (x.size() + hop_ - 1) / hop_;
  std::vector<std::vector<std::complex<double>>> out(frames);
  const auto half = static_cast<std::ptrdiff_t>(n_fft_ / 2);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * hop_) - half;
    for (std::size_t i = 0; i < n_fft_; ++i) {
      const std::ptrdiff_t s = start + static_cast<std::ptrdiff_t>(i);
      const double v = (s >= 0 && s < static_cast<std::ptrdiff_t>(x.size())) ? x[static_cast<std::size_t>(s)] : 0.0;
      plans_->real[i] = v * window_[i];
    }
    fftw_execute(plans_->forward);
    auto& row = out[t];
    row.resize(bins());
    for (std::size_t k = 0; k < bins(); ++k) row[k] = {plans_->spec[k][0], plans_->spec[k][1]};
  }
  return out;
}

std::vector<double> Stft::synthesize(const std::vector<std::vector<std::complex<double>>>& frames,
                                     std::size_t samples) const {
  std::vector<double> y(samples, 0.0), norm(samples, 0.0);
  const auto half = static_cast<std::ptrdiff_t>(n_fft_ / 2);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (std::size_t k = 0; k < bins(); ++k) {
      plans_->spec[k][0] = frames[t][k].real();
      plans_->spec[k][1] = frames[t][k].imag();
    }
    fftw_execute(plans_->inverse);
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * hop_) - half;
    for (std::size_t i = 0; i < n_fft_; ++i) {
      const std::ptrdiff_t s = start + static_cast<std::ptrdiff_t>(i);
      if (s < 0 || s >= static_cast<std::ptrdiff_t>(samples)) continue;
      const auto u = static_cast<std::size_t>(s);
      y[u] += window_[i] * plans_->real[i] / double(n_fft_);
      norm[u] += window_[i] * window_[i];
    }
  }
  for (std::size_t i = 0; i < samples; ++i) {
    if (norm[i] > 1e-8) y[i] /= norm[i];
  }
  return y;
}

MatF extract_mel(std::span<const float> waveform, const AudioConfig& cfg) {
  cfg.validate();
  if (waveform.empty()) throw InvalidInput("extract_mel: empty waveform");
  const MatD fb = mel_filterbank(cfg);
  Stft stft(cfg);
  std::vector<double> x(waveform.begin(), waveform.end());
  const auto spec = stft.analyze(x);
  const std::size_t bins = stft.bins();
  const auto& kt = kernels::active<double>();
  MatF mel(spec.size(), static_cast<std::size_t>(cfg.mel_bins));
  std::vector<double> mag(bins);
  const double floor_lin = std::exp(cfg.log_floor);
  for (std::size_t t = 0; t < spec.size(); ++t) {
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(spec[t][k]);
    for (std::size_t m = 0; m < mel.cols(); ++m) {
      const double v = kt.dot(bins, fb.row(m).data(), mag.data());
      mel(t, m) = static_cast<float>(v > floor_lin ? std::log(v) : cfg.log_floor);
    }
  }
  return mel;
}

std::vector<float> extract_f0(std::span<const float> waveform, const AudioConfig& cfg) {
  cfg.validate();
  const std::size_t win = cfg.win_samples();
  if (waveform.size() < win) throw InvalidInput("extract_f0: input shorter than one analysis window");
  const std::size_t hop = cfg.hop_samples();
  const std::size_t frames = cfg.frame_count(waveform.size());
  const double sr = cfg.sample_rate_hz;
  const auto lag_min = static_cast<std::size_t>(std::floor(sr / cfg.f0_max_hz));
  const auto lag_max = std::min(static_cast<std::size_t>(std::ceil(sr / cfg.f0_min_hz)), win / 2);
  const auto& kt = kernels::active<double>();

  std::vector<float> f0(frames, 0.0f);
  std::vector<double> frame(win);
  std::vector<double> r(lag_max + 2, 0.0);
  const auto half = static_cast<std::ptrdiff_t>(win / 2);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * hop) - half;
    double mean = 0.0;
    for (std::size_t i = 0; i < win; ++i) {
      const std::ptrdiff_t s = start + static_cast<std::ptrdiff_t>(i);
      frame[i] = (s >= 0 && s < static_cast<std::ptrdiff_t>(waveform.size()))
                     ? waveform[static_cast<std::size_t>(s)]
                     : 0.0;
      mean += frame[i];
    }
    mean /= double(win);
    for (auto& v : frame) v -= mean;
    const double power = kt.dot(win, frame.data(), frame.data()) / double(win);
    if (power < 1e-8) continue;  // below -80 dBFS

    // Normalized autocorrelation over the overlapping part.
    double best = -1.0;
    for (std::size_t lag = lag_min; lag <= lag_max + 1; ++lag) {
      const std::size_t n = win - lag;
      const double num = kt.dot(n, frame.data(), frame.data() + lag);
      const double e0 = kt.dot(n, frame.data(), frame.data());
      const double e1 = kt.dot(n, frame.data() + lag, frame.data() + lag);
      r[lag] = (e0 > 0.0 && e1 > 0.0) ? num / std::sqrt(e0 * e1) : 0.0;
      if (lag <= lag_max) best = std::max(best, r[lag]);
    }
    if (best < cfg.voicing_threshold) continue;
    // Shortest-lag local peak close to the global best avoids octave errors.
    std::size_t pick = 0;
    for (std::size_t lag = std::max<std::size_t>(lag_min, 1) + 1; lag <= lag_max; ++lag) {
      if (r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] >= 0.9 * best &&
          r[lag] >= cfg.voicing_threshold) {
        pick = lag;
        break;
      }
    }
    if (pick == 0) continue;
    const double a = r[pick - 1], b = r[pick], c = r[pick + 1];
    const double denom = a - 2.0 * b + c;
    const double shift = std::abs(denom) > 1e-12 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
    const double hz = sr / (double(pick) + shift);
    if (hz >= cfg.f0_min_hz && hz <= cfg.f0_max_hz) f0[t] = static_cast<float>(hz);
  }
  return f0;
}

std::vector<float> frame_energy(const MatF& log_mel) {
  std::vector<float> e(log_mel.rows());
  for (std::size_t t = 0; t < log_mel.rows(); ++t) {
    double acc = 0.0;
    for (float v : log_mel.row(t)) {
      const double lin = std::exp(static_cast<double>(v));
      acc += lin * lin;
    }
    e[t] = static_cast<float>(std::sqrt(acc));
  }
  return e;
}

}  // namespace ctxtts::audio
