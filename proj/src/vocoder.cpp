#include "ctxtts/vocoder.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "ctxtts/errors.hpp"

namespace ctxtts::vocoder {

MatD mel_pseudo_inverse(const audio::AudioConfig& cfg) {
  const MatD fb = audio::mel_filterbank(cfg);
  Eigen::MatrixXd m(fb.rows(), fb.cols());
  for (std::size_t r = 0; r < fb.rows(); ++r)
    for (std::size_t c = 0; c < fb.cols(); ++c) m(Eigen::Index(r), Eigen::Index(c)) = fb(r, c);
  const Eigen::MatrixXd pinv = m.completeOrthogonalDecomposition().pseudoInverse();
  MatD out(std::size_t(pinv.rows()), std::size_t(pinv.cols()));
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = pinv(Eigen::Index(r), Eigen::Index(c));
  return out;
}

MatD mel_to_linear(const MatF& log_mel, const audio::AudioConfig& cfg) {
  if (log_mel.cols() != static_cast<std::size_t>(cfg.mel_bins)) throw InvalidInput("vocoder: mel width differs from config");
  for (std::size_t i = 0; i < log_mel.size(); ++i) {
    if (!std::isfinite(log_mel[i])) throw InvalidInput("vocoder: non-finite mel value");
  }
  const MatD pinv = mel_pseudo_inverse(cfg);
  const std::size_t bins = pinv.rows(), mels = pinv.cols();
  MatD lin(log_mel.rows(), bins);
  std::vector<double> mag(mels);
  for (std::size_t t = 0; t < log_mel.rows(); ++t) {
    for (std::size_t m = 0; m < mels; ++m) mag[m] = std::exp(double(log_mel(t, m)));
    for (std::size_t k = 0; k < bins; ++k) {
      double v = 0.0;
      for (std::size_t m = 0; m < mels; ++m) v += pinv(k, m) * mag[m];
      lin(t, k) = std::max(0.0, v);
    }
  }
  return lin;
}

audio::Wave mel_to_wave(const MatF& log_mel, const audio::AudioConfig& cfg, int iters, std::uint64_t seed) {
  if (iters < 0) throw InvalidInput("vocoder: negative iteration count");
  const MatD lin = mel_to_linear(log_mel, cfg);
  audio::Stft stft(cfg);
  const std::size_t frames = lin.rows(), bins = lin.cols();
  const std::size_t samples = frames * stft.hop();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  std::vector<std::vector<std::complex<double>>> spec(frames, std::vector<std::complex<double>>(bins));
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t k = 0; k < bins; ++k) spec[t][k] = std::polar(lin(t, k), u(rng));

  std::vector<double> y = stft.synthesize(spec, samples);
  for (int it = 0; it < iters; ++it) {
    const auto est = stft.analyze(y);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k = 0; k < bins; ++k) {
        const double a = std::abs(est[t][k]);
        spec[t][k] = a > 0.0 ? lin(t, k) * (est[t][k] / a) : std::complex<double>(lin(t, k), 0.0);
      }
    y = stft.synthesize(spec, samples);
  }
  audio::Wave w;
  w.sample_rate_hz = cfg.sample_rate_hz;
  w.samples.assign(y.begin(), y.end());
  return w;
}

}  // namespace ctxtts::vocoder
