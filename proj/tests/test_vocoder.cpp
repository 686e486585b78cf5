#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "ctxtts/audio.hpp"
#include "ctxtts/errors.hpp"
#include "ctxtts/vocoder.hpp"
#include "support.hpp"

using namespace ctxtts;

TEST_CASE("pseudo-inverse recovers the filterbank projection") {
  audio::AudioConfig cfg;
  const MatD fb = audio::mel_filterbank(cfg);
  const MatD pinv = vocoder::mel_pseudo_inverse(cfg);
  REQUIRE(pinv.rows() == fb.cols());
  REQUIRE(pinv.cols() == fb.rows());
  // fb * pinv * fb == fb
  double worst = 0.0;
  for (std::size_t m = 0; m < fb.rows(); m += 7)
    for (std::size_t k = 0; k < fb.cols(); k += 5) {
      double acc = 0.0;
      for (std::size_t a = 0; a < fb.cols(); ++a) {
        if (fb(m, a) == 0.0) continue;
        double inner = 0.0;
        for (std::size_t b = 0; b < fb.rows(); ++b) inner += pinv(a, b) * fb(b, k);
        acc += fb(m, a) * inner;
      }
      worst = std::max(worst, std::abs(acc - fb(m, k)));
    }
  CHECK(worst < 1e-8);
}

TEST_CASE("Griffin-Lim keeps the pitch of a tone") {
  audio::AudioConfig cfg;
  std::vector<float> x(16000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = float(0.5 * std::sin(2.0 * std::numbers::pi * 220.0 * double(i) / 16000.0));
  const MatF mel = audio::extract_mel(x, cfg);
  const auto w = vocoder::mel_to_wave(mel, cfg, 30, 1);
  CHECK(w.sample_rate_hz == cfg.sample_rate_hz);
  CHECK(w.samples.size() == mel.rows() * cfg.hop_samples());
  auto f0 = audio::extract_f0(w.samples, cfg);
  std::vector<float> voiced;
  for (std::size_t i = 5; i + 5 < f0.size(); ++i)
    if (f0[i] > 0) voiced.push_back(f0[i]);
  REQUIRE(voiced.size() > f0.size() / 2);
  std::nth_element(voiced.begin(), voiced.begin() + long(voiced.size() / 2), voiced.end());
  CHECK(std::abs(voiced[voiced.size() / 2] - 220.0) < 5.0);
  CHECK(vocoder::mel_to_wave(mel, cfg, 30, 1).samples == w.samples);
}

TEST_CASE("vocoder input validation") {
  audio::AudioConfig cfg;
  CHECK_THROWS_AS(vocoder::mel_to_wave(MatF(4, 10), cfg, 5, 0), InvalidInput);
  MatF m(4, 80, -5.0f);
  m(1, 3) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(vocoder::mel_to_wave(m, cfg, 5, 0), InvalidInput);
  const MatD lin = vocoder::mel_to_linear(MatF(3, 80, -20.0f), cfg);
  for (double v : lin.storage()) CHECK(v >= 0.0);
}

TEST_CASE("a mel at the log floor is near-silent") {
  audio::AudioConfig cfg;
  const auto w = vocoder::mel_to_wave(MatF(50, 80, float(cfg.log_floor)), cfg, 30, 2);
  double ss = 0.0;
  for (float v : w.samples) ss += double(v) * v;
  CHECK(std::sqrt(ss / double(w.samples.size())) < 1e-3);
}

TEST_CASE("fixed inputs write byte-identical WAV files") {
  audio::AudioConfig cfg;
  MatF mel(40, 80);
  for (std::size_t r = 0; r < mel.rows(); ++r)
    for (std::size_t c = 0; c < mel.cols(); ++c) mel(r, c) = float(-6.0 + 3.0 * std::sin(0.1 * double(r * 7 + c)));
  testsupport::TempDir dir("vocoder");
  audio::write_wav(dir.str("a.wav"), vocoder::mel_to_wave(mel, cfg, 20, 5));
  audio::write_wav(dir.str("b.wav"), vocoder::mel_to_wave(mel, cfg, 20, 5));
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  const auto a = slurp(dir.str("a.wav"));
  CHECK(a.size() == 44 + 2 * 40 * cfg.hop_samples());
  CHECK(a == slurp(dir.str("b.wav")));
}
