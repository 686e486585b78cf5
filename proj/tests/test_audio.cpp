#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "ctxtts/audio.hpp"
#include "ctxtts/errors.hpp"
#include "support.hpp"

using namespace ctxtts;
using namespace ctxtts::audio;

namespace {

std::vector<float> sine(double hz, std::size_t n, double sr, double amp = 0.5) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = float(amp * std::sin(2.0 * std::numbers::pi * hz * double(i) / sr));
  return x;
}

double median_voiced(const std::vector<float>& f0, std::size_t skip) {
  std::vector<float> v;
  for (std::size_t i = skip; i + skip < f0.size(); ++i)
    if (f0[i] > 0) v.push_back(f0[i]);
  if (v.empty()) return 0.0;
  std::nth_element(v.begin(), v.begin() + long(v.size() / 2), v.end());
  return v[v.size() / 2];
}

// Lag with the largest biased autocorrelation over the whole signal, refined
// by a parabola through its neighbours.
double autocorrelation_pitch(const std::vector<float>& x, double sr, double lo_hz, double hi_hz) {
  const std::size_t lmin = std::size_t(sr / hi_hz), lmax = std::size_t(sr / lo_hz) + 1;
  double energy = 0.0;
  for (float v : x) energy += double(v) * v;
  std::vector<double> r(lmax + 2, 0.0);
  for (std::size_t lag = lmin - 1; lag <= lmax + 1; ++lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < x.size(); ++i) s += double(x[i]) * x[i + lag];
    r[lag] = s / energy;
  }
  std::size_t best = lmin;
  for (std::size_t lag = lmin; lag <= lmax; ++lag)
    if (r[lag] > r[best]) best = lag;
  const double a = r[best - 1], b = r[best], c = r[best + 1];
  const double shift = 0.5 * (a - c) / (a - 2.0 * b + c);
  return sr / (double(best) + shift);
}

double htk_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double htk_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

TEST_CASE("framing sizes follow the configuration") {
  AudioConfig cfg;
  CHECK(cfg.hop_samples() == 192);
  CHECK(cfg.win_samples() == 768);
  CHECK(cfg.n_fft() == 1024);
  CHECK(cfg.frame_count(0) == 0);
  CHECK(cfg.frame_count(1) == 1);
  CHECK(cfg.frame_count(192) == 1);
  CHECK(cfg.frame_count(193) == 2);
  CHECK(cfg.frame_count(192 * 50) == 50);
}

TEST_CASE("invalid audio configurations are rejected") {
  AudioConfig cfg;
  cfg.fmax_hz = 9000.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = {};
  cfg.mel_bins = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = {};
  cfg.frame_length_ms = 5.0;  // shorter than the shift
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("mel filterbank peaks at HTK-mel centres and tiles the band") {
  AudioConfig cfg;
  const MatD fb = mel_filterbank(cfg);
  REQUIRE(fb.rows() == 80);
  REQUIRE(fb.cols() == 513);
  const double bin_hz = double(cfg.sample_rate_hz) / double(cfg.n_fft());
  const double lo = htk_mel(cfg.fmin_hz), hi = htk_mel(cfg.fmax_hz);
  for (std::size_t m = 0; m < fb.rows(); ++m) {
    const double centre = htk_hz(lo + (hi - lo) * double(m + 1) / 81.0);
    std::size_t arg = 0;
    for (std::size_t k = 0; k < fb.cols(); ++k)
      if (fb(m, k) > fb(m, arg)) arg = k;
    CHECK(fb(m, arg) <= 1.0);
    CHECK(std::abs(double(arg) * bin_hz - centre) <= bin_hz);
  }
  // Adjacent triangles sum to one between the first and last centres.
  const double c_first = htk_hz(lo + (hi - lo) / 81.0), c_last = htk_hz(lo + (hi - lo) * 80.0 / 81.0);
  for (std::size_t k = 0; k < fb.cols(); ++k) {
    const double f = double(k) * bin_hz;
    if (f <= c_first || f >= c_last) continue;
    double s = 0.0;
    for (std::size_t m = 0; m < fb.rows(); ++m) s += fb(m, k);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("log-mel of a tone peaks in the band holding the tone") {
  AudioConfig cfg;
  const auto x = sine(1000.0, 16000, cfg.sample_rate_hz);
  const MatF mel = extract_mel(x, cfg);
  CHECK(mel.rows() == cfg.frame_count(x.size()));
  const MatD fb = mel_filterbank(cfg);
  const std::size_t tone_bin = std::size_t(std::lround(1000.0 * double(cfg.n_fft()) / cfg.sample_rate_hz));
  std::size_t expect = 0;
  for (std::size_t m = 0; m < fb.rows(); ++m)
    if (fb(m, tone_bin) > fb(expect, tone_bin)) expect = m;
  const auto row = mel.row(mel.rows() / 2);
  const auto peak = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
  CHECK(peak + 1 >= expect);
  CHECK(peak <= expect + 1);
  for (float v : mel.storage()) CHECK(v >= float(cfg.log_floor));
}

TEST_CASE("silence sits at the log floor") {
  AudioConfig cfg;
  const std::vector<float> x(4000, 0.0f);
  const MatF mel = extract_mel(x, cfg);
  for (float v : mel.storage()) CHECK(v == float(cfg.log_floor));
  CHECK_THROWS_AS(extract_mel(std::vector<float>{}, cfg), InvalidInput);
}

TEST_CASE("STFT analysis followed by synthesis reconstructs the signal") {
  AudioConfig cfg;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<double> x(8000);
  for (auto& v : x) v = n(rng);
  Stft stft(cfg);
  const auto y = stft.synthesize(stft.analyze(x), x.size());
  REQUIRE(y.size() == x.size());
  const std::size_t edge = cfg.win_samples();
  for (std::size_t i = edge; i + edge < x.size(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-9);
}

TEST_CASE("pitch of pure and harmonic tones") {
  AudioConfig cfg;
  const double sr = cfg.sample_rate_hz;
  CHECK(median_voiced(extract_f0(sine(220.0, 16000, sr), cfg), 4) == doctest::Approx(220.0).epsilon(0.005));
  CHECK(median_voiced(extract_f0(sine(95.0, 16000, sr), cfg), 4) == doctest::Approx(95.0).epsilon(0.005));

  // Strong upper harmonics must not pull the estimate up an octave.
  std::vector<float> h(16000, 0.0f);
  for (int k = 1; k <= 6; ++k) {
    const auto s = sine(110.0 * k, h.size(), sr, k == 1 ? 0.1 : 0.2);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += s[i];
  }
  CHECK(median_voiced(extract_f0(h, cfg), 4) == doctest::Approx(110.0).epsilon(0.01));
}

TEST_CASE("silence and noise are unvoiced") {
  AudioConfig cfg;
  const auto f0 = extract_f0(std::vector<float>(8000, 0.0f), cfg);
  CHECK(f0.size() == cfg.frame_count(8000));
  for (float v : f0) CHECK(v == 0.0f);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<float> x(16000);
  for (auto& v : x) v = float(n(rng));
  const auto fn = extract_f0(x, cfg);
  const auto voiced = std::count_if(fn.begin(), fn.end(), [](float v) { return v > 0; });
  CHECK(double(voiced) < 0.2 * double(fn.size()));
  CHECK_THROWS_AS(extract_f0(std::vector<float>(100, 0.0f), cfg), InvalidInput);
}

TEST_CASE("frame energy is the L2 norm of the linear mel") {
  MatF m(2, 4, 0.0f);
  for (auto& v : m.row(1)) v = std::log(2.0f);
  const auto e = frame_energy(m);
  CHECK(e[0] == doctest::Approx(2.0));  // sqrt(4 * 1)
  CHECK(e[1] == doctest::Approx(4.0));  // sqrt(4 * 4)
}

TEST_CASE("WAV round trip quantizes to 16 bits and clips") {
  testsupport::TempDir dir("wav");
  Wave w{16000, {0.0f, 0.25f, -0.5f, 0.999f, 1.5f, -2.0f}};
  write_wav(dir.str("a.wav"), w);
  const auto r = read_wav(dir.str("a.wav"));
  CHECK(r.sample_rate_hz == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 0.5f / 32768.0f);
  CHECK(r.samples[4] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(r.samples[5] == doctest::Approx(-1.0).epsilon(1e-4));

  std::ofstream(dir.str("bad.wav")) << "not a wave file";
  CHECK_THROWS_AS(read_wav(dir.str("bad.wav")), IngestError);
  CHECK_THROWS_AS(read_wav(dir.str("missing.wav")), IngestError);
}

TEST_CASE("mel frame counts follow the hop") {
  AudioConfig cfg;
  const auto m = extract_mel(std::vector<float>(19200, 0.0f), cfg);
  CHECK(m.rows() == 100);
  CHECK(m.cols() == 80);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> noise(0.0f, 0.1f);
  std::vector<float> x(16000);
  for (float& v : x) v = noise(rng);
  CHECK(extract_mel(x, cfg).rows() == 84);
  CHECK_THROWS_AS(extract_mel(std::vector<float>{}, cfg), InvalidInput);
}

TEST_CASE("pitch estimates agree with an autocorrelation oracle") {
  AudioConfig cfg;
  const double sr = cfg.sample_rate_hz;
  for (double hz : {220.0, 440.0}) {
    const auto x = sine(hz, 16000, sr);
    const double oracle = autocorrelation_pitch(x, sr, 60.0, 800.0);
    CHECK(oracle == doctest::Approx(hz).epsilon(0.005));
    const double est = median_voiced(extract_f0(x, cfg), 4);
    CHECK(est >= hz - hz / 110.0);
    CHECK(est <= hz + hz / 110.0);
    CHECK(est == doctest::Approx(oracle).epsilon(0.01));
  }
}
