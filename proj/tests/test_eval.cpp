#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "ctxtts/errors.hpp"
#include "ctxtts/eval.hpp"
#include "ctxtts/record_io.hpp"
#include "support.hpp"

using namespace ctxtts;
using namespace ctxtts::eval;
using testsupport::random_mat;

namespace {

// Exhaustive search over every monotonic path with unit steps.
double brute_force_cost(const MatD& c) {
  const std::size_t P = c.rows(), R = c.cols();
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
    acc += c(i, j);
    if (i == P - 1 && j == R - 1) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < P && j + 1 < R) walk(i + 1, j + 1, acc);
    if (i + 1 < P) walk(i + 1, j, acc);
    if (j + 1 < R) walk(i, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

double path_cost(const MatD& c, const AlignmentPath& p) {
  double s = 0.0;
  for (auto [i, j] : p.steps) s += c(i, j);
  return s;
}

}  // namespace

TEST_CASE("DTW finds the brute-force optimum") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> len(1, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const MatD c = random_mat<double>(len(rng), len(rng), rng, 0.0, 1.0);
    const auto p = dtw_from_costs(c);
    CHECK_NOTHROW(check_path(p, c.rows(), c.cols()));
    CHECK(p.cost == doctest::Approx(brute_force_cost(c)).epsilon(1e-12));
    CHECK(path_cost(c, p) == doctest::Approx(p.cost).epsilon(1e-12));
  }
}

TEST_CASE("DTW prefers the diagonal on ties") {
  const auto p = dtw_from_costs(MatD(3, 3, 0.0));
  REQUIRE(p.steps.size() == 3);
  CHECK(p.steps[1] == std::make_pair(std::size_t(1), std::size_t(1)));
  CHECK_THROWS_AS(dtw_from_costs(MatD()), InvalidInput);
  CHECK_THROWS_AS(dtw_align(MatF(2, 3), MatF(2, 4)), InvalidInput);
  AlignmentPath bad{{{0, 0}, {2, 2}}, 0.0};
  CHECK_THROWS_AS(check_path(bad, 3, 3), InvalidInput);
}

TEST_CASE("mel distortion along a path") {
  MatF a(2, 2, 0.0f), b(1, 2, 0.0f);
  a(1, 0) = 3.0f;
  a(1, 1) = 4.0f;
  const AlignmentPath p{{{0, 0}, {1, 0}}, 0.0};
  CHECK(msd(a, b, p) == doctest::Approx(2.5));
  const auto pairwise = pairwise_distances(a, b);
  CHECK(pairwise(1, 0) == doctest::Approx(5.0));
}

TEST_CASE("F0 metrics on a hand-built path") {
  const AlignmentPath p{{{0, 0}, {1, 1}, {2, 2}}, 0.0};
  const auto m = f0_metrics({100, 200, 0}, {110, 180, 150}, p);
  CHECK(m.vuv_pct == doctest::Approx(100.0 / 3.0));
  REQUIRE(m.rmse_hz);
  CHECK(*m.rmse_hz == doctest::Approx(std::sqrt((100.0 + 400.0) / 2.0)));
  REQUIRE(m.corr);
  CHECK(*m.corr == doctest::Approx(1.0));
  const auto none = f0_metrics({0, 0, 0}, {0, 0, 0}, p);
  CHECK_FALSE(none.rmse_hz);
  CHECK_FALSE(none.corr);
  CHECK(none.vuv_pct == 0.0);
  const auto single = f0_metrics({100, 0, 0}, {100, 0, 0}, p);
  CHECK(single.rmse_hz);
  CHECK_FALSE(single.corr);
}

TEST_CASE("pooled F0 spread") {
  CHECK(f0_sd({{100.0f, 0.0f}, {300.0f}}) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(f0_sd({{100.0f, 100.0f}}) == 0.0);
  CHECK_THROWS_AS(f0_sd({{100.0f}, {0.0f}}), InvalidInput);
}

TEST_CASE("self-evaluation is perfect") {
  std::mt19937_64 rng(4);
  EvalItem it;
  it.utterance_id = "u";
  it.pred_mel = it.ref_mel = random_mat<float>(20, 80, rng);
  it.pred_f0.resize(20);
  for (std::size_t i = 0; i < 20; ++i) it.pred_f0[i] = i % 5 == 0 ? 0.0f : float(100 + 7 * i);
  it.ref_f0 = it.pred_f0;
  const auto rep = evaluate({it});
  CHECK(std::abs(rep.msd) <= 1e-12);
  CHECK(rep.vuv_pct == 0.0);
  REQUIRE(rep.f0_corr);
  CHECK(std::abs(*rep.f0_corr - 1.0) <= 1e-9);
  CHECK(*rep.f0_rmse_hz == 0.0);
  CHECK(*rep.f0_sd_hz == *rep.ref_f0_sd_hz);

  const auto j = nlohmann::json::parse(rep.to_json());
  for (const char* k : {"utterances", "msd", "f0_rmse_hz", "vuv_pct", "f0_corr", "f0_sd_hz", "ref_f0_sd_hz"})
    CHECK(j["aggregate"].contains(k));
  CHECK(j["per_utterance"][0]["utterance_id"] == "u");

  auto bad = it;
  bad.pred_f0.pop_back();
  CHECK_THROWS_AS(evaluate({bad}), InvalidInput);
  CHECK_THROWS_AS(evaluate({}), InvalidInput);
}

TEST_CASE("directory evaluation reads native records") {
  testsupport::TempDir pred("evalp"), ref("evalr");
  std::mt19937_64 rng(6);
  const MatF mel = random_mat<float>(12, 80, rng);
  MatF f0(12, 1);
  for (std::size_t i = 0; i < 12; ++i) f0(i, 0) = float(120 + i);
  for (const auto* d : {&pred, &ref}) {
    io::write_record(d->str("a.mel"), mel);
    io::write_record(d->str("a.f0"), f0);
  }
  const auto rep = evaluate_dirs(pred.str(), ref.str(), PredF0Source::kNative);
  REQUIRE(rep.utterances.size() == 1);
  CHECK(rep.msd == 0.0);
  io::write_record(pred.str("b.mel"), mel);
  io::write_record(pred.str("b.f0"), f0);
  CHECK_THROWS_AS(evaluate_dirs(pred.str(), ref.str()), InvalidInput);
}

TEST_CASE("identical sequences align on the diagonal at zero cost") {
  std::mt19937_64 rng(5);
  const MatF x = random_mat<float>(7, 80, rng);
  const auto p = dtw_align(x, x);
  REQUIRE(p.steps.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(p.steps[i] == std::make_pair(i, i));
  CHECK(p.cost == 0.0);
  CHECK(msd(x, x, p) == 0.0);

  const auto two_to_one = dtw_align(MatF(2, 1, 0.0f), MatF(1, 1, 0.0f));
  REQUIRE(two_to_one.steps.size() == 2);
  CHECK(two_to_one.steps[0] == std::make_pair(std::size_t(0), std::size_t(0)));
  CHECK(two_to_one.steps[1] == std::make_pair(std::size_t(1), std::size_t(0)));
}

TEST_CASE("a constant mel offset costs c times the root of the band count") {
  std::mt19937_64 rng(6);
  const MatF ref = random_mat<float>(9, 80, rng);
  MatF pred = ref;
  const float c = 0.5f;
  for (float& v : pred.storage()) v += c;
  const auto p = dtw_align(pred, ref);
  CHECK(msd(pred, ref, p) == doctest::Approx(0.5 * std::sqrt(80.0)).epsilon(1e-6));
}

TEST_CASE("mel distortion matches direct summation on random input") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const MatF a = random_mat<float>(5 + std::size_t(trial % 4), 80, rng);
    const MatF b = random_mat<float>(6, 80, rng);
    const auto p = dtw_align(a, b);
    double s = 0.0;
    for (auto [i, j] : p.steps) {
      double d = 0.0;
      for (std::size_t k = 0; k < 80; ++k) d += std::pow(double(a(i, k)) - double(b(j, k)), 2);
      s += std::sqrt(d);
    }
    CHECK(msd(a, b, p) == doctest::Approx(s / double(p.steps.size())).epsilon(1e-9));
  }
}

TEST_CASE("F0 metrics on shifted and partly unvoiced contours") {
  const AlignmentPath diag{{{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 5}}, 0.0};
  const std::vector<float> ref{100, 120, 150, 180, 160, 140};
  const auto same = f0_metrics(ref, ref, diag);
  CHECK(same.vuv_pct == 0.0);
  CHECK(*same.rmse_hz == 0.0);
  CHECK(*same.corr == doctest::Approx(1.0));

  std::vector<float> up = ref;
  for (float& v : up) v += 10.0f;
  const auto shifted = f0_metrics(up, ref, diag);
  CHECK(*shifted.rmse_hz == doctest::Approx(10.0));
  CHECK(*shifted.corr == doctest::Approx(1.0));

  std::vector<float> gaps = ref;
  gaps[1] = 0.0f;
  gaps[4] = 0.0f;
  CHECK(f0_metrics(gaps, ref, diag).vuv_pct == doctest::Approx(100.0 / 3.0).epsilon(1e-4));
}

TEST_CASE("pooled F0 spread matches a two-pass oracle on the toy corpus") {
  std::vector<std::vector<float>> contours;
  double sum = 0.0, n = 0.0;
  for (const auto& u : testsupport::toy_corpus().store.utterances()) {
    contours.push_back(u.f0);
    for (float v : u.f0)
      if (v > 0.0f) sum += v, n += 1.0;
  }
  const double mean = sum / n;
  double ss = 0.0;
  for (const auto& c : contours)
    for (float v : c)
      if (v > 0.0f) ss += (v - mean) * (v - mean);
  CHECK(f0_sd(contours) == doctest::Approx(std::sqrt(ss / n)).epsilon(1e-9));
  CHECK(f0_sd({{200.0f, 200.0f, 0.0f, 200.0f}}) == 0.0);
}
