#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "ctxtts/errors.hpp"
#include "ctxtts/trainer.hpp"
#include "support.hpp"

using namespace ctxtts;
using namespace ctxtts::trainer;
using testsupport::bit_equal;

namespace {

struct Fixture {
  config::RunConfig run = testsupport::tiny_run_config();
  context::PhoneVocab vocab{run.model.phones};
  TrainData data;

  Fixture() {
    const auto& store = testsupport::toy_corpus().store;
    data.train = build_examples(store, store.split().train, vocab, run.train, int(run.model.semantic_context));
    semantic::ToyPairEmbedder emb(run.model.d_pbe);
    for (const auto& ex : data.train) data.pbes[ex.utterance_id] = semantic::embed_pairs(ex.pairs, emb);
  }
};

}  // namespace

TEST_CASE("warmup then exponential decay") {
  TrainConfig c;
  c.peak_lr = 1e-3;
  c.warmup_steps = 4000;
  c.decay_rate = 0.99995;
  CHECK(lr_schedule(4000, c) == 1e-3);
  CHECK(lr_schedule(1, c) == 1e-3 / 4000.0);
  CHECK(lr_schedule(2000, c) == 5e-4);
  CHECK(lr_schedule(4001, c) == doctest::Approx(1e-3 * 0.99995));
  CHECK(lr_schedule(14000, c) == doctest::Approx(1e-3 * std::pow(0.99995, 10000.0)));
  CHECK_THROWS_AS(lr_schedule(0, c), InvalidInput);
  auto d = c;
  d.decay_rate = 0.9999;
  CHECK(lr_schedule(4001, d) == doctest::Approx(9.999e-4).epsilon(1e-12));
  c.schedule = Schedule::kInverseSqrt;
  CHECK(lr_schedule(16000, c) == doctest::Approx(0.5e-3));
  CHECK(lr_schedule(4000, c) == 1e-3);
}

TEST_CASE("train configuration validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto b = c;
  b.batch_size = 0;
  CHECK_THROWS_AS(b.validate(), InvalidConfig);
  b = c;
  b.decay_rate = 1.5;
  CHECK_THROWS_AS(b.validate(), InvalidConfig);
  b = c;
  b.beta2 = 1.0;
  CHECK_THROWS_AS(b.validate(), InvalidConfig);
  b = c;
  b.warmup_steps = 0;
  CHECK_THROWS_AS(b.validate(), InvalidConfig);
}

TEST_CASE("Adam with decoupled decay matches a hand-rolled update") {
  nn::ParamStore<double> ps;
  auto& p = ps.constant("w", 1, 2, 0.5);
  Adam<double> adam(0.9, 0.98, 1e-9, 0.01);
  const double grads[3][2] = {{0.2, -1.0}, {0.1, 0.0}, {-0.3, 2.0}};
  double x[2] = {0.5, 0.5}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 3; ++t) {
    const double lr = 0.1 * t;
    for (int k = 0; k < 2; ++k) {
      p.grad[std::size_t(k)] = grads[t - 1][k];
      m[k] = 0.9 * m[k] + 0.1 * grads[t - 1][k];
      v[k] = 0.98 * v[k] + 0.02 * grads[t - 1][k] * grads[t - 1][k];
      const double mh = m[k] / (1 - std::pow(0.9, t)), vh = v[k] / (1 - std::pow(0.98, t));
      x[k] -= lr * (mh / (std::sqrt(vh) + 1e-9) + 0.01 * x[k]);
    }
    adam.step(ps, lr);
    CHECK(p.value[0] == doctest::Approx(x[0]).epsilon(1e-14));
    CHECK(p.value[1] == doctest::Approx(x[1]).epsilon(1e-14));
  }
  CHECK(adam.steps() == 3);
}

TEST_CASE("gradient clipping rescales to the global norm") {
  nn::ParamStore<double> ps;
  auto& a = ps.constant("a", 1, 1, 0.0);
  auto& b = ps.constant("b", 1, 1, 0.0);
  a.grad[0] = 3.0;
  b.grad[0] = 4.0;
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(ps, 10.0) == doctest::Approx(1.0));
  CHECK(b.grad[0] == doctest::Approx(0.8));
}

TEST_CASE("losses cover the current sentence only") {
  Fixture f;
  const auto& ex = f.data.train[1];
  model::AcousticModel<double> m(f.run.model);
  const auto out = m.forward(ex, f.data.pbes.at(ex.utterance_id), {model::Mode::kTrain, nullptr});
  const auto res = compute_losses(out, ex, f.run.model);

  // Oracle over the raw arrays.
  const auto fs = ex.current_frame_span;
  double mb = 0.0, ma = 0.0;
  for (std::size_t r = fs.begin; r < fs.end; ++r)
    for (std::size_t c = 0; c < ex.target_mel.cols(); ++c) {
      mb += std::abs(out.mel_before.value()(r, c) - double(ex.target_mel(r, c)));
      ma += std::abs(out.mel_after.value()(r, c) - double(ex.target_mel(r, c)));
    }
  const double n = double(fs.size() * ex.target_mel.cols());
  CHECK(res.breakdown.mel_before_mae == doctest::Approx(mb / n).epsilon(1e-12));
  CHECK(res.breakdown.mel_after_mae == doctest::Approx(ma / n).epsilon(1e-12));
  const auto ps = ex.current_phoneme_span;
  double du = 0.0, pi = 0.0;
  for (std::size_t k = ps.begin; k < ps.end; ++k) {
    du += std::pow(out.log_duration_pred.value()(k, 0) - std::log(ex.durations[k] + 1.0), 2);
    const double pt = (double(ex.pitch[k]) - f.run.model.pitch_mean) / f.run.model.pitch_std;
    pi += std::pow(out.pitch_pred.value()(k, 0) - pt, 2);
  }
  CHECK(res.breakdown.duration_mse == doctest::Approx(du / double(ps.size())).epsilon(1e-12));
  CHECK(res.breakdown.pitch_mse == doctest::Approx(pi / double(ps.size())).epsilon(1e-12));
  CHECK(res.breakdown.total ==
        doctest::Approx(res.breakdown.mel_before_mae + res.breakdown.mel_after_mae + res.breakdown.duration_mse +
                        res.breakdown.pitch_mse + res.breakdown.energy_mse));

  LossWeights w;
  w.mel_after = 0.0;
  w.pitch = 2.0;
  const auto rw = compute_losses(out, ex, f.run.model, w);
  CHECK(rw.breakdown.total == doctest::Approx(res.breakdown.total - res.breakdown.mel_after_mae + res.breakdown.pitch_mse));

  // Targets outside the current sentence are irrelevant.
  auto targets = make_targets<double>(ex, f.run.model, true);
  auto r1 = compute_losses(out, targets);
  ag::backward(r1.total);
  for (std::size_t r = 0; r < targets.mel.rows(); ++r)
    if (!fs.contains(r))
      for (double g : targets.mel.grad().row(r)) CHECK(g == 0.0);
  for (std::size_t k = 0; k < targets.pitch.rows(); ++k)
    if (!ps.contains(k)) CHECK(targets.pitch.grad()(k, 0) == 0.0);

  auto ex_nan = ex;
  ex_nan.pitch[ps.begin] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(compute_losses(out, ex_nan, f.run.model), NumericalError);
}

TEST_CASE("examples are built per utterance with the configured window") {
  Fixture f;
  const auto& store = testsupport::toy_corpus().store;
  REQUIRE(f.data.train.size() == store.split().train.size());
  for (std::size_t i = 0; i < f.data.train.size(); ++i) {
    CHECK(f.data.train[i].utterance_id == store.split().train[i]);
    CHECK(f.data.train[i].pairs.size() == 2 * f.run.model.semantic_context);
    CHECK(f.data.train[i].current_frame_span.size() == store.get(store.split().train[i]).frames());
  }
}

TEST_CASE("a short run lowers the loss and is reproducible") {
  Fixture f;
  auto cfg = f.run.train;
  cfg.max_steps = 30;
  cfg.warmup_steps = 10;
  model::AcousticModel<float> a(f.run.model), b(f.run.model);
  std::size_t checkpoints = 0;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](std::size_t, const model::AcousticModel<float>&) { ++checkpoints; };
  const auto sa = train(a, f.data, cfg, hooks);
  const auto sb = train(b, f.data, cfg);
  CHECK(sa.steps == 30);
  CHECK(sa.skipped == 0);
  CHECK(checkpoints == 1);
  CHECK(sa.history.back().loss.total < sa.history.front().loss.total);
  for (std::size_t i = 0; i < sa.history.size(); ++i) CHECK(sa.history[i].loss.total == sb.history[i].loss.total);
  for (std::size_t i = 0; i < a.params().all().size(); ++i)
    CHECK(bit_equal(a.params().all()[i].value, b.params().all()[i].value));
}

TEST_CASE("non-finite batches are skipped, then abort the run") {
  Fixture f;
  for (auto& ex : f.data.train) ex.pitch[ex.current_phoneme_span.begin] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = f.run.train;
  cfg.max_steps = 20;
  cfg.max_consecutive_failures = 3;
  model::AcousticModel<float> m(f.run.model);
  const auto before = m.params().all().front().value;
  std::size_t seen = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    CHECK(r.skipped);
    ++seen;
  };
  CHECK_THROWS_AS(train(m, f.data, cfg, hooks), NumericalError);
  CHECK(seen == 3);
  CHECK(bit_equal(before, m.params().all().front().value));
}

TEST_CASE("train_to_dir writes metrics and checkpoints") {
  Fixture f;
  auto cfg = f.run.train;
  cfg.max_steps = 4;
  cfg.checkpoint_every = 2;
  testsupport::TempDir dir("train");
  model::AcousticModel<float> m(f.run.model);
  train_to_dir(m, f.data, cfg, dir.str());
  namespace fs = std::filesystem;
  CHECK(fs::exists(dir.path() / "checkpoints" / "step_2.ckpt"));
  CHECK(fs::exists(dir.path() / "checkpoints" / "step_4.ckpt"));
  CHECK(fs::exists(dir.path() / "latest.ckpt"));
  std::ifstream in(dir.path() / "metrics.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["step"].get<std::size_t>() == n + 1);
    CHECK(j["lr"].get<double>() == lr_schedule(n + 1, cfg));
    ++n;
  }
  CHECK(n == 4);
}

namespace {

// Outputs over 3 phonemes and 4 frames whose current sentence is phoneme 1..3, frames 1..4.
model::ModelOutputs<double> synthetic_outputs(const MatD& mel, const MatD& ph) {
  model::ModelOutputs<double> o;
  o.mel_before = ag::Var<double>::constant(mel);
  o.mel_after = ag::Var<double>::constant(mel);
  o.log_duration_pred = ag::Var<double>::constant(ph);
  o.pitch_pred = ag::Var<double>::constant(ph);
  o.energy_pred = ag::Var<double>::constant(ph);
  o.current_phoneme_span = {1, 3};
  o.current_frame_span = {1, 4};
  return o;
}

}  // namespace

TEST_CASE("perfect predictions cost nothing and a unit mel error costs one") {
  std::mt19937_64 rng(8);
  const MatD mel = testsupport::random_mat<double>(4, 5, rng);
  const MatD ph = testsupport::random_mat<double>(3, 1, rng);
  const auto out = synthetic_outputs(mel, ph);
  LossTargets<double> t{ag::Var<double>::constant(mel), ag::Var<double>::constant(ph),
                        ag::Var<double>::constant(ph), ag::Var<double>::constant(ph)};
  CHECK(compute_losses(out, t).breakdown.total == 0.0);

  MatD shifted = mel;
  for (double& v : shifted.storage()) v += 1.0;
  t.mel = ag::Var<double>::constant(shifted);
  const auto r = compute_losses(out, t).breakdown;
  CHECK(r.mel_before_mae == doctest::Approx(1.0));
  CHECK(r.mel_after_mae == doctest::Approx(1.0));
  CHECK(r.duration_mse == 0.0);
  CHECK(r.total == doctest::Approx(2.0));
}

TEST_CASE("logged learning rates are the schedule values") {
  TrainConfig c;
  c.peak_lr = 1e-3;
  c.warmup_steps = 4000;
  c.decay_rate = 0.99995;
  for (std::size_t step : {std::size_t(1), std::size_t(4000), std::size_t(8000)}) {
    StepRecord r;
    r.step = step;
    r.lr = lr_schedule(step, c);
    const auto j = nlohmann::json::parse(metrics_line(r));
    CHECK(j["step"].get<std::size_t>() == step);
    CHECK(j["lr"].get<double>() == lr_schedule(step, c));
  }
}
