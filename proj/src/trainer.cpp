#include "ctxtts/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ctxtts/checkpoint.hpp"
#include "ctxtts/errors.hpp"
#include "ctxtts/record_io.hpp"

namespace ctxtts::trainer {

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw InvalidConfig("train: " + m); };
  if (batch_size == 0) bad("batch_size must be positive");
  if (max_steps == 0) bad("max_steps must be positive");
  if (warmup_steps == 0) bad("warmup_steps must be positive");
  if (!(peak_lr > 0.0)) bad("peak_lr must be positive");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) bad("decay_rate must lie in (0,1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) bad("adam betas must lie in [0,1)");
  if (!(epsilon > 0.0)) bad("epsilon must be positive");
  if (weight_decay < 0.0) bad("weight_decay must be >= 0");
  if (!(grad_clip_norm > 0.0)) bad("grad_clip_norm must be positive");
  if (checkpoint_every == 0 || valid_every == 0) bad("checkpoint_every and valid_every must be positive");
  if (acoustic_context < 0) bad("acoustic_context must be >= 0");
  if (max_consecutive_failures == 0) bad("max_consecutive_failures must be positive");
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  if (step == 0) throw InvalidInput("lr_schedule: step must be >= 1");
  const double s = double(step), w = double(cfg.warmup_steps);
  if (step <= cfg.warmup_steps) return cfg.peak_lr * s / w;
  if (cfg.schedule == Schedule::kInverseSqrt) return cfg.peak_lr * std::sqrt(w / s);
  return cfg.peak_lr * std::pow(cfg.decay_rate, s - w);
}

template <typename T>
LossTargets<T> make_targets(const TrainingExample& ex, const model::ModelConfig& cfg, bool differentiable) {
  const std::size_t n = ex.phoneme_count();
  Mat<T> dur(n, 1), pitch(n, 1), energy(n, 1);
  for (std::size_t k = 0; k < n; ++k) {
    const int d = ex.durations[k];
    dur(k, 0) = d >= 0 ? T(std::log(double(d) + 1.0)) : T(0);
    pitch(k, 0) = T((double(ex.pitch[k]) - cfg.pitch_mean) / cfg.pitch_std);
    energy(k, 0) = T((double(ex.energy[k]) - cfg.energy_mean) / cfg.energy_std);
  }
  auto mk = [&](Mat<T> m) { return differentiable ? ag::Var<T>::leaf(std::move(m)) : ag::Var<T>::constant(std::move(m)); };
  return {mk(ex.target_mel.template cast<T>()), mk(std::move(dur)), mk(std::move(pitch)), mk(std::move(energy))};
}

namespace {

template <typename T>
ag::Var<T> mae(const ag::Var<T>& pred, const ag::Var<T>& target, context::Span s) {
  return ag::mean(ag::abs(ag::sub(ag::slice_rows(pred, s.begin, s.end), ag::slice_rows(target, s.begin, s.end))));
}

template <typename T>
ag::Var<T> mse(const ag::Var<T>& pred, const ag::Var<T>& target, context::Span s) {
  return ag::mean(ag::square(ag::sub(ag::slice_rows(pred, s.begin, s.end), ag::slice_rows(target, s.begin, s.end))));
}

void add_scaled(LossBreakdown& acc, const LossBreakdown& x, double s) {
  acc.mel_before_mae += s * x.mel_before_mae;
  acc.mel_after_mae += s * x.mel_after_mae;
  acc.duration_mse += s * x.duration_mse;
  acc.pitch_mse += s * x.pitch_mse;
  acc.energy_mse += s * x.energy_mse;
  acc.total += s * x.total;
}

}  // namespace

template <typename T>
LossResult<T> compute_losses(const ModelOutputs<T>& out, const LossTargets<T>& targets, const LossWeights& w) {
  const auto fs = out.current_frame_span;
  const auto ps = out.current_phoneme_span;
  if (fs.size() == 0 || ps.size() == 0) throw InvalidInput("compute_losses: empty current sentence");
  if (targets.mel.rows() != out.mel_before.rows() || targets.mel.cols() != out.mel_before.cols()) {
    throw InvalidInput("compute_losses: mel target shape differs from model output");
  }
  if (targets.log_duration.rows() != out.log_duration_pred.rows()) {
    throw InvalidInput("compute_losses: phoneme target length differs from model output");
  }
  const auto mb = mae(out.mel_before, targets.mel, fs);
  const auto ma = mae(out.mel_after, targets.mel, fs);
  const auto du = mse(out.log_duration_pred, targets.log_duration, ps);
  const auto pi = mse(out.pitch_pred, targets.pitch, ps);
  const auto en = mse(out.energy_pred, targets.energy, ps);

  LossResult<T> r;
  r.total = ag::add_scalars<T>({ag::scale(mb, T(w.mel_before)), ag::scale(ma, T(w.mel_after)),
                                ag::scale(du, T(w.duration)), ag::scale(pi, T(w.pitch)),
                                ag::scale(en, T(w.energy))});
  auto& b = r.breakdown;
  b.mel_before_mae = double(mb.value()[0]);
  b.mel_after_mae = double(ma.value()[0]);
  b.duration_mse = double(du.value()[0]);
  b.pitch_mse = double(pi.value()[0]);
  b.energy_mse = double(en.value()[0]);
  b.total = double(r.total.value()[0]);
  for (double v : {b.mel_before_mae, b.mel_after_mae, b.duration_mse, b.pitch_mse, b.energy_mse, b.total}) {
    if (!std::isfinite(v)) throw NumericalError("non-finite loss term");
  }
  return r;
}

template <typename T>
LossResult<T> compute_losses(const ModelOutputs<T>& out, const TrainingExample& ex, const model::ModelConfig& cfg,
                             const LossWeights& w) {
  return compute_losses(out, make_targets<T>(ex, cfg, false), w);
}

template <typename T>
void Adam<T>::step(nn::ParamStore<T>& params, double lr) {
  auto& ps = params.all();
  if (m_.empty()) {
    for (const auto& p : ps) {
      m_.emplace_back(p.value.rows(), p.value.cols());
      v_.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  if (m_.size() != ps.size()) throw InvalidInput("adam: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, double(t_));
  const double c2 = 1.0 - std::pow(b2_, double(t_));
  std::size_t i = 0;
  for (auto& p : ps) {
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (!p.grad.same_shape(p.value)) p.zero_grad();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = double(p.grad[k]);
      m[k] = b1_ * m[k] + (1.0 - b1_) * g;
      v[k] = b2_ * v[k] + (1.0 - b2_) * g * g;
      const double mh = m[k] / c1, vh = v[k] / c2;
      const double x = double(p.value[k]);
      p.value[k] = T(x - lr * (mh / (std::sqrt(vh) + eps_) + wd_ * x));
    }
  }
}

template <typename T>
double clip_grad_norm(nn::ParamStore<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.all())
    for (std::size_t k = 0; k < p.grad.size(); ++k) sq += double(p.grad[k]) * double(p.grad[k]);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = T(max_norm / norm);
    for (auto& p : params.all())
      for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] *= s;
  }
  return norm;
}

std::vector<TrainingExample> build_examples(const corpus::CorpusStore& store, const std::vector<std::string>& ids,
                                            const context::PhoneVocab& vocab, const TrainConfig& cfg,
                                            int semantic_context) {
  std::vector<TrainingExample> out;
  out.reserve(ids.size());
  context::AssembleOptions opts;
  opts.acoustic_context = cfg.acoustic_context;
  opts.max_frames = cfg.max_frames;
  for (const auto& id : ids) {
    const auto& u = store.get(id);
    const auto para = store.paragraph(u.paragraph_id);
    const auto it = std::find_if(para.begin(), para.end(), [&](const corpus::Utterance* p) { return p->utterance_id == id; });
    const auto index = static_cast<std::size_t>(it - para.begin());
    const auto window = context::build_window(para, index, semantic_context);
    out.push_back(context::assemble_example(window, context::MaskPolicy::current_sentence(), vocab, opts));
  }
  return out;
}

namespace {

const MatF& pbes_for(const std::map<std::string, MatF>& pbes, const std::string& id, bool needed) {
  static const MatF empty;
  auto it = pbes.find(id);
  if (it != pbes.end()) return it->second;
  if (needed) throw InvalidInput("no pair embeddings cached for " + id);
  return empty;
}

bool grads_finite(const nn::ParamStore<float>& ps) {
  for (const auto& p : ps.all())
    for (std::size_t k = 0; k < p.grad.size(); ++k)
      if (!std::isfinite(p.grad[k])) return false;
  return true;
}

}  // namespace

LossBreakdown evaluate_losses(const AcousticModel<float>& model, const std::vector<TrainingExample>& examples,
                              const std::map<std::string, MatF>& pbes, const LossWeights& w) {
  ag::NoGradGuard guard;
  LossBreakdown acc;
  if (examples.empty()) return acc;
  for (const auto& ex : examples) {
    auto out = model.forward(ex, pbes_for(pbes, ex.utterance_id, model.config().use_cu), {model::Mode::kTrain, nullptr});
    add_scaled(acc, compute_losses(out, ex, model.config(), w).breakdown, 1.0 / double(examples.size()));
  }
  return acc;
}

TrainSummary train(AcousticModel<float>& model, const TrainData& data, const TrainConfig& cfg,
                   const TrainHooks& hooks) {
  cfg.validate();
  if (data.train.empty()) throw InvalidInput("train: no training examples");
  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(data.train.size());
  std::size_t cursor = order.size();
  Adam<float> adam(cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay);
  auto& params = model.params();
  const bool need_pbes = model.config().use_cu;

  TrainSummary summary;
  std::size_t consecutive = 0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    StepRecord rec;
    rec.step = step;
    rec.lr = lr_schedule(step, cfg);
    params.zero_grad();
    const double inv_b = 1.0 / double(cfg.batch_size);
    try {
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        if (cursor == order.size()) {
          std::iota(order.begin(), order.end(), std::size_t(0));
          std::shuffle(order.begin(), order.end(), order_rng);
          cursor = 0;
        }
        const auto& ex = data.train[order[cursor++]];
        auto out = model.forward(ex, pbes_for(data.pbes, ex.utterance_id, need_pbes),
                                 {model::Mode::kTrain, &dropout_rng});
        auto loss = compute_losses(out, ex, model.config(), cfg.weights);
        ag::backward(ag::scale(loss.total, float(inv_b)));
        add_scaled(rec.loss, loss.breakdown, inv_b);
      }
      if (!grads_finite(params)) throw NumericalError("non-finite gradient");
    } catch (const NumericalError&) {
      rec.skipped = true;
    }
    if (rec.skipped) {
      params.zero_grad();
      ++summary.skipped;
      ++consecutive;
    } else {
      consecutive = 0;
      clip_grad_norm(params, cfg.grad_clip_norm);
      adam.step(params, rec.lr);
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    summary.history.push_back(rec);
    summary.steps = step;
    if (hooks.on_step) hooks.on_step(rec);
    if (consecutive >= cfg.max_consecutive_failures) {
      throw NumericalError("training aborted after " + std::to_string(consecutive) + " consecutive non-finite steps");
    }
    const bool last = step == cfg.max_steps;
    if (hooks.on_valid && !data.valid.empty() && (step % cfg.valid_every == 0 || last)) {
      hooks.on_valid(step, evaluate_losses(model, data.valid, data.pbes, cfg.weights));
    }
    if (hooks.on_checkpoint && (step % cfg.checkpoint_every == 0 || last)) hooks.on_checkpoint(step, model);
  }
  return summary;
}

std::string metrics_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["mel_before_mae"] = r.loss.mel_before_mae;
  j["mel_after_mae"] = r.loss.mel_after_mae;
  j["duration_mse"] = r.loss.duration_mse;
  j["pitch_mse"] = r.loss.pitch_mse;
  j["energy_mse"] = r.loss.energy_mse;
  j["total"] = r.loss.total;
  j["skipped"] = r.skipped;
  j["wall_ms"] = std::round(r.wall_ms * 1000.0) / 1000.0;
  return j.dump();
}

TrainSummary train_to_dir(AcousticModel<float>& model, const TrainData& data, const TrainConfig& cfg,
                          const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "checkpoints");
  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
  std::ofstream valid(fs::path(out_dir) / "valid.jsonl", std::ios::trunc);
  if (!metrics || !valid) throw Error("cannot open metric logs in " + out_dir);
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) { metrics << metrics_line(r) << '\n' << std::flush; };
  hooks.on_valid = [&](std::size_t step, const LossBreakdown& l) {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["mel_before_mae"] = l.mel_before_mae;
    j["mel_after_mae"] = l.mel_after_mae;
    j["duration_mse"] = l.duration_mse;
    j["pitch_mse"] = l.pitch_mse;
    j["energy_mse"] = l.energy_mse;
    j["total"] = l.total;
    valid << j.dump() << '\n' << std::flush;
  };
  hooks.on_checkpoint = [&](std::size_t step, const AcousticModel<float>& m) {
    const auto bytes = checkpoint::encode(m, step);
    io::write_file_atomic((fs::path(out_dir) / "checkpoints" / ("step_" + std::to_string(step) + ".ckpt")).string(), bytes);
    if (step == cfg.max_steps) io::write_file_atomic((fs::path(out_dir) / "latest.ckpt").string(), bytes);
  };
  return train(model, data, cfg, hooks);
}

template struct LossTargets<float>;
template struct LossTargets<double>;
template LossTargets<float> make_targets<float>(const TrainingExample&, const model::ModelConfig&, bool);
template LossTargets<double> make_targets<double>(const TrainingExample&, const model::ModelConfig&, bool);
template LossResult<float> compute_losses<float>(const ModelOutputs<float>&, const LossTargets<float>&, const LossWeights&);
template LossResult<double> compute_losses<double>(const ModelOutputs<double>&, const LossTargets<double>&, const LossWeights&);
template LossResult<float> compute_losses<float>(const ModelOutputs<float>&, const TrainingExample&, const model::ModelConfig&, const LossWeights&);
template LossResult<double> compute_losses<double>(const ModelOutputs<double>&, const TrainingExample&, const model::ModelConfig&, const LossWeights&);
template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm<float>(nn::ParamStore<float>&, double);
template double clip_grad_norm<double>(nn::ParamStore<double>&, double);

}  // namespace ctxtts::trainer
