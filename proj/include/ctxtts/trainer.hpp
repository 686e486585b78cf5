#pragma once
// Masked-reconstruction training: current-sentence losses, Adam with
// decoupled weight decay, warmup + decay schedule, atomic checkpoints.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ctxtts/context.hpp"
#include "ctxtts/corpus.hpp"
#include "ctxtts/model.hpp"

namespace ctxtts::trainer {

using context::TrainingExample;
using model::AcousticModel;
using model::ModelOutputs;

enum class Schedule { kExponential, kInverseSqrt };

struct LossWeights {
  double mel_before = 1.0;
  double mel_after = 1.0;
  double duration = 1.0;
  double pitch = 1.0;
  double energy = 1.0;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t max_steps = 200000;
  std::size_t warmup_steps = 4000;
  double peak_lr = 1e-3;
  double decay_rate = 0.99995;
  Schedule schedule = Schedule::kExponential;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double weight_decay = 1e-5;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1000;
  std::size_t valid_every = 500;
  std::size_t max_consecutive_failures = 10;
  int acoustic_context = 1;
  std::size_t max_frames = 3000;
  LossWeights weights;

  // Throws InvalidConfig.
  void validate() const;
};

// step >= 1. Exponential: linear warmup to peak_lr, then
// peak_lr * decay_rate^(step - warmup). Inverse-sqrt: linear warmup, then
// peak_lr * sqrt(warmup / step).
double lr_schedule(std::size_t step, const TrainConfig& cfg);

struct LossBreakdown {
  double mel_before_mae = 0.0;
  double mel_after_mae = 0.0;
  double duration_mse = 0.0;
  double pitch_mse = 0.0;
  double energy_mse = 0.0;
  double total = 0.0;
};

// Full-length regression targets; only the current-sentence rows enter the
// losses. Built as leaves so their gradients can be inspected.
template <typename T>
struct LossTargets {
  ag::Var<T> mel;           // [T_fr x mel_bins]
  ag::Var<T> log_duration;  // [T_ph x 1], log(d + 1)
  ag::Var<T> pitch;         // [T_ph x 1], normalized
  ag::Var<T> energy;        // [T_ph x 1], normalized
};

template <typename T>
LossTargets<T> make_targets(const TrainingExample& ex, const model::ModelConfig& cfg, bool differentiable);

template <typename T>
struct LossResult {
  ag::Var<T> total;
  LossBreakdown breakdown;
};

// Throws NumericalError when a term is not finite, InvalidInput when the
// outputs do not line up with the example.
template <typename T>
LossResult<T> compute_losses(const ModelOutputs<T>& out, const LossTargets<T>& targets,
                             const LossWeights& w = {});
template <typename T>
LossResult<T> compute_losses(const ModelOutputs<T>& out, const TrainingExample& ex,
                             const model::ModelConfig& cfg, const LossWeights& w = {});

// Adam with decoupled weight decay:
//   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
template <typename T>
class Adam {
 public:
  Adam(double beta1, double beta2, double epsilon, double weight_decay)
      : b1_(beta1), b2_(beta2), eps_(epsilon), wd_(weight_decay) {}
  void step(nn::ParamStore<T>& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  double b1_, b2_, eps_, wd_;
  std::size_t t_ = 0;
  std::vector<Mat<double>> m_, v_;
};

// Scales every gradient so the global L2 norm is at most max_norm; returns
// the norm before clipping.
template <typename T>
double clip_grad_norm(nn::ParamStore<T>& params, double max_norm);

// Examples for every utterance in `ids`, current-sentence masking.
std::vector<TrainingExample> build_examples(const corpus::CorpusStore& store,
                                            const std::vector<std::string>& ids,
                                            const context::PhoneVocab& vocab, const TrainConfig& cfg,
                                            int semantic_context);

struct TrainData {
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> valid;
  // Pair embeddings per utterance id, [2L x d_pbe].
  std::map<std::string, MatF> pbes;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double wall_ms = 0.0;
  bool skipped = false;
};

struct TrainHooks {
  // Called after every step (including skipped ones).
  std::function<void(const StepRecord&)> on_step;
  // Called at validation points with mean losses over the valid set.
  std::function<void(std::size_t step, const LossBreakdown&)> on_valid;
  // Called at checkpoint points and after the final step.
  std::function<void(std::size_t step, const AcousticModel<float>&)> on_checkpoint;
};

struct TrainSummary {
  std::size_t steps = 0;
  std::size_t skipped = 0;
  std::vector<StepRecord> history;
};

// Throws NumericalError after max_consecutive_failures skipped batches.
TrainSummary train(AcousticModel<float>& model, const TrainData& data, const TrainConfig& cfg,
                   const TrainHooks& hooks = {});

// Mean losses over `examples` with teacher forcing, no dropout, no graph.
LossBreakdown evaluate_losses(const AcousticModel<float>& model, const std::vector<TrainingExample>& examples,
                              const std::map<std::string, MatF>& pbes, const LossWeights& w = {});

// Writes metrics.jsonl / valid.jsonl lines and step_<N>.ckpt files under
// out_dir, plus latest.ckpt after the final step.
TrainSummary train_to_dir(AcousticModel<float>& model, const TrainData& data, const TrainConfig& cfg,
                          const std::string& out_dir);

std::string metrics_line(const StepRecord& r);

}  // namespace ctxtts::trainer
