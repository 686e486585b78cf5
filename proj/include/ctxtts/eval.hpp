#pragma once
// Objective evaluation: DTW alignment of log-mel sequences, mel distortion,
// F0 error / voicing / correlation along the path, and pooled F0 spread.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctxtts/audio.hpp"
#include "ctxtts/matrix.hpp"

namespace ctxtts::eval {

struct AlignmentPath {
  // (i into predicted frames, j into reference frames), from (0,0) to (P-1,R-1).
  std::vector<std::pair<std::size_t, std::size_t>> steps;
  double cost = 0.0;
};

// Euclidean distance between every predicted and reference frame, [P x R].
MatD pairwise_distances(const MatF& pred, const MatF& ref);

// Minimum-cost monotonic path over a precomputed local-cost matrix. Steps are
// (+1,+1), (+1,0), (0,+1); ties prefer the diagonal, then (+1,0).
AlignmentPath dtw_from_costs(const MatD& cost);

// Throws InvalidInput on empty input or differing widths.
AlignmentPath dtw_align(const MatF& pred, const MatF& ref);

// Throws InvalidInput when the path does not span both sequences.
void check_path(const AlignmentPath& path, std::size_t pred_frames, std::size_t ref_frames);

// Mean Euclidean frame distance along the path.
double msd(const MatF& pred, const MatF& ref, const AlignmentPath& path);

struct F0Metrics {
  std::optional<double> rmse_hz;  // missing without any both-voiced pair
  double vuv_pct = 0.0;
  std::optional<double> corr;     // missing with fewer than two both-voiced pairs
};

F0Metrics f0_metrics(const std::vector<float>& pred_f0, const std::vector<float>& ref_f0,
                     const AlignmentPath& path);

// Population standard deviation over every voiced value of every sequence.
// Throws InvalidInput with fewer than two voiced values.
double f0_sd(const std::vector<std::vector<float>>& f0_set);

struct UtteranceReport {
  std::string utterance_id;
  std::size_t pred_frames = 0, ref_frames = 0;
  double msd = 0.0;
  F0Metrics f0;
};

struct EvalReport {
  std::vector<UtteranceReport> utterances;
  double msd = 0.0;
  std::optional<double> f0_rmse_hz;
  double vuv_pct = 0.0;
  std::optional<double> f0_corr;
  std::optional<double> f0_sd_hz;      // predicted set
  std::optional<double> ref_f0_sd_hz;  // reference set

  // Stable-key JSON text.
  std::string to_json() const;
};

struct EvalItem {
  std::string utterance_id;
  MatF pred_mel, ref_mel;
  std::vector<float> pred_f0, ref_f0;
};

EvalReport evaluate(const std::vector<EvalItem>& items);

enum class PredF0Source { kAuto, kNative, kWave };

// pred_dir holds <id>.mel with <id>.f0 and/or <id>.wav; ref_dir is either a
// prepared corpus (features/<id>.mel, .f0) or a flat directory of <id>.mel
// and <id>.f0. Every predicted id must exist in the reference.
EvalReport evaluate_dirs(const std::string& pred_dir, const std::string& ref_dir,
                         PredF0Source source = PredF0Source::kAuto, const audio::AudioConfig& cfg = {});

}  // namespace ctxtts::eval
