#include "ctxtts/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include <nlohmann/json.hpp>

#include "ctxtts/errors.hpp"
#include "ctxtts/kernels.hpp"
#include "ctxtts/record_io.hpp"

namespace ctxtts::eval {

MatD pairwise_distances(const MatF& pred, const MatF& ref) {
  if (pred.rows() == 0 || ref.rows() == 0) throw InvalidInput("dtw: empty sequence");
  if (pred.cols() != ref.cols()) throw InvalidInput("dtw: frame widths differ");
  const MatD p = pred.cast<double>(), r = ref.cast<double>();
  const auto& k = kernels::active<double>();
  MatD d(p.rows(), r.rows());
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < r.rows(); ++j) d(i, j) = std::sqrt(k.sq_dist(p.cols(), &p(i, 0), &r(j, 0)));
  return d;
}

AlignmentPath dtw_from_costs(const MatD& cost) {
  const std::size_t P = cost.rows(), R = cost.cols();
  if (P == 0 || R == 0) throw InvalidInput("dtw: empty cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  MatD acc(P, R);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < R; ++j) {
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = inf;
        if (i > 0 && j > 0) best = acc(i - 1, j - 1);
        if (i > 0) best = std::min(best, acc(i - 1, j));
        if (j > 0) best = std::min(best, acc(i, j - 1));
      }
      acc(i, j) = i == 0 && j == 0 ? cost(0, 0) : best + cost(i, j);
    }

  AlignmentPath path;
  path.cost = acc(P - 1, R - 1);
  std::size_t i = P - 1, j = R - 1;
  path.steps.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const double diag = acc(i - 1, j - 1), up = acc(i - 1, j), left = acc(i, j - 1);
      if (diag <= up && diag <= left) {
        --i, --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    } else if (i > 0) {
      --i;
    } else {
      --j;
    }
    path.steps.emplace_back(i, j);
  }
  std::reverse(path.steps.begin(), path.steps.end());
  return path;
}

AlignmentPath dtw_align(const MatF& pred, const MatF& ref) { return dtw_from_costs(pairwise_distances(pred, ref)); }

void check_path(const AlignmentPath& path, std::size_t pred_frames, std::size_t ref_frames) {
  const auto& s = path.steps;
  if (s.empty() || s.front() != std::make_pair(std::size_t(0), std::size_t(0)) ||
      s.back() != std::make_pair(pred_frames - 1, ref_frames - 1)) {
    throw InvalidInput("alignment path does not span both sequences");
  }
  for (std::size_t k = 1; k < s.size(); ++k) {
    const auto di = s[k].first - s[k - 1].first, dj = s[k].second - s[k - 1].second;
    if (s[k].first < s[k - 1].first || s[k].second < s[k - 1].second || di > 1 || dj > 1 || di + dj == 0) {
      throw InvalidInput("alignment path has an illegal step");
    }
  }
}

double msd(const MatF& pred, const MatF& ref, const AlignmentPath& path) {
  if (pred.cols() != ref.cols()) throw InvalidInput("msd: frame widths differ");
  check_path(path, pred.rows(), ref.rows());
  const auto& k = kernels::active<double>();
  std::vector<double> a(pred.cols()), b(ref.cols());
  double sum = 0.0;
  for (const auto& [i, j] : path.steps) {
    std::transform(pred.row(i).begin(), pred.row(i).end(), a.begin(), [](float v) { return double(v); });
    std::transform(ref.row(j).begin(), ref.row(j).end(), b.begin(), [](float v) { return double(v); });
    sum += std::sqrt(k.sq_dist(a.size(), a.data(), b.data()));
  }
  return sum / double(path.steps.size());
}

F0Metrics f0_metrics(const std::vector<float>& pred_f0, const std::vector<float>& ref_f0, const AlignmentPath& path) {
  if (pred_f0.empty() || ref_f0.empty()) throw InvalidInput("f0_metrics: empty contour");
  check_path(path, pred_f0.size(), ref_f0.size());
  std::vector<double> p, r;
  std::size_t disagree = 0;
  for (const auto& [i, j] : path.steps) {
    const bool vp = pred_f0[i] > 0.0f, vr = ref_f0[j] > 0.0f;
    if (vp != vr) ++disagree;
    if (vp && vr) {
      p.push_back(pred_f0[i]);
      r.push_back(ref_f0[j]);
    }
  }
  F0Metrics m;
  m.vuv_pct = 100.0 * double(disagree) / double(path.steps.size());
  if (!p.empty()) {
    double se = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) se += (p[k] - r[k]) * (p[k] - r[k]);
    m.rmse_hz = std::sqrt(se / double(p.size()));
  }
  if (p.size() >= 2) {
    double mp = 0.0, mr = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) mp += p[k], mr += r[k];
    mp /= double(p.size());
    mr /= double(r.size());
    double cov = 0.0, vp = 0.0, vr = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      cov += (p[k] - mp) * (r[k] - mr);
      vp += (p[k] - mp) * (p[k] - mp);
      vr += (r[k] - mr) * (r[k] - mr);
    }
    if (vp > 0.0 && vr > 0.0) m.corr = std::clamp(cov / std::sqrt(vp * vr), -1.0, 1.0);
  }
  return m;
}

double f0_sd(const std::vector<std::vector<float>>& f0_set) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : f0_set)
    for (float v : s)
      if (v > 0.0f) sum += v, ++n;
  if (n < 2) throw InvalidInput("f0_sd: fewer than two voiced frames");
  const double mean = sum / double(n);
  double ss = 0.0;
  for (const auto& s : f0_set)
    for (float v : s)
      if (v > 0.0f) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / double(n));
}

namespace {

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs)
    if (x) s += *x, ++n;
  if (n == 0) return std::nullopt;
  return s / double(n);
}

std::optional<double> try_sd(const std::vector<std::vector<float>>& set) {
  try {
    return f0_sd(set);
  } catch (const InvalidInput&) {
    return std::nullopt;
  }
}

nlohmann::ordered_json opt(const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); }

}  // namespace

EvalReport evaluate(const std::vector<EvalItem>& items) {
  if (items.empty()) throw InvalidInput("evaluate: nothing to evaluate");
  EvalReport rep;
  std::vector<std::optional<double>> rmse, corr;
  std::vector<std::vector<float>> pred_set, ref_set;
  double msd_sum = 0.0, vuv_sum = 0.0;
  for (const auto& it : items) {
    if (it.pred_f0.size() != it.pred_mel.rows() || it.ref_f0.size() != it.ref_mel.rows()) {
      throw InvalidInput("evaluate: F0 length differs from mel frames for " + it.utterance_id);
    }
    const auto path = dtw_align(it.pred_mel, it.ref_mel);
    UtteranceReport u;
    u.utterance_id = it.utterance_id;
    u.pred_frames = it.pred_mel.rows();
    u.ref_frames = it.ref_mel.rows();
    u.msd = msd(it.pred_mel, it.ref_mel, path);
    u.f0 = f0_metrics(it.pred_f0, it.ref_f0, path);
    msd_sum += u.msd;
    vuv_sum += u.f0.vuv_pct;
    rmse.push_back(u.f0.rmse_hz);
    corr.push_back(u.f0.corr);
    pred_set.push_back(it.pred_f0);
    ref_set.push_back(it.ref_f0);
    rep.utterances.push_back(std::move(u));
  }
  const double n = double(items.size());
  rep.msd = msd_sum / n;
  rep.vuv_pct = vuv_sum / n;
  rep.f0_rmse_hz = mean_of(rmse);
  rep.f0_corr = mean_of(corr);
  rep.f0_sd_hz = try_sd(pred_set);
  rep.ref_f0_sd_hz = try_sd(ref_set);
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["aggregate"] = {{"utterances", utterances.size()}, {"msd", msd},          {"f0_rmse_hz", opt(f0_rmse_hz)},
                    {"vuv_pct", vuv_pct},              {"f0_corr", opt(f0_corr)}, {"f0_sd_hz", opt(f0_sd_hz)},
                    {"ref_f0_sd_hz", opt(ref_f0_sd_hz)}};
  auto& per = j["per_utterance"] = nlohmann::ordered_json::array();
  for (const auto& u : utterances) {
    per.push_back({{"utterance_id", u.utterance_id}, {"pred_frames", u.pred_frames}, {"ref_frames", u.ref_frames},
                   {"msd", u.msd},                   {"f0_rmse_hz", opt(u.f0.rmse_hz)}, {"vuv_pct", u.f0.vuv_pct},
                   {"f0_corr", opt(u.f0.corr)}});
  }
  return j.dump(2) + "\n";
}

namespace {

std::vector<float> column(const MatF& m) {
  if (m.cols() != 1) throw InvalidInput("expected a single-column F0 record");
  return std::vector<float>(m.data(), m.data() + m.size());
}

}  // namespace

EvalReport evaluate_dirs(const std::string& pred_dir, const std::string& ref_dir, PredF0Source source,
                         const audio::AudioConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(pred_dir)) throw InvalidInput("not a directory: " + pred_dir);
  if (!fs::is_directory(ref_dir)) throw InvalidInput("not a directory: " + ref_dir);
  const fs::path ref_root = fs::is_directory(fs::path(ref_dir) / "features") ? fs::path(ref_dir) / "features" : fs::path(ref_dir);
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".mel") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw InvalidInput("no .mel records in " + pred_dir);
  std::vector<EvalItem> items;
  for (const auto& id : ids) {
    EvalItem it;
    it.utterance_id = id;
    const fs::path pbase = fs::path(pred_dir) / id, rbase = ref_root / id;
    if (!fs::exists(rbase.string() + ".mel")) throw InvalidInput("reference lacks utterance " + id);
    it.pred_mel = io::read_record(pbase.string() + ".mel");
    it.ref_mel = io::read_record(rbase.string() + ".mel");
    it.ref_f0 = column(io::read_record(rbase.string() + ".f0"));
    const bool has_native = fs::exists(pbase.string() + ".f0");
    const bool use_native = source == PredF0Source::kNative || (source == PredF0Source::kAuto && has_native);
    if (use_native) {
      it.pred_f0 = column(io::read_record(pbase.string() + ".f0"));
    } else {
      const auto wave = audio::read_wav(pbase.string() + ".wav");
      it.pred_f0 = audio::extract_f0(wave.samples, cfg);
      it.pred_f0.resize(it.pred_mel.rows(), 0.0f);
    }
    items.push_back(std::move(it));
  }
  return evaluate(items);
}

}  // namespace ctxtts::eval
