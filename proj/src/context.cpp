#include "ctxtts/context.hpp"

#include <algorithm>

#include "ctxtts/errors.hpp"

namespace ctxtts::context {

PhoneVocab::PhoneVocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!ids_.emplace(symbols_[i], i).second) {
      throw InvalidConfig("duplicate phoneme symbol " + symbols_[i]);
    }
  }
}

std::size_t PhoneVocab::id(const std::string& symbol) const {
  auto it = ids_.find(symbol);
  if (it == ids_.end()) throw InvalidInput("unknown phoneme '" + symbol + "'");
  return it->second;
}

ContextWindow build_window(const std::vector<const Utterance*>& paragraph, std::size_t index, int L) {
  if (index >= paragraph.size()) {
    throw InvalidInput("build_window: index " + std::to_string(index) + " outside paragraph of " +
                       std::to_string(paragraph.size()));
  }
  if (L < 1) throw InvalidInput("build_window: L must be >= 1");
  ContextWindow w;
  w.L = L;
  w.current = *paragraph[index];
  const std::size_t lo = index >= std::size_t(L) ? index - std::size_t(L) : 0;
  for (std::size_t i = lo; i < index; ++i) w.preceding.push_back(*paragraph[i]);
  const std::size_t hi = std::min(paragraph.size(), index + 1 + std::size_t(L));
  for (std::size_t i = index + 1; i < hi; ++i) w.following.push_back(*paragraph[i]);
  return w;
}

std::vector<SentencePair> derive_pairs(const ContextWindow& window) {
  const auto L = static_cast<std::size_t>(window.L);
  // Slots 0..2L; slot L is the current sentence, empty text marks ABSENT.
  std::vector<std::string> slots(2 * L + 1);
  slots[L] = window.current.text;
  const std::size_t np = std::min(window.preceding.size(), L);
  for (std::size_t i = 0; i < np; ++i) {
    slots[L - 1 - i] = window.preceding[window.preceding.size() - 1 - i].text;
  }
  const std::size_t nf = std::min(window.following.size(), L);
  for (std::size_t i = 0; i < nf; ++i) slots[L + 1 + i] = window.following[i].text;

  std::vector<SentencePair> pairs;
  pairs.reserve(2 * L);
  for (std::size_t k = 0; k < 2 * L; ++k) {
    pairs.push_back({slots[k], slots[k + 1], static_cast<int>(k)});
  }
  return pairs;
}

namespace {

struct Member {
  const Utterance* utt;
  Segment segment;
  // Acoustic frames kept, counted from the member's right edge.
  std::size_t keep_frames;
};

}  // namespace

TrainingExample assemble_example(const ContextWindow& window, const MaskPolicy& policy,
                                 const PhoneVocab& vocab, const AssembleOptions& opts) {
  const auto width = static_cast<std::size_t>(std::max(0, opts.acoustic_context));
  std::vector<Member> members;
  const std::size_t np = std::min(window.preceding.size(), width);
  for (std::size_t i = window.preceding.size() - np; i < window.preceding.size(); ++i) {
    const auto& u = window.preceding[i];
    members.push_back({&u, Segment::kPrev, has_acoustics(u) ? u.frames() : 0});
  }
  members.push_back({&window.current, Segment::kCur,
                     has_acoustics(window.current) ? window.current.frames() : 0});
  const std::size_t nf = std::min(window.following.size(), width);
  for (std::size_t i = 0; i < nf; ++i) {
    const auto& u = window.following[i];
    members.push_back({&u, Segment::kNext, has_acoustics(u) ? u.frames() : 0});
  }

  // Frame cap: drop following segments, then trim preceding ones from the left.
  auto total = [&] {
    std::size_t n = 0;
    for (const auto& m : members) n += m.keep_frames;
    return n;
  };
  while (total() > opts.max_frames && members.back().segment == Segment::kNext) members.pop_back();
  for (auto& m : members) {
    if (m.segment != Segment::kPrev || total() <= opts.max_frames) continue;
    const std::size_t excess = total() - opts.max_frames;
    m.keep_frames -= std::min(m.keep_frames, excess);
  }
  if (total() > opts.max_frames) {
    throw InvalidInput("assemble_example: current sentence " + window.current.utterance_id +
                       " alone exceeds the frame cap");
  }

  TrainingExample ex;
  ex.utterance_id = window.current.utterance_id;
  const std::size_t mel_bins = window.current.mel.cols() ? window.current.mel.cols()
                                                         : [&] {
                                                             for (const auto& m : members)
                                                               if (m.utt->mel.cols()) return m.utt->mel.cols();
                                                             return std::size_t(0);
                                                           }();
  std::vector<const MatF*> blocks;
  std::vector<MatF> trimmed;
  trimmed.reserve(members.size());
  for (const auto& m : members) {
    const Utterance& u = *m.utt;
    const std::size_t first_ph = ex.phoneme_ids.size();
    if (m.segment == Segment::kCur) ex.current_phoneme_span.begin = first_ph;
    const bool acoustic = has_acoustics(u);
    std::vector<int> durs;
    std::vector<float> pitch, energy;
    if (acoustic) {
      pitch = corpus::phoneme_average(u.f0, u.durations, true);
      energy = corpus::phoneme_average(u.energy, u.durations, false);
      durs = u.durations;
      // Left-trim to keep_frames.
      std::size_t drop = u.frames() - m.keep_frames;
      for (auto& d : durs) {
        const auto take = std::min<std::size_t>(drop, static_cast<std::size_t>(d));
        d -= static_cast<int>(take);
        drop -= take;
      }
    } else {
      pitch.assign(u.phonemes.size(), 0.0f);
      energy.assign(u.phonemes.size(), 0.0f);
      durs.assign(u.phonemes.size(), m.segment == Segment::kCur ? kPredictDuration : 0);
    }
    for (std::size_t k = 0; k < u.phonemes.size(); ++k) {
      ex.phoneme_ids.push_back(vocab.id(u.phonemes[k]));
      ex.segment_ids.push_back(m.segment);
      ex.durations.push_back(durs[k]);
      ex.pitch.push_back(pitch[k]);
      ex.energy.push_back(energy[k]);
      ex.has_targets.push_back(acoustic);
    }
    if (m.segment == Segment::kCur) {
      ex.current_phoneme_span.end = ex.phoneme_ids.size();
      std::size_t before = 0;
      for (const auto* b : blocks) before += b->rows();
      ex.current_frame_span = {before, before + m.keep_frames};
    }
    if (m.keep_frames > 0) {
      trimmed.push_back(u.mel.slice_rows(u.frames() - m.keep_frames, u.frames()));
      blocks.push_back(&trimmed.back());
    }
  }
  ex.target_mel = vstack<float>(blocks, mel_bins);
  ex.mask_flags.assign(ex.target_mel.rows(), false);
  if (policy.kind == MaskPolicy::Kind::kCurrentSentence) {
    for (std::size_t i = ex.current_frame_span.begin; i < ex.current_frame_span.end; ++i) {
      ex.mask_flags[i] = true;
    }
  } else {
    for (const auto& s : policy.spans) {
      if (s.begin > s.end || s.begin < ex.current_frame_span.begin || s.end > ex.current_frame_span.end) {
        throw InvalidInput("mask span [" + std::to_string(s.begin) + "," + std::to_string(s.end) +
                           ") lies outside the current sentence");
      }
      for (std::size_t i = s.begin; i < s.end; ++i) ex.mask_flags[i] = true;
    }
  }
  ex.concat_mel = ex.target_mel;
  for (std::size_t r = 0; r < ex.concat_mel.rows(); ++r) {
    if (!ex.mask_flags[r]) continue;
    for (auto& v : ex.concat_mel.row(r)) v = kMaskSentinel;
  }
  ex.pairs = derive_pairs(window);
  return ex;
}

MatF model_visible_mel(const TrainingExample& ex) { return ex.concat_mel; }

}  // namespace ctxtts::context
