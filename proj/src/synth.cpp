#include "ctxtts/synth.hpp"

#include <algorithm>
#include <numeric>

#include "ctxtts/audio.hpp"
#include "ctxtts/errors.hpp"

namespace ctxtts::synth {

namespace {

Utterance strip_acoustics(Utterance u) {
  u.durations.clear();
  u.f0.clear();
  u.energy.clear();
  u.mel = MatF();
  return u;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

void erase_rows(MatF& m, std::size_t begin, std::size_t end) {
  if (begin == end) return;
  MatF out(m.rows() - (end - begin), m.cols());
  std::size_t r = 0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (i >= begin && i < end) continue;
    std::copy(m.row(i).begin(), m.row(i).end(), out.row(r++).begin());
  }
  m = std::move(out);
}

}  // namespace

Mode parse_mode(const std::string& name) {
  if (name == "full") return Mode::kFullContext;
  if (name == "prev") return Mode::kPrevSpeechOnly;
  if (name == "text") return Mode::kTextOnly;
  if (name == "edit") return Mode::kEdit;
  throw InvalidRequest("unknown synthesis mode '" + name + "' (full, prev, text, edit)");
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kFullContext: return "full";
    case Mode::kPrevSpeechOnly: return "prev";
    case Mode::kTextOnly: return "text";
    case Mode::kEdit: return "edit";
  }
  return "?";
}

Utterance SynthesisResult::as_utterance(const std::string& paragraph_id, int index, const std::string& text) const {
  Utterance u;
  u.utterance_id = id;
  u.paragraph_id = paragraph_id;
  u.index_in_paragraph = index;
  u.text = text;
  u.phonemes = phonemes;
  u.durations = durations;
  u.f0 = f0;
  u.energy = audio::frame_energy(mel);
  u.mel = mel;
  return u;
}

Synthesizer::Synthesizer(const model::AcousticModel<float>& model, const semantic::PairEmbedder& embedder,
                         const frontend::Lexicon& lexicon, const SynthOptions& opts)
    : model_(model), embedder_(embedder), lexicon_(lexicon), vocab_(model.config().phones), opts_(opts) {
  if (embedder.dim() != model.config().d_pbe) {
    throw InvalidConfig("embedder dimension " + std::to_string(embedder.dim()) + " differs from model d_pbe " +
                        std::to_string(model.config().d_pbe));
  }
}

Utterance Synthesizer::text_utterance(const ParagraphLine& line, int index) const {
  Utterance u;
  u.utterance_id = line.id.empty() ? "line" + std::to_string(index) : line.id;
  u.index_in_paragraph = index;
  u.text = line.text;
  u.phonemes = lexicon_.phonemize(line.text).phonemes;
  return u;
}

SynthesisResult Synthesizer::synthesize(const SynthesisRequest& req) const {
  if (req.mode == Mode::kEdit) throw InvalidRequest("edit requests go through edit()");
  const auto& lines = req.paragraph;
  if (req.target >= lines.size()) throw InvalidRequest("target line is outside the paragraph");
  const std::size_t k = req.target;
  const bool has_prev = k > 0, has_next = k + 1 < lines.size();
  if ((req.mode == Mode::kPrevSpeechOnly || req.mode == Mode::kFullContext) && has_prev && !lines[k - 1].speech) {
    throw InvalidRequest("mode " + mode_name(req.mode) + " needs speech for the previous sentence");
  }
  if (req.mode == Mode::kFullContext && has_next && !lines[k + 1].speech) {
    throw InvalidRequest("mode full needs speech for the following sentence");
  }

  std::vector<Utterance> utts;
  utts.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    Utterance u = line.speech ? *line.speech : text_utterance(line, static_cast<int>(i));
    if (line.speech && u.text.empty()) u.text = line.text;
    const bool keep = line.speech && i != k &&
                      (req.mode == Mode::kFullContext || (req.mode == Mode::kPrevSpeechOnly && i < k));
    if (!keep) u = strip_acoustics(std::move(u));
    if (i == k && line.speech) u.phonemes = lexicon_.phonemize(line.text).phonemes;
    utts.push_back(std::move(u));
  }
  std::vector<const Utterance*> ptrs;
  for (const auto& u : utts) ptrs.push_back(&u);
  const auto window = context::build_window(ptrs, k, static_cast<int>(model_.config().semantic_context));
  const auto ex = context::assemble_example(window, context::MaskPolicy::current_sentence(), vocab_,
                                            {opts_.acoustic_context, opts_.max_frames});
  const MatF pbes = semantic::embed_pairs(ex.pairs, embedder_);

  ag::NoGradGuard guard;
  const auto out = model_.forward(ex, pbes, {model::Mode::kInfer, nullptr});
  const auto cps = out.current_phoneme_span;
  const auto cfs = out.current_frame_span;

  SynthesisResult r;
  r.id = utts[k].utterance_id;
  r.phonemes = utts[k].phonemes;
  r.durations.assign(out.durations.begin() + cps.begin, out.durations.begin() + cps.end);
  r.mel = out.current_mel();
  const auto pitch = out.frame_pitch_hz(model_.config(), ex);
  r.f0.assign(pitch.begin() + cfs.begin, pitch.begin() + cfs.end);
  r.preceding_context_mel = out.input_mel.slice_rows(0, cfs.begin);
  return r;
}

std::vector<SynthesisResult> Synthesizer::read_paragraph(std::vector<ParagraphLine> lines, Mode mode,
                                                         const std::string& paragraph_id) const {
  std::vector<SynthesisResult> results;
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (lines[k].speech) continue;
    auto r = synthesize({mode, lines, k});
    lines[k].speech = r.as_utterance(paragraph_id, static_cast<int>(k), lines[k].text);
    results.push_back(std::move(r));
  }
  return results;
}

EditResult Synthesizer::edit(const EditRequest& req) const {
  const Utterance& base = req.base;
  if (!context::has_acoustics(base)) throw EditError("edit needs a recorded base utterance");
  const auto ph = lexicon_.phonemize(base.text);
  if (ph.phonemes != base.phonemes) {
    throw EditError("phonemes of " + base.utterance_id + " do not match its text under this lexicon");
  }
  const std::size_t nw = ph.words.size();
  if (req.words.begin > req.words.end || req.words.end > nw) {
    throw EditError("word span [" + std::to_string(req.words.begin) + "," + std::to_string(req.words.end) +
                    ") does not fit " + std::to_string(nw) + " words");
  }
  const auto repl = lexicon_.phonemize(req.replacement, false).phonemes;

  EditResult res;
  if (req.words.size() == 0 && repl.empty()) {
    res.mel = base.mel;
    res.f0 = base.f0;
    res.phonemes = base.phonemes;
    res.durations = base.durations;
    res.text = base.text;
    res.unchanged = true;
    return res;
  }

  // Phoneme span [pa, pb) of the base to replace.
  std::size_t pa, pb;
  if (req.words.size() > 0) {
    pa = ph.words[req.words.begin].begin;
    pb = ph.words[req.words.end - 1].end;
  } else if (req.words.begin < nw) {
    pa = pb = ph.words[req.words.begin].begin;
  } else {
    pa = pb = nw ? ph.words.back().end : (lexicon_.boundary().empty() ? 0 : 1);
  }
  const auto frame_of = [&](std::size_t p) {
    return static_cast<std::size_t>(std::accumulate(base.durations.begin(), base.durations.begin() + p, 0));
  };
  const std::size_t fa = frame_of(pa), fb = frame_of(pb);

  auto words = frontend::normalize_words(base.text);
  auto new_words = std::vector<std::string>(words.begin(), words.begin() + req.words.begin);
  for (auto& w : frontend::normalize_words(req.replacement)) new_words.push_back(w);
  new_words.insert(new_words.end(), words.begin() + req.words.end, words.end());
  res.text = join_words(new_words);

  // Window with the edited text so the sentence pairs reflect it.
  std::vector<Utterance> para = req.paragraph;
  std::size_t index = req.base_index;
  if (para.empty()) {
    para.push_back(base);
    index = 0;
  }
  if (index >= para.size() || para[index].utterance_id != base.utterance_id) {
    throw EditError("base utterance is not at the given paragraph position");
  }
  para[index] = base;
  para[index].text = res.text;
  std::vector<const Utterance*> ptrs;
  for (const auto& u : para) ptrs.push_back(&u);
  const auto window = context::build_window(ptrs, index, static_cast<int>(model_.config().semantic_context));
  auto ex = context::assemble_example(window, context::MaskPolicy::frame_spans({}), vocab_,
                                      {opts_.acoustic_context, opts_.max_frames});
  if (ex.current_frame_span.size() != base.frames()) {
    throw EditError("frame cap trims the base utterance; raise max_frames");
  }

  // Swap phonemes [pa, pb) for the replacement; its frames become predicted.
  const std::size_t cp = ex.current_phoneme_span.begin, cf = ex.current_frame_span.begin;
  const auto splice_vec = [&](auto& v, auto fill) {
    using V = std::decay_t<decltype(v)>;
    V ins(repl.size(), fill);
    v.erase(v.begin() + cp + pa, v.begin() + cp + pb);
    v.insert(v.begin() + cp + pa, ins.begin(), ins.end());
  };
  std::vector<std::size_t> repl_ids;
  for (const auto& p : repl) repl_ids.push_back(vocab_.id(p));
  ex.phoneme_ids.erase(ex.phoneme_ids.begin() + cp + pa, ex.phoneme_ids.begin() + cp + pb);
  ex.phoneme_ids.insert(ex.phoneme_ids.begin() + cp + pa, repl_ids.begin(), repl_ids.end());
  splice_vec(ex.segment_ids, context::Segment::kCur);
  splice_vec(ex.durations, context::kPredictDuration);
  splice_vec(ex.pitch, 0.0f);
  splice_vec(ex.energy, 0.0f);
  splice_vec(ex.has_targets, false);
  ex.current_phoneme_span.end = ex.current_phoneme_span.end + repl.size() - (pb - pa);
  erase_rows(ex.concat_mel, cf + fa, cf + fb);
  erase_rows(ex.target_mel, cf + fa, cf + fb);
  ex.mask_flags.erase(ex.mask_flags.begin() + cf + fa, ex.mask_flags.begin() + cf + fb);
  ex.current_frame_span.end -= fb - fa;
  const std::size_t kept = ex.current_frame_span.size();

  const std::size_t margin = opts_.edit_margin;
  if (repl.empty()) {
    // Pure deletion: regenerate a band around the junction.
    const std::size_t lo = fa > margin ? fa - margin : 0, hi = std::min(kept, fa + margin);
    for (std::size_t f = lo; f < hi; ++f) {
      ex.mask_flags[cf + f] = true;
      for (auto& v : ex.concat_mel.row(cf + f)) v = context::kMaskSentinel;
    }
    res.generated = {lo, hi};
  }

  const MatF pbes = semantic::embed_pairs(ex.pairs, embedder_);
  ag::NoGradGuard guard;
  const auto out = model_.forward(ex, pbes, {model::Mode::kInfer, nullptr});
  const auto cps = out.current_phoneme_span;
  res.phonemes.assign(base.phonemes.begin(), base.phonemes.begin() + pa);
  res.phonemes.insert(res.phonemes.end(), repl.begin(), repl.end());
  res.phonemes.insert(res.phonemes.end(), base.phonemes.begin() + pb, base.phonemes.end());
  res.durations.assign(out.durations.begin() + cps.begin, out.durations.begin() + cps.end);
  res.refined = out.current_mel();
  const std::size_t frames = res.refined.rows();
  const std::size_t gen = frames - kept;
  if (!repl.empty()) res.generated = {fa, fa + gen};
  res.band = {res.generated.begin > margin ? res.generated.begin - margin : 0,
              std::min(frames, res.generated.end + margin)};

  const auto pitch = out.frame_pitch_hz(model_.config(), ex);
  res.mel = MatF(frames, base.mel.cols());
  res.f0.assign(frames, 0.0f);
  const std::size_t cfo = out.current_frame_span.begin;
  for (std::size_t f = 0; f < frames; ++f) {
    const bool from_model = res.band.contains(f);
    const std::size_t src = f < fa ? f : f - gen + (fb - fa);
    const bool new_frame = f >= fa && f < fa + gen;
    const auto row = from_model ? res.refined.row(f) : base.mel.row(src);
    std::copy(row.begin(), row.end(), res.mel.row(f).begin());
    res.f0[f] = new_frame ? pitch[cfo + f] : base.f0[src];
  }
  return res;
}

}  // namespace ctxtts::synth
