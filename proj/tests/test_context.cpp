#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <numeric>

#include "ctxtts/context.hpp"
#include "ctxtts/errors.hpp"
#include "support.hpp"

using namespace ctxtts;
using namespace ctxtts::context;
using testsupport::bit_equal;
using testsupport::toy_paragraph;

namespace {

const PhoneVocab& vocab() {
  static const PhoneVocab v(testsupport::toy_corpus().store.stats().phones);
  return v;
}

std::size_t total_frames(const std::vector<const Utterance*>& us) {
  std::size_t n = 0;
  for (const auto* u : us) n += u->frames();
  return n;
}

// A synthetic utterance of the given length, two phonemes split evenly.
Utterance synthetic(const std::string& id, int index, std::size_t frames, std::uint64_t seed) {
  Utterance u;
  u.utterance_id = id;
  u.paragraph_id = "q";
  u.index_in_paragraph = index;
  u.text = "moon";
  u.phonemes = {"sil", "sil"};
  u.durations = {int(frames / 2), int(frames - frames / 2)};
  u.f0.assign(frames, 0.0f);
  u.energy.assign(frames, 1.0f);
  std::mt19937_64 rng(seed);
  u.mel = testsupport::random_mat<float>(frames, 80, rng);
  return u;
}

std::vector<Utterance> synthetic_paragraph(std::size_t n) {
  std::vector<Utterance> us;
  for (std::size_t i = 0; i < n; ++i) us.push_back(synthetic("q_s" + std::to_string(i), int(i), 20 + i, i));
  return us;
}

std::vector<const Utterance*> pointers(const std::vector<Utterance>& us) {
  std::vector<const Utterance*> p;
  for (const auto& u : us) p.push_back(&u);
  return p;
}

}  // namespace

TEST_CASE("windows at the edges of five- and one-sentence paragraphs") {
  const auto five = synthetic_paragraph(5);
  const auto mid = build_window(pointers(five), 2, 2);
  CHECK(mid.preceding.size() == 2);
  CHECK(mid.following.size() == 2);
  CHECK(derive_pairs(mid).size() == 4);
  const auto first = build_window(pointers(five), 0, 2);
  CHECK(first.preceding.empty());
  CHECK(first.following.size() == 2);
  const auto one = synthetic_paragraph(1);
  for (int L = 1; L <= 3; ++L) {
    const auto w = build_window(pointers(one), 0, L);
    CHECK(w.preceding.empty());
    CHECK(w.following.empty());
    const auto pairs = derive_pairs(w);
    REQUIRE(pairs.size() == std::size_t(2 * L));
    for (const auto& p : pairs) CHECK(((p.text_a.empty() || p.text_a == "moon") && (p.text_b.empty() || p.text_b == "moon")));
  }
  const auto narrow = derive_pairs(build_window(pointers(five), 2, 1));
  REQUIRE(narrow.size() == 2);
  CHECK(narrow[0].text_a == five[1].text);
  CHECK(narrow[1].text_b == five[3].text);
}

TEST_CASE("concatenation arithmetic over 30, 50 and 40 frames") {
  const std::vector<Utterance> us{synthetic("q_s0", 0, 30, 1), synthetic("q_s1", 1, 50, 2), synthetic("q_s2", 2, 40, 3)};
  const auto w = build_window(pointers(us), 1, 1);
  const auto ex = assemble_example(w, MaskPolicy::current_sentence(), vocab());
  CHECK(ex.concat_mel.rows() == 120);
  CHECK(ex.current_frame_span == Span{30, 80});
  std::size_t flagged = 0;
  for (std::size_t r = 0; r < 120; ++r) {
    CHECK(ex.mask_flags[r] == (r >= 30 && r < 80));
    flagged += ex.mask_flags[r];
  }
  CHECK(flagged == 50);
  const auto spans = assemble_example(w, MaskPolicy::frame_spans({{35, 45}}), vocab());
  CHECK(std::count(spans.mask_flags.begin(), spans.mask_flags.end(), true) == 10);
}

TEST_CASE("the current mel never reaches the model-visible input") {
  auto us = synthetic_paragraph(3);
  const auto a = model_visible_mel(assemble_example(build_window(pointers(us), 1, 1), MaskPolicy::current_sentence(), vocab()));
  us[1].mel = synthetic("x", 1, us[1].frames(), 99).mel;
  const auto b = model_visible_mel(assemble_example(build_window(pointers(us), 1, 1), MaskPolicy::current_sentence(), vocab()));
  CHECK(a.rows() == b.rows());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("windows hold up to L neighbours on each side") {
  const auto para = toy_paragraph(0);
  const auto w0 = build_window(para, 0, 2);
  CHECK(w0.preceding.empty());
  REQUIRE(w0.following.size() == 2);
  CHECK(w0.following[0].utterance_id == "p0_s1");
  const auto w2 = build_window(para, 2, 2);
  REQUIRE(w2.preceding.size() == 2);
  CHECK(w2.preceding.back().utterance_id == "p0_s1");  // nearest last
  REQUIRE(w2.following.size() == 1);
  CHECK_THROWS_AS(build_window(para, 4, 2), InvalidInput);
  CHECK_THROWS_AS(build_window(para, 0, 0), InvalidInput);
}

TEST_CASE("pairs chain adjacent slots with empty text for absent sentences") {
  const auto para = toy_paragraph(1);
  std::vector<std::string> t;
  for (const auto* u : para) t.push_back(u->text);
  const auto p0 = derive_pairs(build_window(para, 0, 2));
  REQUIRE(p0.size() == 4);
  CHECK((p0[0].text_a == "" && p0[0].text_b == ""));
  CHECK((p0[1].text_a == "" && p0[1].text_b == t[0]));
  CHECK((p0[2].text_a == t[0] && p0[2].text_b == t[1]));
  CHECK((p0[3].text_a == t[1] && p0[3].text_b == t[2]));
  const auto p3 = derive_pairs(build_window(para, 3, 2));
  CHECK((p3[0].text_a == t[1] && p3[0].text_b == t[2]));
  CHECK((p3[3].text_a == "" && p3[3].text_b == ""));
  for (int k = 0; k < 4; ++k) CHECK(p3[std::size_t(k)].pair_index == k);
  for (int L = 1; L <= 4; ++L)
    for (std::size_t i = 0; i < para.size(); ++i) CHECK(derive_pairs(build_window(para, i, L)).size() == 2u * L);
}

TEST_CASE("current-sentence masking hides exactly the current frames") {
  const auto para = toy_paragraph(0);
  const auto ex = assemble_example(build_window(para, 1, 2), MaskPolicy::current_sentence(), vocab());
  const std::size_t prev = para[0]->frames(), cur = para[1]->frames(), next = para[2]->frames();
  CHECK(ex.current_frame_span == Span{prev, prev + cur});
  CHECK(ex.concat_mel.rows() == prev + cur + next);
  CHECK(ex.current_phoneme_span == Span{para[0]->phonemes.size(), para[0]->phonemes.size() + para[1]->phonemes.size()});
  const MatF visible = model_visible_mel(ex);
  for (std::size_t r = 0; r < visible.rows(); ++r) {
    const bool cur_row = ex.current_frame_span.contains(r);
    CHECK(ex.mask_flags[r] == cur_row);
    for (std::size_t c = 0; c < visible.cols(); ++c) {
      if (cur_row) {
        CHECK(std::isnan(visible(r, c)));
      } else {
        CHECK(visible(r, c) == ex.target_mel(r, c));
      }
    }
  }
  CHECK(bit_equal(ex.target_mel.slice_rows(prev, prev + cur), para[1]->mel));
  for (std::size_t k = 0; k < ex.phoneme_count(); ++k) {
    const auto seg = k < ex.current_phoneme_span.begin ? Segment::kPrev
                     : k < ex.current_phoneme_span.end ? Segment::kCur
                                                        : Segment::kNext;
    CHECK(ex.segment_ids[k] == seg);
    CHECK(ex.durations[k] >= 0);
  }
  CHECK(std::accumulate(ex.durations.begin(), ex.durations.end(), 0) == int(ex.concat_mel.rows()));
}

TEST_CASE("text-only members contribute phonemes but no frames") {
  const auto para = toy_paragraph(2);
  auto w = build_window(para, 1, 2);
  w.current.durations.clear();
  w.current.mel = MatF();
  w.following[0].durations.clear();
  w.following[0].mel = MatF();
  const auto ex = assemble_example(w, MaskPolicy::current_sentence(), vocab());
  CHECK(ex.concat_mel.rows() == para[0]->frames());
  CHECK(ex.current_frame_span.size() == 0);
  for (std::size_t k = ex.current_phoneme_span.begin; k < ex.current_phoneme_span.end; ++k) {
    CHECK(ex.durations[k] == kPredictDuration);
    CHECK_FALSE(ex.has_targets[k]);
  }
  for (std::size_t k = ex.current_phoneme_span.end; k < ex.phoneme_count(); ++k) CHECK(ex.durations[k] == 0);
}

TEST_CASE("acoustic context width limits neighbours") {
  const auto para = toy_paragraph(0);
  const auto w = build_window(para, 2, 2);
  const auto ex0 = assemble_example(w, MaskPolicy::current_sentence(), vocab(), {0, 3000});
  CHECK(ex0.concat_mel.rows() == para[2]->frames());
  CHECK(ex0.current_phoneme_span.begin == 0);
  const auto ex2 = assemble_example(w, MaskPolicy::current_sentence(), vocab(), {2, 3000});
  CHECK(ex2.concat_mel.rows() == total_frames(para));
}

TEST_CASE("frame cap drops following context, then trims preceding from the left") {
  const auto para = toy_paragraph(0);
  const auto w = build_window(para, 1, 2);
  const std::size_t prev = para[0]->frames(), cur = para[1]->frames();
  const auto ex = assemble_example(w, MaskPolicy::current_sentence(), vocab(), {1, prev + cur});
  CHECK(ex.concat_mel.rows() == prev + cur);
  const auto trimmed = assemble_example(w, MaskPolicy::current_sentence(), vocab(), {1, cur + 5});
  CHECK(trimmed.concat_mel.rows() == cur + 5);
  CHECK(trimmed.current_frame_span == Span{5, cur + 5});
  CHECK(bit_equal(trimmed.target_mel.slice_rows(0, 5), para[0]->mel.slice_rows(prev - 5, prev)));
  CHECK(std::accumulate(trimmed.durations.begin(), trimmed.durations.end(), 0) == int(cur + 5));
  CHECK_THROWS_AS(assemble_example(w, MaskPolicy::current_sentence(), vocab(), {1, cur - 1}), InvalidInput);
}

TEST_CASE("span masking is confined to the current sentence") {
  const auto para = toy_paragraph(0);
  const auto w = build_window(para, 1, 2);
  const std::size_t prev = para[0]->frames();
  const auto ex = assemble_example(w, MaskPolicy::frame_spans({{prev + 3, prev + 8}}), vocab());
  for (std::size_t r = 0; r < ex.mask_flags.size(); ++r) CHECK(ex.mask_flags[r] == (r >= prev + 3 && r < prev + 8));
  CHECK_THROWS_AS(assemble_example(w, MaskPolicy::frame_spans({{prev - 1, prev + 2}}), vocab()), InvalidInput);
}

TEST_CASE("phone vocabulary") {
  PhoneVocab v({"a", "b"});
  CHECK(v.id("b") == 1);
  CHECK(v.contains("a"));
  CHECK_THROWS_AS(v.id("c"), InvalidInput);
  CHECK_THROWS_AS(PhoneVocab({"a", "a"}), InvalidConfig);
}
