#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ctxtts/cli.hpp"
#include "ctxtts/record_io.hpp"
#include "support.hpp"

using ctxtts::cli::run_cli;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "ctxtts");
  return run_cli(args);
}

const std::vector<std::string> kTiny{"--preset", "tiny", "--set", "data.valid_count=1", "--set", "data.test_count=0"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}) == 1);
  CHECK(run({"bogus"}) == 1);
  CHECK(run({"train", "--data", "x"}) == 1);
  CHECK(run({"synth", "--run", "/nonexistent", "--text", "t", "--out", "o"}) == 1);
  CHECK(run({"--help"}) == 0);
}

TEST_CASE("runtime failures exit with 2") {
  testsupport::TempDir dir("cli_fail");
  std::ofstream(dir.str("m.jsonl")) << R"({"utterance_id":"a","paragraph_id":"p","index":0,"text":"x",)"
                                    << R"("audio_path":"none.wav","alignment_path":"none.txt"})" << "\n";
  std::ofstream(dir.str("lexicon.txt")) << "x s\n";
  CHECK(run({"prepare", "--manifest", dir.str("m.jsonl"), "--out", dir.str("data")}) == 2);
}

TEST_CASE("prepare, train, synth, edit and evaluate on the toy corpus") {
  testsupport::TempDir dir("cli");
  REQUIRE(run({"make-toy-corpus", "--out", dir.str("toy")}) == 0);
  REQUIRE(run(with({"prepare", "--manifest", dir.str("toy/manifest.jsonl"), "--out", dir.str("data")}, kTiny)) == 0);
  CHECK(fs::exists(dir.path() / "data" / "pbe" / "embedder.txt"));
  auto count_lines = [](const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
  };
  CHECK(count_lines(dir.path() / "data" / "utterances.jsonl") == 12);

  const auto train_args = with({"train", "--data", dir.str("data"), "--out", dir.str("run"), "--max-steps", "50"}, kTiny);
  {
    fs::create_directories(dir.path() / "run");
    std::ofstream(dir.path() / "run" / "train.lock");
    CHECK(run(train_args) == 1);
    fs::remove(dir.path() / "run" / "train.lock");
  }
  REQUIRE(run(train_args) == 0);
  CHECK(fs::exists(dir.path() / "run" / "latest.ckpt"));
  CHECK_FALSE(fs::exists(dir.path() / "run" / "train.lock"));
  CHECK(count_lines(dir.path() / "run" / "metrics.jsonl") == 50);
  std::ifstream cfg(dir.path() / "run" / "config.txt");
  const std::string snap((std::istreambuf_iterator<char>(cfg)), {});
  CHECK(snap.find("train.max_steps = 50  # flag") != std::string::npos);
  CHECK(snap.find("model.d_model = 32  # preset:tiny") != std::string::npos);

  std::ofstream(dir.str("para.txt")) << "@p0_s0\nSee the moon.\n";
  CHECK(run({"synth", "--run", dir.str("run"), "--text", dir.str("para.txt"), "--out", dir.str("out"), "--data",
             dir.str("data"), "--no-wav"}) == 1);  // "the" is not in the lexicon
  std::ofstream(dir.str("para.txt")) << "@p0_s0\nSee me, moon.\nNo new shell.\n";
  REQUIRE(run({"synth", "--run", dir.str("run"), "--text", dir.str("para.txt"), "--out", dir.str("out"), "--data",
               dir.str("data"), "--mode", "prev"}) == 0);
  CHECK(fs::exists(dir.path() / "out" / "line1.mel"));
  CHECK(fs::exists(dir.path() / "out" / "line2.wav"));
  CHECK(run({"synth", "--run", dir.str("run"), "--text", dir.str("para.txt"), "--out", dir.str("out2"), "--data",
             dir.str("data"), "--mode", "full"}) == 1);
  CHECK(run({"synth", "--run", dir.str("run"), "--text", dir.str("para.txt"), "--out", dir.str("out2"), "--mode",
             "loud"}) == 1);

  REQUIRE(run({"edit", "--run", dir.str("run"), "--data", dir.str("data"), "--utt", "p1_s1", "--span", "0:1",
               "--replace", "mellow", "--out", dir.str("edit"), "--no-wav"}) == 0);
  CHECK(fs::exists(dir.path() / "edit" / "p1_s1_edit.mel"));
  CHECK(fs::exists(dir.path() / "edit" / "p1_s1_edit.json"));
  CHECK(run({"edit", "--run", dir.str("run"), "--data", dir.str("data"), "--utt", "p1_s1", "--span", "5:9",
             "--replace", "moon", "--out", dir.str("edit")}) == 1);
  CHECK(run({"edit", "--run", dir.str("run"), "--data", dir.str("data"), "--utt", "p1_s1", "--span", "x",
             "--out", dir.str("edit")}) == 1);

  // A prediction directory holding recordings evaluates perfectly.
  fs::create_directories(dir.path() / "pred");
  for (const char* ext : {".mel", ".f0"})
    fs::copy_file(dir.path() / "data" / "features" / (std::string("p2_s3") + ext), dir.path() / "pred" / (std::string("p2_s3") + ext));
  REQUIRE(run({"evaluate", "--pred", dir.str("pred"), "--ref", dir.str("data"), "--out", dir.str("report.json")}) == 0);
  std::ifstream rep(dir.str("report.json"));
  const auto j = nlohmann::json::parse(rep);
  CHECK(j["aggregate"]["msd"].get<double>() == 0.0);
  CHECK(j["aggregate"]["vuv_pct"].get<double>() == 0.0);

  // The prepared features scored against themselves.
  REQUIRE(run({"evaluate", "--pred", dir.str("data/features"), "--ref", dir.str("data"), "--out", dir.str("self.json")}) == 0);
  std::ifstream self(dir.str("self.json"));
  const auto s = nlohmann::json::parse(self);
  CHECK(s["aggregate"]["msd"].get<double>() == 0.0);
  CHECK(s["aggregate"]["vuv_pct"].get<double>() == 0.0);
  CHECK(s["aggregate"]["f0_corr"].get<double>() == doctest::Approx(1.0));
  CHECK(s["aggregate"]["utterances"].get<std::size_t>() == 12);
  CHECK(s["per_utterance"].size() == 12);
}
