#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "ctxtts/config.hpp"
#include "ctxtts/errors.hpp"
#include "support.hpp"

using namespace ctxtts;
using namespace ctxtts::config;

TEST_CASE("key-value text with sections and comments") {
  const auto kv = parse_key_values("# top\na.b = 1\n[model]\nd_model = 64  # note\nphones = \"sil aa\"\n", "t");
  CHECK(kv.at("a.b") == "1");
  CHECK(kv.at("model.d_model") == "64");
  CHECK(kv.at("model.phones") == "sil aa");
  CHECK_THROWS_AS(parse_key_values("nonsense\n", "t"), InvalidConfig);
  CHECK_THROWS_AS(parse_key_values("[model\n", "t"), InvalidConfig);
  CHECK_THROWS_AS(parse_key_values(" = 3\n", "t"), InvalidConfig);
  CHECK(format_key_values({{"b", "2"}, {"a", "1"}}) == "a = 1\nb = 2\n");
}

TEST_CASE("doubles survive formatting") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, double(i % 20) - 10.0);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("values, type errors and unknown keys") {
  RunConfig c;
  c.apply({{"model.d_model", "64"}, {"model.use_cu", "false"}, {"train.peak_lr", "2e-3"}}, "flag");
  CHECK(c.model.d_model == 64);
  CHECK_FALSE(c.model.use_cu);
  CHECK(c.train.peak_lr == 2e-3);
  CHECK_THROWS_AS(c.apply({{"model.d_model", "big"}}, "flag"), InvalidConfig);
  CHECK_THROWS_AS(c.apply({{"model.use_cu", "maybe"}}, "flag"), InvalidConfig);
  CHECK_THROWS_AS(c.apply({{"model.nope", "1"}}, "flag"), InvalidConfig);
  CHECK_THROWS_AS(c.apply({{"train.max_steps", "-1"}}, "flag"), InvalidConfig);
}

TEST_CASE("later sources win and provenance is recorded") {
  testsupport::TempDir dir("cfg");
  std::ofstream(dir.str("a.conf")) << "[train]\nbatch_size = 8\npeak_lr = 0.5\n";
  RunConfig c;
  apply_preset(c, "tiny");
  CHECK(c.train.batch_size == 4);
  c.apply_file(dir.str("a.conf"));
  c.apply({{"train.peak_lr", "0.25"}}, "flag");
  CHECK(c.train.batch_size == 8);
  CHECK(c.train.peak_lr == 0.25);
  const auto snap = c.snapshot();
  CHECK(snap.find("train.batch_size = 8  # file:" + dir.str("a.conf")) != std::string::npos);
  CHECK(snap.find("train.peak_lr = 0.25  # flag") != std::string::npos);
  CHECK(snap.find("model.d_model = 32  # preset:tiny") != std::string::npos);
  CHECK(snap.find("train.epsilon = 1e-09  # default") != std::string::npos);

  RunConfig back;
  back.apply(c.values(), "snapshot");
  CHECK(back.values() == c.values());
  CHECK_THROWS_AS(c.apply_file(dir.str("missing.conf")), InvalidConfig);
  CHECK_THROWS_AS(apply_preset(c, "huge"), InvalidConfig);
}

TEST_CASE("cross-section validation") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.audio.mel_bins = 40;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c = RunConfig();
  c.embedder.dim = 32;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c.model.use_cu = false;
  CHECK_NOTHROW(c.validate());
}
