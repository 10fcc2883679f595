#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mvd/toyworld.hpp"

using namespace mvd;

namespace {
Config cfg_default() { return Config{}; }
}  // namespace

TEST_CASE("vocab ids are dense with null at 0", "[toyworld]") {
  REQUIRE(PromptVocab::id("null") == 0);
  REQUIRE(PromptVocab::id("left") == 1);
  REQUIRE(PromptVocab::id("fast") == 6);
  REQUIRE(PromptVocab::kSize == 7);
  REQUIRE_THROWS_AS(PromptVocab::id("sideways"), DataError);
  REQUIRE(PromptVocab::parse("right slow") ==
          std::vector<int32_t>{PromptVocab::kRight, PromptVocab::kSlow});
  REQUIRE(PromptVocab::render({PromptVocab::kUp, PromptVocab::kFast}) == "up fast");
}

TEST_CASE("clips are deterministic per seed", "[toyworld]") {
  auto cfg = cfg_default();
  auto a = gen_clip(PromptVocab::parse("right slow"), 8, cfg, 42);
  auto b = gen_clip(PromptVocab::parse("right slow"), 8, cfg, 42);
  REQUIRE(a.frames.size() == 8);
  for (size_t k = 0; k < a.frames.size(); ++k)
    REQUIRE(std::equal(a.frames[k].data().begin(), a.frames[k].data().end(),
                       b.frames[k].data().begin()));
  auto c = gen_clip(PromptVocab::parse("right slow"), 8, cfg, 43);
  double diff = 0;
  for (int i = 0; i < a.frames[0].numel(); ++i)
    diff += std::abs(a.frames[0].data()[i] - c.frames[0].data()[i]);
  REQUIRE(diff > 0.0);
}

TEST_CASE("zero-velocity prompts are static clips", "[toyworld]") {
  auto cfg = cfg_default();
  auto clip = gen_clip({PromptVocab::kNull}, 6, cfg, 7);
  for (size_t k = 1; k < clip.frames.size(); ++k)
    REQUIRE(std::equal(clip.frames[0].data().begin(), clip.frames[0].data().end(),
                       clip.frames[k].data().begin()));
  REQUIRE(motion_score(clip) == 0.0);
}

TEST_CASE("com displacement matches the prompt for all directions", "[toyworld]") {
  auto cfg = cfg_default();
  int checked = 0;
  for (const char* dir : {"left", "right", "up", "down"})
    for (const char* speed : {"slow", "fast"})
      for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        auto clip = gen_clip(PromptVocab::parse(std::string(dir) + " " + speed), 24,
                             cfg, 1000 + seed);
        auto [dx, dy] = com_displacement(clip);
        if (std::string(dir) == "left") REQUIRE(dx < 0);
        if (std::string(dir) == "right") REQUIRE(dx > 0);
        if (std::string(dir) == "up") REQUIRE(dy < 0);
        if (std::string(dir) == "down") REQUIRE(dy > 0);
        // dominant axis matches
        const bool horizontal = std::string(dir) == "left" || std::string(dir) == "right";
        if (horizontal) REQUIRE(std::abs(dx) > std::abs(dy));
        else REQUIRE(std::abs(dy) > std::abs(dx));
        ++checked;
      }
  REQUIRE(checked == 40);
}

TEST_CASE("x-coordinate strictly increases for 'right slow' until wrap", "[toyworld]") {
  auto cfg = cfg_default();
  cfg.jitter = 0.0;  // pure translation
  auto clip = gen_clip(PromptVocab::parse("right slow"), 12, cfg, 11);
  auto coms = com_track(clip);
  auto wrap_step = [&](double d) {
    while (d > cfg.latent_w / 2.0) d -= cfg.latent_w;
    while (d < -cfg.latent_w / 2.0) d += cfg.latent_w;
    return d;
  };
  for (size_t k = 1; k < coms.size(); ++k)
    REQUIRE(wrap_step(coms[k].first - coms[k - 1].first) > 0.0);
}

TEST_CASE("motion score is monotone in speed and calibrated near 20", "[toyworld]") {
  auto cfg = cfg_default();
  double slow_avg = 0, fast_avg = 0;
  for (uint64_t s : {1ull, 2ull, 3ull, 4ull}) {
    slow_avg += motion_score(gen_clip(PromptVocab::parse("right slow"), 24, cfg, s));
    fast_avg += motion_score(gen_clip(PromptVocab::parse("right fast"), 24, cfg, s));
  }
  slow_avg /= 4;
  fast_avg /= 4;
  REQUIRE(fast_avg > slow_avg);
  REQUIRE(fast_avg > 10.0);
  REQUIRE(fast_avg < 25.0);
  REQUIRE(slow_avg > 1.0);  // slow clips survive the paper filter band
  REQUIRE_THROWS_AS(motion_score(gen_clip({PromptVocab::kNull}, 1, cfg, 1)), ContractError);
}

TEST_CASE("corpus round-trips losslessly", "[toyworld]") {
  auto cfg = cfg_default();
  cfg.corpus_clips = 6;
  cfg.clip_length = 5;
  const auto dir = std::filesystem::temp_directory_path() / "mvd_toyworld_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "corpus.bin").string();

  auto stats = build_corpus(cfg, Rng(99), path);
  REQUIRE(stats.kept == 6);

  auto corpus = load_corpus(path);
  REQUIRE(corpus.clips.size() == 6);
  REQUIRE(corpus.latent_shape == Shape{1, 16, 16});
  for (const auto& clip : corpus.clips) {
    // regenerate from stored metadata: byte-identical frames
    auto regen = gen_clip(clip.prompt, static_cast<int64_t>(clip.frames.size()), cfg,
                          clip.meta.seed);
    for (size_t k = 0; k < clip.frames.size(); ++k)
      REQUIRE(std::equal(clip.frames[k].data().begin(), clip.frames[k].data().end(),
                         regen.frames[k].data().begin()));
  }

  // write twice: byte-identical files
  const auto path2 = (dir / "corpus2.bin").string();
  save_corpus(corpus, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
  REQUIRE(b1 == b2);

  // truncation is detected
  const auto path3 = (dir / "trunc.bin").string();
  {
    std::ofstream out(path3, std::ios::binary);
    out.write(b1.data(), static_cast<std::streamsize>(b1.size() / 2));
  }
  REQUIRE_THROWS_AS(load_corpus(path3), DataError);
}

TEST_CASE("motion filter drops out-of-band clips", "[toyworld]") {
  auto cfg = cfg_default();
  cfg.corpus_clips = 4;
  cfg.clip_length = 5;
  const auto dir = std::filesystem::temp_directory_path() / "mvd_toyworld_test";
  std::filesystem::create_directories(dir);

  // inclusive-of-everything band drops nothing
  cfg.motion_lo = 0.0;
  cfg.motion_hi = 1e9;
  auto stats = build_corpus(cfg, Rng(5), (dir / "all.bin").string());
  REQUIRE(stats.dropped == 0);

  // an impossible band keeps rejecting until the attempt cap trips
  cfg.motion_lo = 1e6;
  cfg.motion_hi = 1e7;
  REQUIRE_THROWS_AS(build_corpus(cfg, Rng(5), (dir / "none.bin").string()), DataError);
}
