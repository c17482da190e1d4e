#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "imusic/corpus.hpp"
#include "imusic/error.hpp"
#include "support/tempdir.hpp"

using namespace imusic;
using namespace imusic::corpus;

namespace {

ClipSpec make_spec(Genre g, int bpm, double seconds, std::uint64_t seed) {
  ClipSpec s;
  s.genre = g;
  s.bpm = bpm;
  s.key = 2;
  s.structure = {Section::kVerse, Section::kChorus};
  s.duration_s = seconds;
  s.seed = seed;
  return s;
}

// Half-wave rectified energy flux at 100 frames/s.
std::vector<double> onset_envelope(const std::vector<float>& x, int rate) {
  const int frame = rate / 100;
  std::vector<double> energy;
  for (std::size_t i = 0; i + frame <= x.size(); i += frame) {
    double e = 0;
    for (int j = 0; j < frame; ++j) e += x[i + j] * x[i + j];
    energy.push_back(std::log(1e-6 + e));
  }
  std::vector<double> flux(energy.size(), 0.0);
  for (std::size_t i = 1; i < energy.size(); ++i) flux[i] = std::max(0.0, energy[i] - energy[i - 1]);
  return flux;
}

}  // namespace

TEST_CASE("a 2 s clip has 96000 samples and peak 0.9") {
  const auto w = synthesize_clip(make_spec(Genre::kFolk, 100, 2.0, 11));
  CHECK(w.sample_rate == 48000);
  CHECK(w.samples.size() == 96000);
  float peak = 0;
  for (float s : w.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("synthesis is deterministic for a fixed seed") {
  const auto spec = make_spec(Genre::kJazz, 110, 1.5, 99);
  CHECK(synthesize_clip(spec).samples == synthesize_clip(spec).samples);
  auto other = spec;
  other.seed = 100;
  CHECK(synthesize_clip(other).samples != synthesize_clip(spec).samples);
}

TEST_CASE("120 bpm clips have their onset autocorrelation peak at half a second") {
  for (Genre g : {Genre::kElectronic, Genre::kRock, Genre::kHipHop}) {
    const auto w = synthesize_clip(make_spec(g, 120, 8.0, 5));
    const auto env = onset_envelope(w.samples, w.sample_rate);
    double mean = 0;
    for (double v : env) mean += v;
    mean /= static_cast<double>(env.size());
    int best_lag = 0;
    double best = -1e300;
    for (int lag = 30; lag <= 90; ++lag) {  // 0.3 s .. 0.9 s
      double acc = 0;
      for (std::size_t i = 0; i + lag < env.size(); ++i) acc += (env[i] - mean) * (env[i + lag] - mean);
      acc /= static_cast<double>(env.size() - lag);
      if (acc > best) {
        best = acc;
        best_lag = lag;
      }
    }
    INFO("genre " << genre_name(g));
    CHECK(std::abs(best_lag - 50) <= 1);
  }
}

TEST_CASE("invalid specs are rejected") {
  auto s = make_spec(Genre::kRock, 59, 2.0, 1);
  CHECK_THROWS_AS(synthesize_clip(s), UsageError);
  s.bpm = 181;
  CHECK_THROWS_AS(s.validate(), UsageError);
  s.bpm = 120;
  s.duration_s = 0.5;
  CHECK_THROWS_AS(s.validate(), UsageError);
  s.duration_s = 481;
  CHECK_THROWS_AS(s.validate(), UsageError);
}

TEST_CASE("captions mention genre and tempo bucket") {
  const auto s = make_spec(Genre::kJazz, 90, 4.0, 3);
  const std::string c = caption_from_spec(s);
  CHECK(c.find("jazz") != std::string::npos);
  CHECK((c.find("slow") != std::string::npos || c.find("medium") != std::string::npos));
  CHECK(caption_from_spec(s) == c);
  CHECK(tempo_word(89) == "slow");
  CHECK(tempo_word(90) == "medium");
  CHECK(tempo_word(130) == "fast");
}

TEST_CASE("caption templates cover at least four variants") {
  const auto specs = plan_specs(1000, 17);
  std::set<int> seen;
  for (const auto& s : specs) seen.insert(caption_template_index(s));
  CHECK(seen.size() >= 4);
}

TEST_CASE("genre histogram matches requested weights") {
  DatasetOptions opts;
  opts.genre_weights = {4, 1, 1, 1, 1, 1, 0.5, 0.5};
  const auto specs = plan_specs(800, 21, opts);
  std::vector<int> counts(kGenreCount, 0);
  for (const auto& s : specs) ++counts[static_cast<std::size_t>(s.genre)];
  const double total = 10.0;
  for (int g = 0; g < kGenreCount; ++g) {
    const double frac = counts[static_cast<std::size_t>(g)] / 800.0;
    CHECK(std::abs(frac - opts.genre_weights[static_cast<std::size_t>(g)] / total) <= 0.03);
  }
}

TEST_CASE("build_dataset writes paired views and a manifest") {
  test::TempDir dir;
  DatasetOptions opts;
  opts.duration_s = 1.0;
  const auto m = build_dataset(8, dir.path(), 7, opts);
  REQUIRE(m.records.size() == 8);
  for (const auto& r : m.records) {
    CHECK(std::filesystem::exists(m.master_path(r)));
    CHECK(std::filesystem::exists(m.view_path(r)));
    CHECK(!r.caption.empty());
    const auto master = audio::read_wav(m.master_path(r));
    const auto view = audio::read_wav(m.view_path(r));
    CHECK(master.sample_rate == 48000);
    CHECK(audio::resample(master, 24000).samples == view.samples);
  }
  const auto back = read_manifest(dir / "manifest.jsonl");
  REQUIRE(back.records.size() == 8);
  CHECK(manifest_line(back.records[3]) == manifest_line(m.records[3]));

  test::TempDir again;
  build_dataset(8, again.path(), 7, opts);
  std::ifstream a(dir / "manifest.jsonl"), b(again / "manifest.jsonl");
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("a 75 s clip yields three segment records") {
  test::TempDir dir;
  DatasetOptions opts;
  opts.duration_s = 75.0;
  const auto m = build_dataset(1, dir.path(), 3, opts);
  REQUIRE(m.records.size() == 3);
  CHECK(m.records[0].duration == doctest::Approx(30.0));
  CHECK(m.records[1].duration == doctest::Approx(30.0));
  CHECK(m.records[2].duration == doctest::Approx(15.0));
}

TEST_CASE("unwritable output directory is reported with its path") {
  test::TempDir dir;
  { std::ofstream f(dir / "file"); }
  try {
    build_dataset(1, dir / "file", 1);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("file") != std::string::npos);
  }
}
