#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "imusic/error.hpp"
#include "imusic/evalkit.hpp"
#include "support/tempdir.hpp"

using namespace imusic;
using namespace imusic::eval;

namespace {

std::vector<std::vector<float>> gaussian_rows(int n, const std::vector<double>& mean, const std::vector<double>& sd,
                                              std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<std::vector<float>> rows(static_cast<std::size_t>(n));
  for (auto& r : rows) {
    for (std::size_t j = 0; j < mean.size(); ++j) r.push_back(static_cast<float>(mean[j] + sd[j] * g(rng)));
  }
  return rows;
}

audio::Waveform chord(double f0, double seconds, int rate = 24000) {
  audio::Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    w.samples[i] = static_cast<float>(0.2 * std::sin(2 * M_PI * f0 * t) + 0.1 * std::sin(2 * M_PI * 1.5 * f0 * t));
  }
  return w;
}

}  // namespace

TEST_CASE("Frechet distance of a set with itself is zero") {
  std::mt19937_64 rng(1);
  const auto rows = gaussian_rows(200, std::vector<double>(6, 0.5), std::vector<double>(6, 1.3), rng);
  const auto s = EmbeddingStats::from_rows(rows);
  CHECK(frechet_distance(s, s) == 0.0);
}

TEST_CASE("one-dimensional Frechet distance matches the closed form") {
  EmbeddingStats a{1, {0.7}, {2.25}}, b{1, {-0.4}, {0.36}};
  const double want = (0.7 + 0.4) * (0.7 + 0.4) + 2.25 + 0.36 - 2 * std::sqrt(2.25 * 0.36);
  CHECK(std::abs(frechet_distance(a, b) - want) < 1e-9);
}

TEST_CASE("diagonal covariances reduce to per-axis terms") {
  EmbeddingStats a{3, {1, 2, 3}, {4, 0, 0, 0, 1, 0, 0, 0, 9}};
  EmbeddingStats b{3, {0, 2, 5}, {1, 0, 0, 0, 1, 0, 0, 0, 16}};
  // |dmu|^2 = 1 + 0 + 4; sum (sa - sb)^2 = 1 + 0 + 1
  CHECK(std::abs(frechet_distance(a, b) - 7.0) < 1e-9);
  CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9);
}

TEST_CASE("Frechet distance grows with additive noise") {
  std::mt19937_64 rng(2);
  const auto rows = gaussian_rows(500, std::vector<double>(8, 0.0), std::vector<double>(8, 1.0), rng);
  const auto ref = EmbeddingStats::from_rows(rows);
  double prev = -1;
  std::normal_distribution<double> g;
  for (double sigma : {0.0, 0.01, 0.05}) {
    std::mt19937_64 noise_rng(3);
    auto noisy = rows;
    for (auto& r : noisy) {
      for (auto& x : r) x += static_cast<float>(sigma * g(noise_rng));
    }
    const double fd = frechet_distance(ref, EmbeddingStats::from_rows(noisy));
    CHECK(fd > prev);
    prev = fd;
  }
}

TEST_CASE("covariance checks") {
  EmbeddingStats asym{2, {0, 0}, {1, 0.5, 0.2, 1}};
  CHECK_THROWS(asym.validate());
  EmbeddingStats neg{2, {0, 0}, {1, 0, 0, -1}};
  CHECK_THROWS(neg.validate());
}

TEST_CASE("label KL") {
  const std::vector<double> p{1, 0}, q{0.5, 0.5};
  CHECK(std::abs(kl_labels(p, q) - std::log(2.0)) < 1e-9);
  CHECK(kl_labels(q, q) == 0.0);
  const std::vector<double> zero_q{1, 0}, half{0.5, 0.5};
  CHECK(std::isfinite(kl_labels(half, zero_q)));
  CHECK_THROWS(kl_labels(std::vector<double>{0.7, 0.7}, q));
  CHECK_THROWS(kl_labels(p, std::vector<double>{1.0, 0.0, 0.0}));
}

TEST_CASE("SI-SNR of a known noise level") {
  // 100 full cycles: sin and cos are orthogonal and both zero-mean.
  const int n = 48000;
  std::vector<float> ref(n), est(n);
  for (int i = 0; i < n; ++i) {
    const double ph = 2 * M_PI * 100.0 * i / n;
    ref[i] = static_cast<float>(std::sin(ph));
    est[i] = static_cast<float>(3.0 * std::sin(ph) + 0.3 * std::cos(ph));
  }
  CHECK(si_snr(est, ref) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(si_snr(ref, ref) > 100.0);
}

TEST_CASE("alignment is the cosine") {
  const std::vector<float> a{1, 0, 0}, b{1, 1, 0};
  CHECK(alignment_score(a, b) == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(alignment_score(a, a) == doctest::Approx(1.0));
}

TEST_CASE("feature extractors") {
  const auto f = audio_features(chord(220, 1.0));
  CHECK(f.size() == static_cast<std::size_t>(kAudioFeatures));
  for (float x : f) CHECK(std::isfinite(x));
  CHECK(audio_features(chord(220, 1.0)) == f);
  CHECK(audio_features(chord(440, 1.0)) != f);
  const auto t = text_features("Calm piano at a slow tempo");
  CHECK(t.size() == static_cast<std::size_t>(kTextFeatures));
  CHECK(t == text_features("calm PIANO at a slow tempo"));
  CHECK(t != text_features("energetic rock"));
}

TEST_CASE("evaluator bundle round trip") {
  Evaluator ev;
  ev.classifier = GenreClassifier(5);
  ev.encoder = DualEncoder(6);
  ev.heldout_accuracy = 0.9;
  ev.seed = 5;
  const auto back = Evaluator::from_bundle(ev.to_bundle());
  const auto feats = audio_features(chord(330, 0.5));
  CHECK(back.classifier.predict(feats) == ev.classifier.predict(feats));
  CHECK(back.encoder.embed_text("folk song") == ev.encoder.embed_text("folk song"));
  CHECK(back.heldout_accuracy == doctest::Approx(0.9));
  const auto e = ev.encoder.embed_audio(chord(330, 0.5));
  double norm = 0;
  for (float x : e) norm += static_cast<double>(x) * x;
  CHECK(e.size() == static_cast<std::size_t>(kEmbedDim));
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("a run compared with itself") {
  test::TempDir dir;
  std::filesystem::create_directories(dir / "gen");
  std::filesystem::create_directories(dir / "ref");
  for (int i = 0; i < 4; ++i) {
    const auto w = chord(200.0 + 60 * i, 0.5);
    audio::write_wav(dir / "gen" / ("c" + std::to_string(i) + ".wav"), w);
    audio::write_wav(dir / "ref" / ("c" + std::to_string(i) + ".wav"), w);
    std::ofstream(dir / "gen" / ("c" + std::to_string(i) + ".txt")) << "calm piano";
  }
  Evaluator ev;
  const auto r = evaluate_run(dir / "gen", dir / "ref", ev);
  CHECK(r.n == 4);
  CHECK(r.paired);
  CHECK(r.fd == 0.0);
  CHECK(r.kl == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(r.align.has_value());
  REQUIRE(r.si_snr.has_value());
  CHECK(*r.si_snr > 100.0);
  const auto json = r.to_json(7, "test");
  CHECK(json.find("\"kl\"") != std::string::npos);
  CHECK(json.find("\"seed\"") != std::string::npos);
  CHECK_THROWS_AS(evaluate_run(dir / "missing", dir / "ref", ev), DataError);
}
