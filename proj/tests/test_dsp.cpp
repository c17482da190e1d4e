#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "imusic/dsp.hpp"
#include "imusic/error.hpp"

using namespace imusic;
using namespace imusic::dsp;

namespace {

std::vector<cplx> random_complex(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<cplx> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = {g(rng), g(rng)};
  return x;
}

std::vector<double> random_real(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

}  // namespace

TEST_CASE("fft of a unit impulse is flat") {
  std::vector<cplx> x(8, 0.0);
  x[0] = 1.0;
  for (const auto& v : fft(x)) {
    CHECK(v.real() == doctest::Approx(1.0));
    CHECK(v.imag() == doctest::Approx(0.0));
  }
}

TEST_CASE("fft of a constant vector concentrates at DC") {
  const std::vector<cplx> x(8, 1.0);
  const auto X = fft(x);
  CHECK(X[0].real() == doctest::Approx(8.0));
  for (int k = 1; k < 8; ++k) CHECK(std::abs(X[k]) < 1e-12);
}

TEST_CASE("ifft inverts fft and Parseval holds") {
  std::mt19937_64 rng(1);
  for (int n : {2, 16, 256, 2048}) {
    const auto x = random_complex(n, rng);
    const auto X = fft(x);
    const auto y = ifft(X);
    double worst = 0, et = 0, ef = 0;
    for (int i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(x[i] - y[i]));
      et += std::norm(x[i]);
      ef += std::norm(X[i]);
    }
    CHECK(worst < 1e-6);
    CHECK(std::abs(et - ef / n) / et < 1e-6);
  }
}

TEST_CASE("fft is linear") {
  std::mt19937_64 rng(2);
  const auto x = random_complex(64, rng);
  const auto y = random_complex(64, rng);
  const cplx a{0.7, -0.2}, b{-1.3, 0.4};
  std::vector<cplx> z(64);
  for (int i = 0; i < 64; ++i) z[i] = a * x[i] + b * y[i];
  const auto X = fft(x), Y = fft(y), Z = fft(z);
  for (int k = 0; k < 64; ++k) CHECK(std::abs(Z[k] - (a * X[k] + b * Y[k])) < 1e-6);
}

TEST_CASE("non power of two lengths are rejected") {
  const std::vector<cplx> x(12, 1.0);
  CHECK_THROWS_AS(fft(x), UsageError);
  CHECK_THROWS_AS(ifft(x), UsageError);
  const StftConfig odd(1000, 250);
  const std::vector<double> sig(2000, 0.0);
  CHECK_THROWS_AS(stft(sig, odd), UsageError);
}

TEST_CASE("stft frame count has no padding") {
  const StftConfig cfg(256, 64);
  CHECK(cfg.frames_for(1024) == 13);
  const std::vector<double> x(1024, 0.0);
  const auto s = stft(x, cfg);
  CHECK(s.frames == 13);
  CHECK(s.bins == 129);
  for (const auto& v : s.values) CHECK(std::abs(v) == 0.0);
}

TEST_CASE("configs that break the overlap-add condition are rejected") {
  CHECK_THROWS_AS(StftConfig(256, 100), UsageError);
  CHECK_THROWS_AS(StftConfig(256, 256), UsageError);
  // the squared Hann window needs at least four-fold overlap
  CHECK_THROWS_AS(StftConfig(256, 128), UsageError);
  CHECK_NOTHROW(StftConfig(256, 64));
  CHECK_NOTHROW(StftConfig(1280, 320));
}

TEST_CASE("istft reconstructs the fully overlapped interior") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const StftConfig cfg(256, 64);
    const auto x = random_real(4096, rng);
    const auto y = istft(stft(x, cfg), cfg);
    double worst = 0;
    for (std::size_t i = 256; i + 256 < y.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("mel spectrogram of silence is zero and of a tone peaks at its band") {
  const StftConfig cfg(1024, 256);
  const double sr = 24000;
  const std::vector<double> zero(4096, 0.0);
  for (double v : mel_spectrogram(zero, cfg, sr, 40).values) CHECK(v == 0.0);

  std::vector<double> tone(8192);
  for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = std::sin(2 * std::numbers::pi * 440.0 * i / sr);
  const auto mel = mel_spectrogram(tone, cfg, sr, 40);
  const auto fb = mel_filterbank(40, 1024, sr);
  // Band whose triangle has the largest weight at 440 Hz.
  const int bin = static_cast<int>(std::lround(440.0 * 1024 / sr));
  int expect = 0;
  for (int m = 1; m < 40; ++m) {
    if (fb[static_cast<std::size_t>(m) * 513 + bin] > fb[static_cast<std::size_t>(expect) * 513 + bin]) expect = m;
  }
  std::vector<double> total(40, 0.0);
  for (int f = 0; f < mel.frames; ++f) {
    for (int m = 0; m < 40; ++m) total[static_cast<std::size_t>(m)] += mel.at(f, m);
  }
  const auto arg = std::max_element(total.begin(), total.end()) - total.begin();
  CHECK(arg == expect);
  const double lo = mel_to_hz(hz_to_mel(0) + (hz_to_mel(sr / 2) - hz_to_mel(0)) * (arg) / 41.0);
  const double hi = mel_to_hz(hz_to_mel(0) + (hz_to_mel(sr / 2) - hz_to_mel(0)) * (arg + 2) / 41.0);
  CHECK(lo < 440.0);
  CHECK(hi > 440.0);
}

TEST_CASE("doubling amplitude quadruples mel energy") {
  std::mt19937_64 rng(4);
  const StftConfig cfg(512, 128);
  auto x = random_real(4096, rng);
  const auto a = mel_spectrogram(x, cfg, 24000, 32);
  for (auto& v : x) v *= 2;
  const auto b = mel_spectrogram(x, cfg, 24000, 32);
  double ea = 0, eb = 0;
  for (double v : a.values) ea += v;
  for (double v : b.values) eb += v;
  CHECK(eb / ea == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("filterbank rows are non-empty and n_mels is range checked") {
  const auto fb = mel_filterbank(64, 1024, 24000);
  for (int m = 0; m < 64; ++m) {
    double s = 0;
    for (int k = 0; k < 513; ++k) s += fb[static_cast<std::size_t>(m) * 513 + k];
    CHECK(s > 0);
  }
  CHECK_THROWS_AS(mel_filterbank(0, 1024, 24000), UsageError);
  CHECK_THROWS_AS(mel_filterbank(600, 1024, 24000), UsageError);
}
