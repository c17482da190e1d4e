#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "imusic/audio_io.hpp"
#include "imusic/dsp.hpp"
#include "imusic/error.hpp"
#include "support/tempdir.hpp"

using namespace imusic;
using namespace imusic::audio;

namespace {

Waveform noise(std::size_t n, int rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.99f, 0.99f);
  Waveform w;
  w.sample_rate = rate;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(u(rng));
  return w;
}

void write_raw_wav(const std::filesystem::path& p, std::uint16_t format, std::uint16_t channels,
                   std::uint16_t bits, const std::vector<std::uint8_t>& payload) {
  std::ofstream f(p, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  f.write("RIFF", 4);
  u32(36 + static_cast<std::uint32_t>(payload.size()));
  f.write("WAVEfmt ", 8);
  u32(16);
  u16(format);
  u16(channels);
  u32(24000);
  u32(24000u * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  f.write("data", 4);
  u32(static_cast<std::uint32_t>(payload.size()));
  f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

}  // namespace

TEST_CASE("PCM16 round trip stays within one quantization step") {
  test::TempDir dir;
  const Waveform w = noise(5000, 24000, 1);
  write_wav(dir / "a.wav", w, SampleFormat::kPcm16);
  const Waveform r = read_wav(dir / "a.wav");
  REQUIRE(r.samples.size() == w.samples.size());
  CHECK(r.sample_rate == 24000);
  double worst = 0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(r.samples[i]) - w.samples[i]));
  }
  CHECK(worst <= 1.0 / 32768.0);
}

TEST_CASE("float32 round trip is bit exact") {
  test::TempDir dir;
  const Waveform w = noise(4096, 48000, 2);
  write_wav(dir / "f.wav", w);
  const Waveform r = read_wav(dir / "f.wav");
  CHECK(r.sample_rate == 48000);
  CHECK(r.samples == w.samples);
}

TEST_CASE("stereo input is averaged to mono") {
  test::TempDir dir;
  std::vector<std::uint8_t> payload;
  for (int i = 0; i < 100; ++i) {
    for (float v : {0.5f, -0.5f}) {
      const auto* b = reinterpret_cast<const std::uint8_t*>(&v);
      payload.insert(payload.end(), b, b + 4);
    }
  }
  write_raw_wav(dir / "s.wav", 3, 2, 32, payload);
  const Waveform r = read_wav(dir / "s.wav");
  REQUIRE(r.samples.size() == 100);
  for (float s : r.samples) CHECK(s == 0.0f);
}

TEST_CASE("malformed and unsupported files raise data errors") {
  test::TempDir dir;
  {
    std::ofstream f(dir / "junk.wav", std::ios::binary);
    f << "this is not a wave file";
  }
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), DataError);
  write_raw_wav(dir / "pcm24.wav", 1, 1, 24, std::vector<std::uint8_t>(30, 0));
  CHECK_THROWS_AS(read_wav(dir / "pcm24.wav"), DataError);
  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), DataError);
}

TEST_CASE("resampling preserves DC in the interior") {
  Waveform w;
  w.sample_rate = 48000;
  w.samples.assign(4800, 0.3f);
  const Waveform down = resample(w, 24000);
  CHECK(down.samples.size() == 2400);
  for (std::size_t i = 200; i < 2200; ++i) CHECK(std::abs(down.samples[i] - 0.3) <= 1e-3);
  const Waveform up = resample(down, 48000);
  CHECK(up.samples.size() == 4800);
  for (std::size_t i = 400; i < 4400; ++i) CHECK(std::abs(up.samples[i] - 0.3) <= 1e-3);
}

TEST_CASE("one second at 48 kHz becomes 24000 samples") {
  Waveform w = noise(48000, 48000, 3);
  CHECK(resample(w, 24000).samples.size() == 24000);
  w.samples.resize(48001);
  CHECK(resample(w, 24000).samples.size() == 24001);  // round(24000.5) away from zero
}

TEST_CASE("a 1 kHz tone keeps its spectral peak after downsampling") {
  Waveform w;
  w.sample_rate = 48000;
  for (int i = 0; i < 48000; ++i) w.samples.push_back(static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * 1000.0 * i / 48000)));
  const Waveform d = resample(w, 24000);
  const int n = 16384;
  std::vector<dsp::cplx> x(n);
  for (int i = 0; i < n; ++i) x[i] = d.samples[static_cast<std::size_t>(i + 2000)];
  const auto X = dsp::fft(x);
  int best = 0;
  for (int k = 1; k < n / 2; ++k) {
    if (std::abs(X[k]) > std::abs(X[best])) best = k;
  }
  const double peak_hz = best * 24000.0 / n;
  CHECK(std::abs(peak_hz - 1000.0) <= 24000.0 / n);
}

TEST_CASE("unsupported resampling ratios are rejected") {
  Waveform w = noise(100, 44100, 4);
  CHECK_THROWS_AS(resample(w, 24000), UsageError);
  CHECK_THROWS_AS(resample(w, 16000), UsageError);
}

TEST_CASE("segmentation follows the 30 second rule and keeps long remainders") {
  Waveform w;
  w.sample_rate = 24000;
  w.samples.assign(75 * 24000, 0.0f);
  const auto clips = segment(w);
  REQUIRE(clips.size() == 3);
  CHECK(clips[0].samples.size() == 30 * 24000);
  CHECK(clips[1].samples.size() == 30 * 24000);
  CHECK(clips[2].samples.size() == 15 * 24000);

  w.samples.assign(30 * 24000, 0.0f);
  CHECK(segment(w).size() == 1);
  w.samples.assign(12000, 0.0f);
  CHECK(segment(w).empty());
  CHECK_THROWS_AS(segment(w, 0.0), UsageError);
}

TEST_CASE("concatenated segments reproduce the input plus the dropped tail") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1000, 20000)(rng);
    const Waveform w = noise(n, 1000, seed);
    const auto clips = segment(w, 3.0);
    std::vector<float> joined;
    for (const auto& c : clips) joined.insert(joined.end(), c.samples.begin(), c.samples.end());
    REQUIRE(joined.size() <= n);
    CHECK(n - joined.size() < 1000);
    CHECK(std::equal(joined.begin(), joined.end(), w.samples.begin()));
  }
}
