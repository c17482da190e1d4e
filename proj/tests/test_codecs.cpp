#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "imusic/acoustic_codec.hpp"
#include "imusic/error.hpp"
#include "imusic/semantic_codec.hpp"
#include "support/tempdir.hpp"

using namespace imusic;

namespace {

std::vector<float> randn(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(g(rng));
  return v;
}

// Exhaustive scan written independently of the library.
int scan_nearest(const std::vector<float>& table, int dim, const float* h) {
  const int rows = static_cast<int>(table.size()) / dim;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < rows; ++k) {
    double d = 0;
    for (int j = 0; j < dim; ++j) {
      const double diff = static_cast<double>(h[j]) - table[static_cast<std::size_t>(k * dim + j)];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

sem::SemCodecConfig small_sem(int v) {
  auto c = sem::SemCodecConfig::desk();
  c.v_sem = v;
  return c;
}

audio::Waveform tone(int rate, double seconds, double hz) {
  audio::Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(std::llround(rate * seconds)));
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = static_cast<float>(0.3 * std::sin(2 * M_PI * hz * static_cast<double>(i) / rate));
  }
  return w;
}

}  // namespace

TEST_CASE("nearest code matches an exhaustive scan") {
  std::mt19937_64 rng(3);
  const int dim = 8;
  const auto table = randn(16 * dim, rng);
  for (int i = 0; i < 1000; ++i) {
    const auto h = randn(dim, rng);
    REQUIRE(sem::nearest_code(table, dim, h) == scan_nearest(table, dim, h.data()));
  }
}

TEST_CASE("equidistant codewords resolve to the lower index") {
  std::vector<float> table(8 * 2, 10.0f);
  table[2 * 2] = 1.0f;
  table[2 * 2 + 1] = 0.0f;
  table[5 * 2] = -1.0f;
  table[5 * 2 + 1] = 0.0f;
  const std::vector<float> h{0.0f, 0.0f};
  CHECK(sem::nearest_code(table, 2, h) == 2);
}

TEST_CASE("quantizing a codeword returns it exactly") {
  const sem::SemanticCodec codec(small_sem(16), 5);
  const auto cb = codec.codebook();
  const int dim = codec.config().code_dim;
  for (int k = 0; k < 16; ++k) {
    const std::span<const float> row(cb.data().data() + k * dim, static_cast<std::size_t>(dim));
    const auto [code, word] = codec.quantize(row);
    CHECK(code == k);
    CHECK(std::equal(word.begin(), word.end(), row.begin()));
  }
}

TEST_CASE("semantic frame arithmetic") {
  const sem::SemanticCodec codec(small_sem(16), 1);
  CHECK(codec.frames_for(24000) == 75);
  CHECK(codec.frames_for(1) == 1);
  CHECK(codec.frames_for(320) == 1);
  CHECK(codec.frames_for(321) == 2);
  const auto toks = codec.encode(tone(24000, 1.0, 220));
  CHECK(toks.codes.size() == 75);
  CHECK(toks.duration_seconds() == doctest::Approx(1.0));
  for (int c : toks.codes) CHECK((c >= 0 && c < 16));
  CHECK(codec.decode(toks).samples.size() == 75u * 320u);
  CHECK(codec.decode(toks).sample_rate == 24000);
}

TEST_CASE("semantic codec rejects the wrong rate and bad codes") {
  const sem::SemanticCodec codec(small_sem(16), 1);
  CHECK_THROWS_AS(codec.encode(tone(48000, 0.1, 220)), UsageError);
  sem::SemanticTokenSeq bad{{0, 16}, 16};
  CHECK_THROWS(codec.decode(bad));
}

TEST_CASE("bitrate of the full-scale tokenizer is 900 bit/s") {
  CHECK(sem::SemCodecConfig::full_scale().bitrate() == 900.0);
  CHECK(sem::SemCodecConfig::full_scale().frame_rate() == 75);
}

TEST_CASE("token stream round trip") {
  test::TempDir dir;
  sem::SemanticTokenSeq s{{0, 5, 255, 17, 3}, 256};
  sem::write_tokens(dir / "a.semt", s);
  const auto back = sem::read_tokens(dir / "a.semt");
  CHECK(back.codes == s.codes);
  CHECK(back.v_sem == 256);
  std::ofstream(dir / "junk.semt") << "nope";
  CHECK_THROWS_AS(sem::read_tokens(dir / "junk.semt"), DataError);
}

TEST_CASE("semantic training loss is positive on audio at init") {
  sem::SemanticCodec codec(small_sem(16), 2);
  const auto w = tone(24000, 0.2, 330);
  auto sig = nc::Tensor::from({static_cast<int>(w.samples.size()) / 320 * 320},
                              std::vector<float>(w.samples.begin(), w.samples.begin() + 4800));
  sem::SemLossParts parts;
  const auto l = codec.loss(sig, &parts);
  CHECK(l.data()[0] > 0);
  CHECK(std::isfinite(parts.total));
}

TEST_CASE("residual VQ matches greedy brute force") {
  std::mt19937_64 rng(9);
  const int stages = 4, size = 8, dim = 4;
  std::vector<nc::Tensor> books;
  std::vector<std::vector<float>> raw;
  for (int s = 0; s < stages; ++s) {
    raw.push_back(randn(size * dim, rng, 1.0 / (s + 1)));
    books.push_back(nc::Tensor::from({size, dim}, raw.back()));
  }
  const ac::ResidualVq rvq(books);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = randn(dim, rng);
    std::vector<float> r = x;
    std::vector<int> expect;
    std::vector<float> sum(dim, 0.0f);
    for (int s = 0; s < stages; ++s) {
      const int k = scan_nearest(raw[s], dim, r.data());
      expect.push_back(k);
      for (int j = 0; j < dim; ++j) {
        r[j] -= raw[s][k * dim + j];
        sum[j] += raw[s][k * dim + j];
      }
    }
    const auto [codes, q] = rvq.quantize(x);
    REQUIRE(codes == expect);
    for (int j = 0; j < dim; ++j) CHECK(q[j] == doctest::Approx(sum[j]).epsilon(1e-6));
  }
}

TEST_CASE("exact codeword sums are recovered") {
  // Stage scales 10, 1, 0.1, 0.01 on a line make the greedy choice unique.
  std::vector<nc::Tensor> books;
  const double scale[] = {10.0, 1.0, 0.1, 0.01};
  for (double s : scale) {
    std::vector<float> v;
    for (int k = 0; k < 8; ++k) v.push_back(static_cast<float>(k * s));
    books.push_back(nc::Tensor::from({8, 1}, v));
  }
  const ac::ResidualVq rvq(books);
  const std::vector<int> codes{3, 1, 4, 1};
  const auto x = rvq.dequantize(codes);
  const auto [got, q] = rvq.quantize(x);
  CHECK(got == codes);
  CHECK(q == x);
  CHECK(rvq.residual_norms(x).back() < 1e-6);
}

TEST_CASE("one-stage RVQ is plain VQ") {
  std::mt19937_64 rng(11);
  const auto table = randn(16 * 6, rng);
  const ac::ResidualVq rvq({nc::Tensor::from({16, 6}, table)});
  for (int i = 0; i < 100; ++i) {
    const auto x = randn(6, rng);
    CHECK(rvq.quantize(x).first[0] == sem::nearest_code(table, 6, x));
  }
}

TEST_CASE("residual norms never grow across stages on fitted codebooks") {
  std::mt19937_64 rng(4);
  ac::AcCodecConfig cfg = ac::AcCodecConfig::desk();
  cfg.codebook_size = 32;
  ac::AcousticCodec codec(cfg, 4);
  // Codec latents of tonal audio are close to low rank: 4 latent factors
  // spread over 64 channels plus a little noise.
  const int n_frames = 4000, rank = 4;
  const auto mixing = randn(static_cast<std::size_t>(rank) * cfg.latent_dim, rng);
  std::vector<float> latents(static_cast<std::size_t>(n_frames) * cfg.latent_dim);
  std::normal_distribution<double> g;
  for (int f = 0; f < n_frames; ++f) {
    double z[rank];
    for (double& v : z) v = g(rng);
    for (int c = 0; c < cfg.latent_dim; ++c) {
      double acc = 0.01 * g(rng);
      for (int r = 0; r < rank; ++r) acc += z[r] * mixing[static_cast<std::size_t>(r) * cfg.latent_dim + c];
      latents[static_cast<std::size_t>(f) * cfg.latent_dim + c] = static_cast<float>(acc);
    }
  }
  codec.init_codebooks(latents, 4);
  int ok = 0, total = 0;
  for (int f = 0; f < n_frames; ++f) {
    const std::span<const float> x(latents.data() + f * cfg.latent_dim, static_cast<std::size_t>(cfg.latent_dim));
    const auto n = codec.rvq().residual_norms(x);
    bool mono = true;
    for (std::size_t i = 1; i < n.size(); ++i) mono = mono && n[i] <= n[i - 1] + 1e-6;
    ok += mono;
    ++total;
  }
  CHECK(ok >= 0.99 * total);
}

TEST_CASE("acoustic frame arithmetic and rate checks") {
  ac::AcCodecConfig cfg = ac::AcCodecConfig::desk();
  cfg.codebook_size = 16;
  const ac::AcousticCodec codec(cfg, 1);
  CHECK(codec.frames_for(48000) == 150);
  CHECK(codec.frames_for(96000) == 300);
  CHECK(codec.frames_for(48001) == 151);
  const auto z = codec.encode(tone(48000, 1.0, 440));
  CHECK(z.frames == 150);
  CHECK(z.channels == cfg.latent_dim);
  CHECK(codec.decode(z).samples.size() == 48000u);
  CHECK(codec.decode(z).sample_rate == 48000);
  CHECK_THROWS_AS(codec.encode(tone(24000, 0.1, 440)), UsageError);
}

TEST_CASE("zero latent through a zero-bias decoder is silent") {
  ac::AcCodecConfig cfg = ac::AcCodecConfig::desk();
  cfg.codebook_size = 16;
  ac::AcousticCodec codec(cfg, 1);
  for (auto& [name, t] : codec.params().named()) {
    if (name.size() > 2 && (name.ends_with(".b"))) {
      auto d = nc::Tensor(t).data();
      std::fill(d.begin(), d.end(), 0.0f);
    }
  }
  ac::AcousticLatent z{10, cfg.latent_dim, std::vector<float>(10u * cfg.latent_dim, 0.0f)};
  const auto w = codec.decode(z);
  CHECK(w.samples.size() == 3200u);
  for (float s : w.samples) REQUIRE(s == 0.0f);
}

TEST_CASE("random crops are exactly one second") {
  std::mt19937_64 rng(1);
  const auto longer = tone(48000, 2.5, 100);
  const auto shorter = tone(48000, 0.3, 100);
  CHECK(ac::random_crop(longer, ac::kCropSamples, rng).samples.size() == 48000u);
  const auto padded = ac::random_crop(shorter, ac::kCropSamples, rng);
  CHECK(padded.samples.size() == 48000u);
}
