#pragma once

// Objective metrics: Frechet distance between Gaussian fits of embedding
// sets, KL divergence between genre label distributions, caption/audio
// alignment from a small dual encoder, and SI-SNR for codec checks. The
// embedders are trained on the synthetic corpus, so absolute values only mean
// something relative to each other.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imusic/audio_io.hpp"
#include "imusic/checkpoint.hpp"
#include "imusic/corpus.hpp"
#include "imusic/nn.hpp"

namespace imusic::eval {

struct EmbeddingStats {
  int dim = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // dim x dim, row-major (population covariance)

  static EmbeddingStats from_rows(std::span<const std::vector<float>> rows);
  // Symmetric and PSD within -1e-8.
  void validate() const;
};

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)). Negative eigenvalues
// of the inner product are clamped to zero; `clamped` reports whether that
// happened beyond rounding.
double frechet_distance(const EmbeddingStats& a, const EmbeddingStats& b, bool* clamped = nullptr);

// sum p ln(p / q) with q floored at 1e-10. Both must be distributions.
double kl_labels(std::span<const double> p, std::span<const double> q);

double si_snr(std::span<const float> estimate, std::span<const float> reference);
// Mean absolute log-magnitude difference over a 1024/256 STFT.
double spectral_distance(std::span<const float> estimate, std::span<const float> reference);
// Cosine of two non-zero vectors.
double alignment_score(std::span<const float> text_emb, std::span<const float> audio_emb);

inline constexpr int kAudioFeatures = 128;
inline constexpr int kTextFeatures = 128;
inline constexpr int kEmbedDim = 32;

// Mean and standard deviation over frames of 64 log-mel bands at 24 kHz.
std::vector<float> audio_features(const audio::Waveform& w);
// Hashed bag of lower-cased words.
std::vector<float> text_features(std::string_view caption);

class GenreClassifier {
 public:
  explicit GenreClassifier(std::uint64_t seed);

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  // Full-batch training on precomputed features; also fixes the feature
  // standardisation.
  void fit(const std::vector<std::vector<float>>& feats, const std::vector<int>& labels, int steps, double lr);
  std::vector<double> predict(std::span<const float> feats) const;
  std::vector<double> classify(const audio::Waveform& w) const { return predict(audio_features(w)); }

 private:
  nn::ParamStore ps_;
  nc::Tensor feat_mean_, feat_std_;
  nn::Linear l1_, l2_;
};

class DualEncoder {
 public:
  explicit DualEncoder(std::uint64_t seed);

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  // Symmetric InfoNCE over all pairs, full batch.
  void fit(const std::vector<std::vector<float>>& audio_feats, const std::vector<std::vector<float>>& text_feats,
           int steps, double lr);
  // Unit-norm embeddings of width kEmbedDim.
  std::vector<float> embed_audio_features(std::span<const float> feats) const;
  std::vector<float> embed_text_features(std::span<const float> feats) const;
  std::vector<float> embed_audio(const audio::Waveform& w) const { return embed_audio_features(audio_features(w)); }
  std::vector<float> embed_text(std::string_view caption) const { return embed_text_features(text_features(caption)); }

 private:
  nc::Tensor audio_branch(const nc::Tensor& x) const;
  nc::Tensor text_branch(const nc::Tensor& x) const;
  nn::ParamStore ps_;
  nc::Tensor audio_mean_, audio_std_;
  nn::Linear a1_, a2_, t1_, t2_;
  nc::Tensor unit_gain_, zero_bias_;
};

struct Evaluator {
  GenreClassifier classifier{0};
  DualEncoder encoder{0};
  double heldout_accuracy = 0;
  double train_accuracy = 0;
  std::uint64_t seed = 0;

  ckpt::Bundle to_bundle() const;
  static Evaluator from_bundle(const ckpt::Bundle& b);
};

// Trains both toy models on the corpus 24 kHz views. Every fifth clip of
// each genre is held out for the accuracy gate.
Evaluator train_evaluator(const corpus::DatasetManifest& manifest, std::uint64_t seed);

struct Report {
  double kl = 0;
  double fd = 0;
  std::optional<double> align;   // needs <stem>.txt captions next to generated clips
  std::optional<double> si_snr;  // only when files pair up by name and length
  int n = 0;
  bool paired = false;
  std::string to_json(std::uint64_t seed, const std::string& evaluator_id) const;
};

// Compares the WAV files of two directories. Clips pair by file name when
// both sets share every name; otherwise label distributions are compared at
// the set level.
Report evaluate_run(const std::filesystem::path& generated, const std::filesystem::path& reference,
                    const Evaluator& ev);

}  // namespace imusic::eval
