#pragma once

// 24 kHz single-codebook tokenizer: strided conv encoder, nearest-neighbour
// vector quantizer, and a decoder that predicts per-frame log-magnitude and
// phase and resynthesizes with an inverse STFT (fft 1280, hop 320).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "imusic/audio_io.hpp"
#include "imusic/nn.hpp"

namespace imusic::sem {

inline constexpr int kFrameRate = 75;
inline constexpr int kHop = 320;
inline constexpr int kHeadFft = 1280;

struct SemCodecConfig {
  int v_sem = 256;
  int code_dim = 64;
  int hop = kHop;
  std::vector<int> strides{4, 4, 4, 5};
  std::vector<int> enc_channels{16, 32, 64, 96, 128};  // one more than strides
  int dec_channels = 128;
  int dec_blocks = 2;
  double commit_weight = 0.25;
  double spectral_weight = 0.02;
  double wave_weight = 50.0;  // time-domain L1 term of the reconstruction loss

  static SemCodecConfig desk();
  // 4096 codes of width 768; constructible for shape and rate checks only.
  static SemCodecConfig full_scale();

  int frame_rate() const { return audio::kSemanticRate / hop; }
  double bitrate() const;
  void validate() const;
  std::string to_json() const;
  static SemCodecConfig from_json(const std::string& text);
};

struct SemanticTokenSeq {
  std::vector<int> codes;
  int v_sem = 0;

  double duration_seconds() const { return static_cast<double>(codes.size()) / kFrameRate; }
};

// Binary stream: "SEMT", u32 version, u32 V_sem, u32 count, u16 codes (LE).
void write_tokens(const std::filesystem::path& path, const SemanticTokenSeq& seq);
SemanticTokenSeq read_tokens(const std::filesystem::path& path);

// Nearest row of `table` [V, D] by squared Euclidean distance; ties resolve
// to the lowest index.
int nearest_code(std::span<const float> table, int dim, std::span<const float> h);

struct SemLossParts {
  double total = 0;
  double recon = 0;
  double codebook = 0;
  double commit = 0;
};

class SemanticCodec {
 public:
  SemanticCodec(const SemCodecConfig& cfg, std::uint64_t seed);

  const SemCodecConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  std::size_t frames_for(std::size_t samples) const;

  SemanticTokenSeq encode(const audio::Waveform& w) const;
  audio::Waveform decode(const SemanticTokenSeq& seq) const;
  // Quantize a single feature vector: (code, codeword).
  std::pair<int, std::vector<float>> quantize(std::span<const float> h) const;

  // Differentiable pieces. `signal` is [L] with L a multiple of hop.
  nc::Tensor encode_features(const nc::Tensor& signal) const;  // [F, code_dim]
  nc::Tensor decode_latent(const nc::Tensor& q) const;         // [F, code_dim] -> [F*hop]
  std::vector<int> nearest_codes(const nc::Tensor& h) const;

  // Builds the loss graph for one clip; used by the trainer.
  nc::Tensor loss(const nc::Tensor& signal, SemLossParts* parts) const;

  nc::Tensor codebook() const { return codebook_; }

  // k-means over the rows of `features` [N, code_dim] (Lloyd iterations from
  // a seeded random selection).
  void init_codebook(const std::vector<float>& features, std::uint64_t seed);
  bool codebook_initialized() const { return initialized_; }
  void set_codebook_initialized(bool on) { initialized_ = on; }

 private:
  SemCodecConfig cfg_;
  nn::ParamStore ps_;
  nn::Conv1d enc_in_;
  std::vector<nn::Conv1d> enc_down_;
  nn::Conv1d enc_out_;
  nc::Tensor feat_gain_;
  nc::Tensor feat_bias_;
  nc::Tensor codebook_;
  nn::Conv1d dec_in_;
  std::vector<std::pair<nn::Conv1d, nn::Conv1d>> dec_blocks_;
  nn::Conv1d dec_head_;
  nc::Tensor idft_cos_;  // [bins, fft]
  nc::Tensor idft_sin_;
  nc::Tensor synth_window_;  // [fft], Hann
  bool initialized_ = false;
};

struct TrainerOptions {
  double lr = 1e-3;
  std::int64_t warmup_steps = 0;
  double clip = 1.0;
  int dead_code_interval = 25;  // steps between dead-code restarts, 0 = off
};

class SemCodecTrainer {
 public:
  SemCodecTrainer(SemanticCodec& model, TrainerOptions opts, std::uint64_t seed);

  // One optimizer step on equal-length 24 kHz clips. Returns the mean loss
  // before the update. Non-finite losses raise NumericError and leave the
  // parameters untouched.
  SemLossParts step(std::span<const audio::Waveform> batch);

  std::int64_t steps() const { return opt_.state().t; }
  nc::Adam& optimizer() { return opt_; }

 private:
  SemanticCodec& model_;
  TrainerOptions opts_;
  nc::Adam opt_;
  std::mt19937_64 rng_;
  std::vector<std::int64_t> usage_;
};

}  // namespace imusic::sem
