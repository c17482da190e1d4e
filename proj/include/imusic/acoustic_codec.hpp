#pragma once

// 48 kHz codec with a 150 Hz continuous latent, a residual vector quantizer
// and a transposed-convolution decoder that also accepts continuous latents
// (the flow model's output).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "imusic/audio_io.hpp"
#include "imusic/nn.hpp"
#include "imusic/semantic_codec.hpp"

namespace imusic::ac {

inline constexpr int kFrameRate = 150;
inline constexpr int kHop = 320;
inline constexpr int kCropSamples = audio::kAcousticRate;  // one-second training crops

struct AcousticLatent {
  int frames = 0;
  int channels = 0;
  std::vector<float> values;  // frames x channels, row-major

  std::span<const float> row(int f) const {
    return {values.data() + static_cast<std::size_t>(f) * channels, static_cast<std::size_t>(channels)};
  }
};

struct AcCodecConfig {
  int latent_dim = 64;  // C
  int stages = 4;
  int codebook_size = 1024;
  int hop = kHop;
  std::vector<int> strides{4, 4, 5, 4};
  std::vector<int> enc_channels{16, 32, 48, 64, 96};
  double commit_weight = 0.25;
  double spectral_weight = 0.02;
  double wave_weight = 50.0;

  static AcCodecConfig desk();
  // H = C = 1024, four stages of 2048 codes, six encoder layers. Constructible
  // for shape checks only.
  static AcCodecConfig full_scale();

  int frame_rate() const { return audio::kAcousticRate / hop; }
  void validate() const;
  std::string to_json() const;
  static AcCodecConfig from_json(const std::string& text);
};

// Sequential residual VQ: stage i quantizes what stages < i left over.
// The codec pins a zero codeword at index 0 of each stage (see
// AcousticCodec::pin_null_codes); a bare ResidualVq uses its books as given.
class ResidualVq {
 public:
  ResidualVq(int stages, int size, int dim);
  // Wraps existing codebook tensors, each [size, dim].
  explicit ResidualVq(std::vector<nc::Tensor> codebooks);

  int stages() const { return static_cast<int>(books_.size()); }
  int size() const { return size_; }
  int dim() const { return dim_; }
  std::vector<nc::Tensor>& codebooks() { return books_; }
  const std::vector<nc::Tensor>& codebooks() const { return books_; }

  // Codes per stage and the sum of the selected codewords.
  std::pair<std::vector<int>, std::vector<float>> quantize(std::span<const float> x) const;
  std::vector<float> dequantize(std::span<const int> codes) const;
  // Residual norms ||r_0||, ||r_1||, ..., ||r_stages|| for x.
  std::vector<double> residual_norms(std::span<const float> x) const;

 private:
  std::vector<nc::Tensor> books_;
  int size_;
  int dim_;
};

struct AcLossParts {
  double total = 0;
  double recon = 0;
  double codebook = 0;
  double commit = 0;
};

class AcousticCodec {
 public:
  AcousticCodec(const AcCodecConfig& cfg, std::uint64_t seed);

  const AcCodecConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  const ResidualVq& rvq() const { return rvq_; }

  std::size_t frames_for(std::size_t samples) const;

  AcousticLatent encode(const audio::Waveform& w) const;
  // codes: frames x stages, row-major.
  std::vector<int> quantize(const AcousticLatent& z, AcousticLatent* quantized) const;
  AcousticLatent dequantize(std::span<const int> codes, int frames) const;
  audio::Waveform decode(const AcousticLatent& z) const;
  audio::Waveform decode_codes(std::span<const int> codes, int frames) const;

  nc::Tensor encode_latent(const nc::Tensor& signal) const;  // [L] -> [F, C]
  nc::Tensor decode_latent(const nc::Tensor& z) const;       // [F, C] -> [F*hop]
  nc::Tensor loss(const nc::Tensor& signal, AcLossParts* parts) const;

  void init_codebooks(const std::vector<float>& latents, std::uint64_t seed);
  // Row 0 of every stage stays the zero vector, so a stage can abstain and
  // residual norms never grow from one stage to the next.
  void pin_null_codes();
  bool codebooks_initialized() const { return initialized_; }
  void set_codebooks_initialized(bool on) { initialized_ = on; }

 private:
  AcCodecConfig cfg_;
  nn::ParamStore ps_;
  nn::Conv1d enc_in_;
  std::vector<nn::Conv1d> enc_down_;
  nn::Conv1d enc_out_;
  nc::Tensor norm_gain_;
  nc::Tensor norm_bias_;
  ResidualVq rvq_;
  nn::Conv1d dec_in_;
  std::vector<nn::ConvT1d> dec_up_;
  std::vector<nn::Conv1d> dec_res_;
  nn::Conv1d dec_out_;
  bool initialized_ = false;
};

class AcCodecTrainer {
 public:
  AcCodecTrainer(AcousticCodec& model, sem::TrainerOptions opts, std::uint64_t seed);

  // Batch of one-second 48 kHz crops.
  AcLossParts step(std::span<const audio::Waveform> batch);

  std::int64_t steps() const { return opt_.state().t; }
  nc::Adam& optimizer() { return opt_; }

 private:
  AcousticCodec& model_;
  sem::TrainerOptions opts_;
  nc::Adam opt_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::int64_t>> usage_;
};

// Random crop of exactly one second (zero-padded when the clip is shorter).
audio::Waveform random_crop(const audio::Waveform& w, int samples, std::mt19937_64& rng);

}  // namespace imusic::ac
