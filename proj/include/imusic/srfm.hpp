#pragma once

// Flow-matching model from 75 Hz semantic tokens to 150 Hz acoustic
// latents. Training regresses the straight-line velocity x1 - x0 at a random
// point of the path x_t = (1 - t) x0 + t x1; sampling integrates the learned
// field from Gaussian noise at t = 0 to t = 1.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "imusic/acoustic_codec.hpp"
#include "imusic/nn.hpp"
#include "imusic/semantic_codec.hpp"

namespace imusic::srfm {

// Acoustic frames per semantic token.
inline constexpr int kUpsample = ac::kFrameRate / sem::kFrameRate;

struct FlowConfig {
  int v_sem = 256;
  int latent_dim = 64;
  int cond_dim = 64;
  int hidden = 128;
  int blocks = 3;
  int kernel = 5;
  int time_dim = 32;
  double cond_dropout = 0.7;

  void validate() const;
  std::string to_json() const;
  static FlowConfig from_json(const std::string& text);
};

enum class Solver { kEuler, kMidpoint };

struct OdeParams {
  int steps = 10;
  Solver solver = Solver::kEuler;
  double cfg_scale = 1.0;
};

Solver parse_solver(const std::string& name);

// Velocity of a flattened state at time t.
using VelocityFn = std::function<std::vector<float>(const std::vector<float>& x, double t)>;

// Fixed-step integration from t = 0 to t = 1.
std::vector<float> integrate(std::vector<float> x, int steps, Solver solver, const VelocityFn& v);

// x_t = (1 - t) x0 + t x1.
nc::Tensor interpolate(const nc::Tensor& x0, const nc::Tensor& x1, double t);
// mean || v - (x1 - x0) ||^2 over all entries.
nc::Tensor cfm_loss(const nc::Tensor& v, const nc::Tensor& x0, const nc::Tensor& x1);

class FlowNet {
 public:
  FlowNet(const FlowConfig& cfg, std::uint64_t seed);

  const FlowConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  // Embedding row used for the dropped condition.
  int null_id() const { return cfg_.v_sem; }

  // [2n, cond_dim]: each token's embedding repeated once per acoustic frame.
  nc::Tensor upsample_conditioning(std::span<const int> tokens) const;
  // x [F, C], cond [F, cond_dim] -> velocity [F, C].
  nc::Tensor velocity(const nc::Tensor& x, double t, const nc::Tensor& cond) const;

 private:
  FlowConfig cfg_;
  nn::ParamStore ps_;
  nc::Tensor cond_emb_;  // [v_sem + 1, cond_dim]
  nn::Linear time1_, time2_, in_;
  struct Block {
    nn::LayerNorm ln;
    nn::Conv1d c1, c2;
  };
  std::vector<Block> blocks_;
  nn::LayerNorm ln_out_;
  nn::Linear out_;
};

// Guided velocity: v_u + s (v_c - v_u); the conditional path alone when
// s == 1.
nc::Tensor guided_velocity(const FlowNet& net, const nc::Tensor& x, double t, const nc::Tensor& cond,
                           const nc::Tensor& null_cond, double scale);

// Latent for a token sequence: 2n frames, x(0) drawn from N(0, I) with the
// given seed. NumericError when the state stops being finite.
ac::AcousticLatent sample(const FlowNet& net, std::span<const int> tokens, const OdeParams& params,
                          std::uint64_t seed);

struct FlowPair {
  std::vector<int> tokens;     // semantic codes of the 24 kHz view
  ac::AcousticLatent latent;   // acoustic latent of the 48 kHz master
};

struct FlowTrainerOptions {
  double lr = 1e-3;
  std::int64_t warmup_steps = 0;
  double clip = 1.0;
};

class FlowTrainer {
 public:
  FlowTrainer(FlowNet& net, FlowTrainerOptions opts, std::uint64_t seed);

  // DataError when a pair's conditioning and latent frame counts differ.
  double step(std::span<const FlowPair> batch);

  std::int64_t steps() const { return opt_.state().t; }
  nc::Adam& optimizer() { return opt_; }

 private:
  FlowNet& net_;
  FlowTrainerOptions opts_;
  nc::Adam opt_;
  std::mt19937_64 rng_;
};

}  // namespace imusic::srfm
