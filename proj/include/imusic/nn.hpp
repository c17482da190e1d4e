#pragma once

// Parameter bookkeeping and the handful of layers shared by the trainable
// modules. Layers are plain structs of tensors; forward passes are free
// functions over numcore ops.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "imusic/numcore.hpp"

namespace imusic::nn {

using nc::Tensor;

// Ordered, named parameter list. Names are unique and stable; they are the
// keys used in checkpoints.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& named() const { return params_; }
  std::vector<Tensor> tensors() const;
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
};

struct Conv1d {
  Tensor w;  // [out, in, k]
  Tensor b;  // [out]
  int stride = 1;
  int pad_left = 0;
  int pad_right = 0;
};

// "Same"-length conv for odd k at stride 1; for stride s with k = 2s the
// output length is exactly len / s.
Conv1d make_conv(ParamStore& ps, const std::string& name, int in, int out, int k, int stride,
                 std::mt19937_64& rng);
Tensor forward(const Conv1d& c, const Tensor& x);

struct ConvT1d {
  Tensor w;  // [in, out, k]
  Tensor b;
  int stride = 1;
  int crop_left = 0;
  int crop_right = 0;
};

// k = 2s, cropped so that the output length is exactly len * s.
ConvT1d make_conv_t(ParamStore& ps, const std::string& name, int in, int out, int stride,
                    std::mt19937_64& rng);
Tensor forward(const ConvT1d& c, const Tensor& x);

struct Linear {
  Tensor w;  // [out, in]
  Tensor b;  // [out]
};

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, std::mt19937_64& rng,
                   bool bias = true);
Tensor forward(const Linear& l, const Tensor& x);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
};

LayerNorm make_layernorm(ParamStore& ps, const std::string& name, int dim);
Tensor forward(const LayerNorm& ln, const Tensor& x);

// Sinusoidal features of scalar t, [dim].
std::vector<float> sinusoidal(double t, int dim, double max_period = 10000.0);

// Copies values from `src` into the parameters of `dst` by name. Throws
// DataError on a missing name or a shape mismatch.
void assign(const ParamStore& dst, const std::vector<std::pair<std::string, Tensor>>& src);

// Runs a standard optimizer step: global-norm clip, Adam update, gradient
// reset. Returns the pre-clip gradient norm.
double optimizer_step(nc::Adam& opt, double lr, double clip = 1.0);

}  // namespace imusic::nn
