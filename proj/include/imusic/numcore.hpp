#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// The element type is float. Defining IMUSIC_NUMCORE_F64 before inclusion
// switches the whole module to double precision inside a distinct inline
// namespace; the gradient-check suite links that build so that central
// differences are not swamped by single-precision rounding.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "imusic/error.hpp"

#ifdef IMUSIC_NUMCORE_F64
#define IMUSIC_NC_ABI f64
#else
#define IMUSIC_NC_ABI f32
#endif

namespace imusic::nc {
inline namespace IMUSIC_NC_ABI {

#ifdef IMUSIC_NUMCORE_F64
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct Node {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;

  void accumulate(std::span<const real> g);
  std::span<real> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> values, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, real stddev = 1,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, real lo, real hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<real> data() { return node_->data; }
  std::span<const real> data() const { return node_->data; }
  // Empty span when no gradient has reached this tensor.
  std::span<const real> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  real item() const;
  real at(int r, int c) const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& handle() const { return node_; }

  // Deep copy without autograd history.
  Tensor clone() const;

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_result(Shape shape, std::vector<real> values, bool track);
};

// ---- tape ------------------------------------------------------------------

// Records backward closures in execution order; backward() replays them in
// reverse. One tape per thread.
class Tape {
 public:
  static Tape& current();

  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }
  void run_reverse();

  bool enabled() const { return enabled_ > 0; }

 private:
  friend class NoGradGuard;
  std::vector<std::function<void()>> entries_;
  int enabled_ = 1;
};

class NoGradGuard {
 public:
  NoGradGuard() { --Tape::current().enabled_; }
  ~NoGradGuard() { ++Tape::current().enabled_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Seeds d(loss)/d(loss) = 1 and propagates to every tensor on the tape. The
// tape is cleared afterwards; a second call without a new forward pass throws.
void backward(const Tensor& loss);

// Drops any recorded history (e.g. after a forward pass that is not trained).
void clear_tape();

// ---- forward ops -----------------------------------------------------------

// [m,k] x [k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,k] x [n,k]^T
Tensor matmul_bt(const Tensor& a, const Tensor& b);
// x [n,in] -> x W^T + b with W [out,in], b [out] (bias may be undefined)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Elementwise. `b` may match `a`, be a single element, or match the trailing
// dimensions of `a` (row broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real s);
Tensor add_scalar(const Tensor& a, real s);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor clamp(const Tensor& a, real lo, real hi);

// Softmax over the last dimension.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
// Row-wise softmax of a square score matrix where row i may only see columns
// j <= i, and additionally only j < prefix or j > i - window when window > 0.
Tensor causal_softmax(const Tensor& scores, int prefix = 0, int window = 0);

// Normalizes the last dimension, then applies gamma/beta (each [d]).
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 real eps = real(1e-5));

// x [Cin,L], w [Cout,Cin,K], b [Cout] (optional) -> [Cout, Lout]
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad_left, int pad_right);
// x [Cin,L], w [Cin,Cout,K], b [Cout] -> [Cout, (L-1)*stride + K - crop_left - crop_right]
Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& b,
                        int stride, int crop_left, int crop_right);

// table [V,D], ids -> [n,D]
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Mean negative log-likelihood over rows whose target != ignore_index.
// Returns a zero scalar when every row is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     int ignore_index = -1);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor l1(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// 2-D structure ops.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, int begin, int end);
Tensor slice_cols(const Tensor& a, int begin, int end);
// [n,D] -> [n*factor, D]; row i is copied to rows i*factor .. i*factor+factor-1.
Tensor repeat_rows(const Tensor& a, int factor);

// Rotary position embedding on x [T,d] (d even), position of row i is
// offset + i.
Tensor rope(const Tensor& x, int offset, real base = real(10000));

// frames [F,N] -> signal [(F-1)*hop + N]
Tensor overlap_add(const Tensor& frames, int hop);
// signal [L] -> Hann-windowed magnitude spectrum [F, fft/2+1]; fft_size must
// be a power of two. Magnitudes are sqrt(|X|^2 + eps).
Tensor stft_magnitude(const Tensor& signal, int fft_size, int hop, real eps = real(1e-7));

// Forward value with no history; gradients stop here.
Tensor detach(const Tensor& a);

// ---- optimization ----------------------------------------------------------

struct OptimState {
  std::vector<std::vector<real>> m;
  std::vector<std::vector<real>> v;
  std::int64_t t = 0;
};

struct AdamOptions {
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps = real(1e-8);
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions opts = {});

  // Applies one update using each parameter's accumulated gradient (missing
  // gradients count as zero). Throws NumericError, leaving parameters and
  // state untouched, when any gradient is non-finite.
  void step(real lr);
  void zero_grad();

  const OptimState& state() const { return state_; }
  OptimState& state() { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opts_;
  OptimState state_;
};

// Rescales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

struct LrSchedule {
  double base_lr = 1e-4;
  std::int64_t warmup_steps = 5000;
};

// Linear warm-up to base_lr, constant afterwards.
double lr_at(const LrSchedule& schedule, std::int64_t step);

}  // namespace IMUSIC_NC_ABI
}  // namespace imusic::nc
