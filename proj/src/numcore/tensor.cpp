#include <cmath>
#include <sstream>

#include "imusic/numcore.hpp"

namespace imusic::nc {
inline namespace IMUSIC_NC_ABI {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 1) throw UsageError("tensor extents must be >= 1, got " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void Node::accumulate(std::span<const real> g) {
  if (grad.empty()) {
    grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

std::span<real> Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), real(0));
  return grad;
}

int Tensor::dim(int i) const {
  if (i < 0) i += ndim();
  if (i < 0 || i >= ndim()) {
    throw UsageError("dim " + std::to_string(i) + " out of range for shape " + shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(i)];
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->data.assign(shape_numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw UsageError("tensor data of size " + std::to_string(values.size()) +
                     " does not fill shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, real stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  std::vector<real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<real>(dist(rng));
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, real lo, real hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  std::vector<real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<real>(dist(rng));
  return from(std::move(shape), std::move(v), requires_grad);
}

real Tensor::item() const {
  if (numel() != 1) {
    throw UsageError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

real Tensor::at(int r, int c) const {
  return node_->data[static_cast<std::size_t>(r) * static_cast<std::size_t>(dim(-1)) +
                     static_cast<std::size_t>(c)];
}

Tensor Tensor::clone() const {
  return from(shape(), node_->data, node_->requires_grad);
}

Tensor make_result(Shape shape, std::vector<real> values, bool track) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = track;
  return Tensor(std::move(n));
}

// ---- tape ------------------------------------------------------------------

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::run_reverse() {
  // Move out first so closures can never observe a half-cleared tape.
  auto entries = std::move(entries_);
  entries_.clear();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) (*it)();
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss");
  }
  Tape& tape = Tape::current();
  if (tape.empty() || !loss.requires_grad()) {
    throw UsageError("backward() called without a recorded forward pass");
  }
  loss.node()->accumulate(std::vector<real>{real(1)});
  tape.run_reverse();
}

void clear_tape() { Tape::current().clear(); }

// ---- optimization ----------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, AdamOptions opts)
    : params_(std::move(params)), opts_(opts) {
  state_.m.reserve(params_.size());
  state_.v.reserve(params_.size());
  for (const auto& p : params_) {
    state_.m.emplace_back(p.numel(), real(0));
    state_.v.emplace_back(p.numel(), real(0));
  }
}

void Adam::step(real lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (real g : params_[i].grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam: non-finite gradient in parameter " + std::to_string(i) +
                           "; step rejected");
      }
    }
  }
  state_.t += 1;
  const double t = static_cast<double>(state_.t);
  const double c1 = 1.0 - std::pow(static_cast<double>(opts_.beta1), t);
  const double c2 = 1.0 - std::pow(static_cast<double>(opts_.beta2), t);
  const real b1 = opts_.beta1;
  const real b2 = opts_.beta2;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    auto p = params_[i].data();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const real gj = g.empty() ? real(0) : g[j];
      m[j] = b1 * m[j] + (1 - b1) * gj;
      v[j] = b2 * v[j] + (1 - b2) * gj * gj;
      const double mh = static_cast<double>(m[j]) / c1;
      const double vh = static_cast<double>(v[j]) / c2;
      p[j] -= static_cast<real>(static_cast<double>(lr) * mh /
                                (std::sqrt(vh) + static_cast<double>(opts_.eps)));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    for (real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const real s = static_cast<real>(max_norm / norm);
    for (const auto& p : params) {
      for (real& g : p.node()->grad) g *= s;
    }
  }
  return norm;
}

double lr_at(const LrSchedule& schedule, std::int64_t step) {
  if (step < 0) step = 0;
  if (schedule.warmup_steps <= 0) return schedule.base_lr;
  const double frac = std::min(1.0, static_cast<double>(step) /
                                        static_cast<double>(schedule.warmup_steps));
  return schedule.base_lr * frac;
}

}  // namespace IMUSIC_NC_ABI
}  // namespace imusic::nc
