#include "imusic/nn.hpp"

#include <cmath>

#include "imusic/error.hpp"

namespace imusic::nn {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw UsageError("duplicate parameter name " + name);
  t.set_requires_grad(true);
  params_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw UsageError("no parameter named " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.first == name) return true;
  }
  return false;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.second);
  return out;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.second.numel();
  return n;
}

Conv1d make_conv(ParamStore& ps, const std::string& name, int in, int out, int k, int stride,
                 std::mt19937_64& rng) {
  Conv1d c;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k));
  c.w = ps.add(name + ".w", Tensor::uniform({out, in, k}, rng, -bound, bound));
  c.b = ps.add(name + ".b", Tensor::zeros({out}));
  c.stride = stride;
  const int total = stride == 1 ? k - 1 : k - stride;
  c.pad_left = total / 2;
  c.pad_right = total - c.pad_left;
  return c;
}

Tensor forward(const Conv1d& c, const Tensor& x) {
  return nc::conv1d(x, c.w, c.b, c.stride, c.pad_left, c.pad_right);
}

ConvT1d make_conv_t(ParamStore& ps, const std::string& name, int in, int out, int stride,
                    std::mt19937_64& rng) {
  ConvT1d c;
  const int k = 2 * stride;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * 2));
  c.w = ps.add(name + ".w", Tensor::uniform({in, out, k}, rng, -bound, bound));
  c.b = ps.add(name + ".b", Tensor::zeros({out}));
  c.stride = stride;
  c.crop_left = stride / 2;
  c.crop_right = stride - c.crop_left;
  return c;
}

Tensor forward(const ConvT1d& c, const Tensor& x) {
  return nc::conv_transpose1d(x, c.w, c.b, c.stride, c.crop_left, c.crop_right);
}

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, std::mt19937_64& rng,
                   bool bias) {
  Linear l;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.w = ps.add(name + ".w", Tensor::uniform({out, in}, rng, -bound, bound));
  if (bias) l.b = ps.add(name + ".b", Tensor::zeros({out}));
  return l;
}

Tensor forward(const Linear& l, const Tensor& x) { return nc::linear(x, l.w, l.b); }

LayerNorm make_layernorm(ParamStore& ps, const std::string& name, int dim) {
  return {ps.add(name + ".g", Tensor::full({dim}, 1)), ps.add(name + ".b", Tensor::zeros({dim}))};
}

Tensor forward(const LayerNorm& ln, const Tensor& x) { return nc::layernorm(x, ln.gamma, ln.beta); }

std::vector<float> sinusoidal(double t, int dim, double max_period) {
  std::vector<float> out(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * i / half);
    out[static_cast<std::size_t>(i)] = static_cast<float>(std::cos(t * freq));
    out[static_cast<std::size_t>(i + half)] = static_cast<float>(std::sin(t * freq));
  }
  return out;
}

void assign(const ParamStore& dst, const std::vector<std::pair<std::string, Tensor>>& src) {
  for (const auto& [name, t] : dst.named()) {
    const Tensor* found = nullptr;
    for (const auto& s : src) {
      if (s.first == name) found = &s.second;
    }
    if (!found) throw DataError("checkpoint is missing parameter " + name);
    if (found->shape() != t.shape()) {
      throw DataError("parameter " + name + " has shape " + nc::shape_str(found->shape()) + ", expected " +
                      nc::shape_str(t.shape()));
    }
    std::copy(found->data().begin(), found->data().end(), const_cast<Tensor&>(t).data().begin());
  }
}

double optimizer_step(nc::Adam& opt, double lr, double clip) {
  const double norm = nc::clip_grad_norm(opt.params(), clip);
  opt.step(static_cast<nc::real>(lr));
  opt.zero_grad();
  return norm;
}

}  // namespace imusic::nn
