#include "imusic/srfm.hpp"

#include <cmath>

#include "imusic/error.hpp"
#include "json.hpp"

namespace imusic::srfm {

using nc::Tensor;

void FlowConfig::validate() const {
  if (v_sem < 2) throw UsageError("flow: V_sem must be at least 2");
  if (latent_dim < 1 || cond_dim < 1 || hidden < 1 || blocks < 0 || time_dim < 2 || time_dim % 2 != 0) {
    throw UsageError("flow: bad layer widths");
  }
  if (kernel < 1 || kernel % 2 == 0) throw UsageError("flow: kernel must be odd");
  if (cond_dropout < 0 || cond_dropout > 1) throw UsageError("flow: condition dropout must be in [0, 1]");
}

std::string FlowConfig::to_json() const {
  nlohmann::ordered_json j;
  j["v_sem"] = v_sem;
  j["latent_dim"] = latent_dim;
  j["cond_dim"] = cond_dim;
  j["hidden"] = hidden;
  j["blocks"] = blocks;
  j["kernel"] = kernel;
  j["time_dim"] = time_dim;
  j["cond_dropout"] = cond_dropout;
  return j.dump();
}

FlowConfig FlowConfig::from_json(const std::string& text) {
  FlowConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.v_sem = j.at("v_sem");
    c.latent_dim = j.at("latent_dim");
    c.cond_dim = j.at("cond_dim");
    c.hidden = j.at("hidden");
    c.blocks = j.at("blocks");
    c.kernel = j.at("kernel");
    c.time_dim = j.at("time_dim");
    c.cond_dropout = j.at("cond_dropout");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("flow config: ") + e.what());
  }
  c.validate();
  return c;
}

Solver parse_solver(const std::string& name) {
  if (name == "euler") return Solver::kEuler;
  if (name == "midpoint") return Solver::kMidpoint;
  throw UsageError("unknown ODE solver '" + name + "' (expected euler or midpoint)");
}

std::vector<float> integrate(std::vector<float> x, int steps, Solver solver, const VelocityFn& v) {
  if (steps < 1) throw UsageError("ODE integration needs at least one step");
  const double h = 1.0 / steps;
  std::vector<float> mid(x.size());
  for (int i = 0; i < steps; ++i) {
    const double t = i * h;
    const auto k1 = v(x, t);
    if (k1.size() != x.size()) throw UsageError("velocity field changed the state size");
    if (solver == Solver::kEuler) {
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += static_cast<float>(h * k1[j]);
    } else {
      for (std::size_t j = 0; j < x.size(); ++j) mid[j] = x[j] + static_cast<float>(0.5 * h * k1[j]);
      const auto k2 = v(mid, t + 0.5 * h);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += static_cast<float>(h * k2[j]);
    }
    for (float e : x) {
      if (!std::isfinite(e)) {
        throw NumericError("ODE state became non-finite at step " + std::to_string(i + 1) + " of " +
                           std::to_string(steps) + " (t = " + std::to_string(t + h) + ")");
      }
    }
  }
  return x;
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
  return nc::add(nc::scale(x0, static_cast<nc::real>(1 - t)), nc::scale(x1, static_cast<nc::real>(t)));
}

Tensor cfm_loss(const Tensor& v, const Tensor& x0, const Tensor& x1) {
  return nc::mse(v, nc::detach(nc::sub(x1, x0)));
}

FlowNet::FlowNet(const FlowConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  cond_emb_ = ps_.add("cond_emb", Tensor::randn({cfg_.v_sem + 1, cfg_.cond_dim}, rng, 1.0));
  time1_ = nn::make_linear(ps_, "time1", cfg_.time_dim, cfg_.hidden, rng);
  time2_ = nn::make_linear(ps_, "time2", cfg_.hidden, cfg_.hidden, rng);
  in_ = nn::make_linear(ps_, "in", cfg_.latent_dim + cfg_.cond_dim, cfg_.hidden, rng);
  for (int b = 0; b < cfg_.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    Block blk;
    blk.ln = nn::make_layernorm(ps_, p + "ln", cfg_.hidden);
    blk.c1 = nn::make_conv(ps_, p + "c1", cfg_.hidden, cfg_.hidden, cfg_.kernel, 1, rng);
    blk.c2 = nn::make_conv(ps_, p + "c2", cfg_.hidden, cfg_.hidden, cfg_.kernel, 1, rng);
    blocks_.push_back(blk);
  }
  ln_out_ = nn::make_layernorm(ps_, "ln_out", cfg_.hidden);
  out_ = nn::make_linear(ps_, "out", cfg_.hidden, cfg_.latent_dim, rng);
}

Tensor FlowNet::upsample_conditioning(std::span<const int> tokens) const {
  if (tokens.empty()) throw UsageError("flow: empty token sequence");
  for (int t : tokens) {
    if (t < 0 || t > cfg_.v_sem) throw UsageError("flow: token " + std::to_string(t) + " out of range");
  }
  return nc::repeat_rows(nc::embedding(cond_emb_, tokens), kUpsample);
}

Tensor FlowNet::velocity(const Tensor& x, double t, const Tensor& cond) const {
  if (x.ndim() != 2 || x.dim(1) != cfg_.latent_dim) {
    throw UsageError("flow: state must be [frames, " + std::to_string(cfg_.latent_dim) + "], got " +
                     nc::shape_str(x.shape()));
  }
  if (cond.ndim() != 2 || cond.dim(0) != x.dim(0) || cond.dim(1) != cfg_.cond_dim) {
    throw UsageError("flow: conditioning " + nc::shape_str(cond.shape()) + " does not match state " +
                     nc::shape_str(x.shape()));
  }
  // t is stretched so the fastest features turn over many times on [0, 1].
  const auto feats = nn::sinusoidal(1000.0 * t, cfg_.time_dim);
  const Tensor temb = Tensor::from({1, cfg_.time_dim}, std::vector<nc::real>(feats.begin(), feats.end()));
  const Tensor tvec = nn::forward(time2_, nc::silu(nn::forward(time1_, temb)));  // [1, hidden]
  const std::vector<Tensor> parts{x, cond};
  Tensor h = nc::add(nn::forward(in_, nc::concat_cols(parts)), nc::reshape(tvec, {cfg_.hidden}));
  for (const auto& b : blocks_) {
    const Tensor u = nc::transpose(nn::forward(b.ln, h));  // [hidden, F]
    const Tensor r = nn::forward(b.c2, nc::gelu(nn::forward(b.c1, u)));
    h = nc::add(h, nc::transpose(r));
  }
  return nn::forward(out_, nn::forward(ln_out_, h));
}

Tensor guided_velocity(const FlowNet& net, const Tensor& x, double t, const Tensor& cond, const Tensor& null_cond,
                       double scale) {
  if (scale < 0) throw UsageError("flow: cfg scale must be non-negative");
  const Tensor vc = net.velocity(x, t, cond);
  if (scale == 1.0) return vc;
  const Tensor vu = net.velocity(x, t, null_cond);
  if (scale == 0.0) return vu;
  return nc::add(vu, nc::scale(nc::sub(vc, vu), static_cast<nc::real>(scale)));
}

ac::AcousticLatent sample(const FlowNet& net, std::span<const int> tokens, const OdeParams& params,
                          std::uint64_t seed) {
  nc::NoGradGuard ng;
  const int c = net.config().latent_dim;
  const Tensor cond = net.upsample_conditioning(tokens);
  const int frames = cond.dim(0);
  const std::vector<int> nulls(tokens.size(), net.null_id());
  const Tensor null_cond = net.upsample_conditioning(nulls);
  std::mt19937_64 rng(seed);
  const Tensor x0 = Tensor::randn({frames, c}, rng);
  auto v = [&](const std::vector<float>& x, double t) {
    const Tensor xt = Tensor::from({frames, c}, std::vector<nc::real>(x.begin(), x.end()));
    const Tensor out = guided_velocity(net, xt, t, cond, null_cond, params.cfg_scale);
    return std::vector<float>(out.data().begin(), out.data().end());
  };
  ac::AcousticLatent z;
  z.frames = frames;
  z.channels = c;
  z.values = integrate(std::vector<float>(x0.data().begin(), x0.data().end()), params.steps, params.solver, v);
  return z;
}

FlowTrainer::FlowTrainer(FlowNet& net, FlowTrainerOptions opts, std::uint64_t seed)
    : net_(net), opts_(opts), opt_(net.params().tensors()), rng_(seed) {}

double FlowTrainer::step(std::span<const FlowPair> batch) {
  if (batch.empty()) throw UsageError("flow train step: empty batch");
  const int c = net_.config().latent_dim;
  for (const auto& p : batch) {
    const int cond_frames = static_cast<int>(p.tokens.size()) * kUpsample;
    if (cond_frames != p.latent.frames) {
      throw DataError("flow train step: conditioning has " + std::to_string(cond_frames) + " frames, latent has " +
                      std::to_string(p.latent.frames));
    }
    if (p.latent.channels != c) throw DataError("flow train step: latent width does not match the model");
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  std::bernoulli_distribution drop(net_.config().cond_dropout);
  double mean = 0;
  opt_.zero_grad();
  for (const auto& p : batch) {
    std::vector<int> tokens = p.tokens;
    if (drop(rng_)) std::fill(tokens.begin(), tokens.end(), net_.null_id());
    const Tensor cond = net_.upsample_conditioning(tokens);
    const Tensor x1 = Tensor::from({p.latent.frames, c}, std::vector<nc::real>(p.latent.values.begin(), p.latent.values.end()));
    const Tensor x0 = Tensor::randn({p.latent.frames, c}, rng_);
    const double t = ut(rng_);
    const Tensor l = cfm_loss(net_.velocity(interpolate(x0, x1, t), t, cond), x0, x1);
    const double value = l.item();
    if (!std::isfinite(value)) {
      nc::clear_tape();
      opt_.zero_grad();
      throw NumericError("flow: non-finite loss at step " + std::to_string(steps() + 1));
    }
    nc::backward(nc::scale(l, static_cast<nc::real>(inv)));
    mean += value * inv;
  }
  nn::optimizer_step(opt_, nc::lr_at({opts_.lr, opts_.warmup_steps}, steps() + 1), opts_.clip);
  return mean;
}

}  // namespace imusic::srfm
