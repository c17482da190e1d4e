#include "imusic/sequence_lm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "imusic/error.hpp"
#include "json.hpp"

namespace imusic::lm {

using nc::Tensor;

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXf;

Eigen::Map<const RowMat> weight(const Tensor& t) {
  return {t.data().data(), t.dim(0), t.dim(1)};
}

Eigen::Map<const Vec> vec(const Tensor& t) { return {t.data().data(), static_cast<Eigen::Index>(t.numel())}; }

void layernorm_inplace(const nn::LayerNorm& ln, const float* x, float* y, int d) {
  float mu = 0;
  for (int j = 0; j < d; ++j) mu += x[j];
  mu /= static_cast<float>(d);
  float var = 0;
  for (int j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= static_cast<float>(d);
  const float rstd = 1 / std::sqrt(var + 1e-5f);
  const auto g = ln.gamma.data();
  const auto b = ln.beta.data();
  for (int j = 0; j < d; ++j) y[j] = (x[j] - mu) * rstd * g[j] + b[j];
}

float gelu(float x) {
  constexpr float c = 0.7978845608028654f;
  constexpr float k = 0.044715f;
  return 0.5f * x * (1 + std::tanh(c * (x + k * x * x * x)));
}

const char* const kStructureNames[kStructureCount] = {"intro", "verse", "chorus", "outro", "none"};

}  // namespace

// ---- sequence layout ---------------------------------------------------------

std::vector<int> tokenize_caption(std::string_view caption) {
  std::vector<int> out;
  for (std::size_t i = 0; i < caption.size() && i < static_cast<std::size_t>(kMaxCaptionBytes); ++i) {
    out.push_back(static_cast<unsigned char>(caption[i]));
  }
  return out;
}

std::optional<int> parse_structure(std::string_view name) {
  for (int i = 0; i < kStructureCount; ++i) {
    if (name == kStructureNames[i]) return i;
  }
  return std::nullopt;
}

std::string_view structure_name(int s) {
  if (s < 0 || s >= kStructureCount) throw UsageError("structure id out of range: " + std::to_string(s));
  return kStructureNames[s];
}

std::vector<int> build_prefix(const PromptSchema& p, const Vocab& v) {
  if (p.unconditional) return {v.uncond()};
  for (int t : p.text_tokens) {
    if (!v.is_text(t)) throw UsageError("text token out of range: " + std::to_string(t));
  }
  auto in_range = [](int x, int n, const char* what) {
    if (x < 0 || x >= n) throw UsageError(std::string(what) + " out of range: " + std::to_string(x));
  };
  in_range(p.time_start, v.max_seconds + 1, "time start");
  in_range(p.time_end, v.max_seconds + 1, "time end");
  in_range(p.structure, kStructureCount, "structure");
  in_range(p.label, kLabelCount, "label");
  std::vector<int> ids(p.text_tokens);
  ids.push_back(v.ts_begin() + p.time_start);
  ids.push_back(v.te_begin() + p.time_end);
  ids.push_back(v.structure_begin() + p.structure);
  ids.push_back(v.label_begin() + p.label);
  return ids;
}

std::vector<int> build_sequence(const PromptSchema& p, const Vocab& v, int max_len) {
  std::vector<int> ids = build_prefix(p, v);
  for (int a : p.audio_tokens) {
    if (a < 0 || a >= v.v_sem) throw UsageError("audio token out of range: " + std::to_string(a));
    ids.push_back(v.audio_begin() + a);
  }
  if (max_len > 0 && static_cast<int>(ids.size()) > max_len) {
    throw UsageError("sequence of " + std::to_string(ids.size()) + " tokens exceeds the maximum of " +
                     std::to_string(max_len));
  }
  return ids;
}

PromptSchema parse_sequence(std::span<const int> ids, const Vocab& v) {
  PromptSchema p;
  std::size_t i = 0;
  if (!ids.empty() && ids[0] == v.uncond()) {
    p.unconditional = true;
    i = 1;
  } else {
    while (i < ids.size() && v.is_text(ids[i])) p.text_tokens.push_back(ids[i++]);
    if (ids.size() - i < 4) throw UsageError("sequence is missing conditioning specials");
    auto take = [&](int begin, int count, const char* what) {
      const int id = ids[i++];
      if (id < begin || id >= begin + count) throw UsageError(std::string("expected a ") + what + " token at position " + std::to_string(i - 1));
      return id - begin;
    };
    p.time_start = take(v.ts_begin(), v.max_seconds + 1, "time-start");
    p.time_end = take(v.te_begin(), v.max_seconds + 1, "time-end");
    p.structure = take(v.structure_begin(), kStructureCount, "structure");
    p.label = take(v.label_begin(), kLabelCount, "label");
  }
  for (; i < ids.size(); ++i) {
    if (!v.is_audio(ids[i])) throw UsageError("expected an audio token at position " + std::to_string(i));
    p.audio_tokens.push_back(ids[i] - v.audio_begin());
  }
  return p;
}

bool cfg_dropout(PromptSchema& p, double drop_prob, std::mt19937_64& rng) {
  if (drop_prob < 0 || drop_prob > 1) throw UsageError("condition dropout probability must be in [0, 1]");
  if (!std::bernoulli_distribution(drop_prob)(rng)) return false;
  p.unconditional = true;
  p.text_tokens.clear();
  p.time_start = p.time_end = 0;
  p.structure = kStructureNone;
  p.label = kLabelNone;
  return true;
}

// ---- guidance and sampling ---------------------------------------------------

std::vector<float> cfg_logits(std::span<const float> cond, std::span<const float> uncond, double scale) {
  if (cond.size() != uncond.size()) {
    throw UsageError("cfg_logits: conditional has " + std::to_string(cond.size()) + " entries, unconditional " +
                     std::to_string(uncond.size()));
  }
  if (scale < 0) throw UsageError("cfg_logits: scale must be non-negative");
  // The identity cases are returned as-is so they hold bit-exactly.
  if (scale == 1.0) return {cond.begin(), cond.end()};
  if (scale == 0.0) return {uncond.begin(), uncond.end()};
  std::vector<float> out(cond.size());
  const float s = static_cast<float>(scale);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + s * (cond[i] - uncond[i]);
  return out;
}

std::vector<int> topk_support(std::span<const float> logits, int k) {
  const int n = static_cast<int>(logits.size());
  if (n == 0) throw UsageError("top-k sampling over an empty distribution");
  if (k < 1) throw UsageError("top-k: k must be at least 1");
  k = std::min(k, n);
  for (float l : logits) {
    if (!std::isfinite(l)) throw NumericError("top-k: non-finite logit");
  }
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](int a, int b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); };
  std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), before);
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end(), before);
  return idx;
}

int sample_topk(std::span<const float> logits, int k, double temperature, std::mt19937_64& rng) {
  if (!(temperature > 0)) throw UsageError("temperature must be positive");
  const auto support = topk_support(logits, k);
  if (support.size() == 1) return support[0];
  const double top = logits[support[0]];
  std::vector<double> w(support.size());
  double z = 0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    w[i] = std::exp((logits[support[i]] - top) / temperature);
    z += w[i];
  }
  double u = std::uniform_real_distribution<double>(0.0, z)(rng);
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (u < w[i]) return support[i];
    u -= w[i];
  }
  return support.back();
}

// ---- config --------------------------------------------------------------------

LmConfig LmConfig::desk_05() { return {}; }

LmConfig LmConfig::desk_15() {
  LmConfig c;
  c.d_model = 192;
  c.n_layers = 6;
  c.n_heads = 6;
  c.max_seconds = 480;
  return c;
}

LmConfig LmConfig::full_05() {
  LmConfig c;
  c.v_sem = 4096;
  c.d_model = 896;
  c.n_layers = 24;
  c.n_heads = 14;
  c.max_seconds = 30;
  c.vocab_override = kFullScaleVocab;
  return c;
}

LmConfig LmConfig::full_15() {
  LmConfig c = full_05();
  c.d_model = 1536;
  c.n_layers = 28;
  c.n_heads = 12;
  c.max_seconds = 480;
  return c;
}

int LmConfig::vocab_size() const { return std::max(vocab().size(), vocab_override); }

int LmConfig::max_seq_len() const { return kMaxCaptionBytes + 4 + sem::kFrameRate * max_seconds; }

void LmConfig::validate() const {
  if (v_sem < 2 || v_sem > 65536) throw UsageError("lm: V_sem must be in [2, 65536]");
  if (max_seconds < 1) throw UsageError("lm: max_seconds must be positive");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) throw UsageError("lm: d_model must be a multiple of n_heads");
  if ((d_model / n_heads) % 2 != 0) throw UsageError("lm: head width must be even for rotary embeddings");
  if (n_layers < 1 || ffn_mult < 1 || window < 1) throw UsageError("lm: layers, ffn_mult and window must be positive");
  if (vocab_size() <= v_sem + kTextVocab + 4) throw UsageError("lm: vocabulary too small for its layout");
  if (max_seq_len() < sem::kFrameRate * max_seconds) throw UsageError("lm: max_seq_len shorter than the longest clip");
}

std::string LmConfig::to_json() const {
  nlohmann::ordered_json j;
  j["v_sem"] = v_sem;
  j["max_seconds"] = max_seconds;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["ffn_mult"] = ffn_mult;
  j["window"] = window;
  j["vocab_override"] = vocab_override;
  return j.dump();
}

LmConfig LmConfig::from_json(const std::string& text) {
  LmConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.v_sem = j.at("v_sem");
    c.max_seconds = j.at("max_seconds");
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.ffn_mult = j.at("ffn_mult");
    c.window = j.at("window");
    c.vocab_override = j.at("vocab_override");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("lm config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- model ---------------------------------------------------------------------

SequenceLm::SequenceLm(const LmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg_.d_model;
  tok_emb_ = ps_.add("tok_emb", Tensor::randn({cfg_.vocab_size(), d}, rng, 0.02));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.ln1 = nn::make_layernorm(ps_, p + "ln1", d);
    b.q = nn::make_linear(ps_, p + "q", d, d, rng);
    b.k = nn::make_linear(ps_, p + "k", d, d, rng);
    b.v = nn::make_linear(ps_, p + "v", d, d, rng);
    b.o = nn::make_linear(ps_, p + "o", d, d, rng);
    b.ln2 = nn::make_layernorm(ps_, p + "ln2", d);
    b.ff1 = nn::make_linear(ps_, p + "ff1", d, d * cfg_.ffn_mult, rng);
    b.ff2 = nn::make_linear(ps_, p + "ff2", d * cfg_.ffn_mult, d, rng);
    blocks_.push_back(b);
  }
  ln_f_ = nn::make_layernorm(ps_, "ln_f", d);
  head_ = nn::make_linear(ps_, "head", d, cfg_.vocab_size(), rng, false);
}

Tensor SequenceLm::forward(std::span<const int> ids, int prefix) const {
  if (ids.empty()) throw UsageError("lm forward: empty sequence");
  if (static_cast<int>(ids.size()) > cfg_.max_seq_len()) {
    throw UsageError("lm forward: " + std::to_string(ids.size()) + " tokens exceed max_seq_len " +
                     std::to_string(cfg_.max_seq_len()));
  }
  for (int id : ids) {
    if (id < 0 || id >= cfg_.vocab_size()) throw UsageError("lm forward: token id " + std::to_string(id) + " out of range");
  }
  const int dh = cfg_.d_model / cfg_.n_heads;
  const auto inv = static_cast<nc::real>(1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor x = nc::embedding(tok_emb_, ids);
  for (const auto& b : blocks_) {
    const Tensor h = nn::forward(b.ln1, x);
    const Tensor q = nn::forward(b.q, h);
    const Tensor k = nn::forward(b.k, h);
    const Tensor v = nn::forward(b.v, h);
    std::vector<Tensor> heads;
    for (int a = 0; a < cfg_.n_heads; ++a) {
      const Tensor qh = nc::rope(nc::slice_cols(q, a * dh, (a + 1) * dh), 0);
      const Tensor kh = nc::rope(nc::slice_cols(k, a * dh, (a + 1) * dh), 0);
      const Tensor vh = nc::slice_cols(v, a * dh, (a + 1) * dh);
      const Tensor att = nc::causal_softmax(nc::scale(nc::matmul_bt(qh, kh), inv), prefix, cfg_.window);
      heads.push_back(nc::matmul(att, vh));
    }
    x = nc::add(x, nn::forward(b.o, nc::concat_cols(heads)));
    x = nc::add(x, nn::forward(b.ff2, nc::gelu(nn::forward(b.ff1, nn::forward(b.ln2, x)))));
  }
  return nn::forward(head_, nn::forward(ln_f_, x));
}

// ---- cached decoding -------------------------------------------------------------

SequenceLm::Session::Session(const SequenceLm& model)
    : m_(model),
      pk_(static_cast<std::size_t>(model.cfg_.n_layers)),
      pv_(pk_.size()),
      rk_(pk_.size(), std::vector<float>(static_cast<std::size_t>(model.cfg_.window) * model.cfg_.d_model)),
      rv_(rk_) {}

std::size_t SequenceLm::Session::cached_positions() const {
  const std::size_t pinned = pk_.empty() ? 0 : pk_[0].size() / static_cast<std::size_t>(m_.cfg_.d_model);
  const int ring_used = std::max(0, std::min(pos_ - prefix_, m_.cfg_.window));
  return pinned + static_cast<std::size_t>(ring_used);
}

const std::vector<float>& SequenceLm::Session::push(int id) {
  const auto& cfg = m_.cfg_;
  if (id < 0 || id >= cfg.vocab_size()) throw UsageError("lm: token id " + std::to_string(id) + " out of range");
  const int d = cfg.d_model;
  const int nh = cfg.n_heads;
  const int dh = d / nh;
  const int half = dh / 2;
  const int window = cfg.window;
  const int pos = pos_;
  const float inv = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<float> cs(static_cast<std::size_t>(half)), sn(cs.size());
  for (int p = 0; p < half; ++p) {
    const double ang = static_cast<double>(pos) * static_cast<double>(std::pow(10000.0, -2.0 * p / dh));
    cs[p] = static_cast<float>(std::cos(ang));
    sn[p] = static_cast<float>(std::sin(ang));
  }
  auto rope = [&](float* x) {
    for (int a = 0; a < nh; ++a) {
      float* xh = x + a * dh;
      for (int p = 0; p < half; ++p) {
        const float x0 = xh[2 * p], x1 = xh[2 * p + 1];
        xh[2 * p] = x0 * cs[p] - x1 * sn[p];
        xh[2 * p + 1] = x0 * sn[p] + x1 * cs[p];
      }
    }
  };

  Vec x = Eigen::Map<const Vec>(m_.tok_emb_.data().data() + static_cast<std::size_t>(id) * d, d);
  Vec h(d), q(d), k(d), v(d), att(d);
  std::vector<float> scores;
  for (std::size_t l = 0; l < m_.blocks_.size(); ++l) {
    const auto& b = m_.blocks_[l];
    layernorm_inplace(b.ln1, x.data(), h.data(), d);
    q.noalias() = weight(b.q.w) * h + vec(b.q.b);
    k.noalias() = weight(b.k.w) * h + vec(b.k.b);
    v.noalias() = weight(b.v.w) * h + vec(b.v.b);
    rope(q.data());
    rope(k.data());
    if (pos < prefix_) {
      pk_[l].insert(pk_[l].end(), k.data(), k.data() + d);
      pv_[l].insert(pv_[l].end(), v.data(), v.data() + d);
    } else {
      const std::size_t slot = static_cast<std::size_t>(pos % window) * d;
      std::copy_n(k.data(), d, rk_[l].data() + slot);
      std::copy_n(v.data(), d, rv_[l].data() + slot);
    }
    // Visible keys: every pinned position plus the ring positions in
    // (pos - window, pos] that are not pinned. Softmax does not care about
    // key order, so the ring is read slot-wise in at most two runs.
    const int pinned = static_cast<int>(pk_[l].size()) / d;
    const int ring_lo = std::max(prefix_, pos - window + 1);
    const int ring_n = pos >= prefix_ ? pos - ring_lo + 1 : 0;
    struct Run {
      const float* k;
      const float* v;
      int n;
    };
    Run runs[3];
    int n_runs = 0;
    if (pinned > 0) runs[n_runs++] = {pk_[l].data(), pv_[l].data(), pinned};
    if (ring_n > 0) {
      const int start = ring_lo % window;
      const int first = std::min(ring_n, window - start);
      const std::size_t off = static_cast<std::size_t>(start) * d;
      runs[n_runs++] = {rk_[l].data() + off, rv_[l].data() + off, first};
      if (first < ring_n) runs[n_runs++] = {rk_[l].data(), rv_[l].data(), ring_n - first};
    }
    scores.resize(static_cast<std::size_t>(pinned + ring_n));
    using Rows = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
    for (int a = 0; a < nh; ++a) {
      const Eigen::Map<const Vec> qh(q.data() + a * dh, dh);
      int at = 0;
      for (int r = 0; r < n_runs; ++r) {
        const Rows keys(runs[r].k + a * dh, runs[r].n, dh, Eigen::OuterStride<>(d));
        Eigen::Map<Vec>(scores.data() + at, runs[r].n).noalias() = keys * qh;
        at += runs[r].n;
      }
      Eigen::Map<Vec> sc(scores.data(), at);
      sc = ((sc.array() - sc.maxCoeff()) * inv).exp();
      sc /= sc.sum();
      Eigen::Map<Vec> out(att.data() + a * dh, dh);
      out.setZero();
      at = 0;
      for (int r = 0; r < n_runs; ++r) {
        const Rows vals(runs[r].v + a * dh, runs[r].n, dh, Eigen::OuterStride<>(d));
        out.noalias() += vals.transpose() * Eigen::Map<const Vec>(scores.data() + at, runs[r].n);
        at += runs[r].n;
      }
    }
    x.noalias() += weight(b.o.w) * att + vec(b.o.b);
    layernorm_inplace(b.ln2, x.data(), h.data(), d);
    Vec f = weight(b.ff1.w) * h + vec(b.ff1.b);
    for (auto& e : f) e = gelu(e);
    x.noalias() += weight(b.ff2.w) * f + vec(b.ff2.b);
  }
  layernorm_inplace(m_.ln_f_, x.data(), h.data(), d);
  logits_.resize(static_cast<std::size_t>(cfg.vocab_size()));
  Eigen::Map<Vec>(logits_.data(), cfg.vocab_size()).noalias() = weight(m_.head_.w) * h;
  ++pos_;
  return logits_;
}

// ---- training --------------------------------------------------------------------

std::vector<int> loss_targets(std::span<const int> ids, const Vocab& v) {
  std::vector<int> t(ids.size(), -1);
  for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
    const int next = ids[i + 1];
    if (next >= v.audio_begin() && next < v.uncond()) t[i] = next;
  }
  return t;
}

LmTrainer::LmTrainer(SequenceLm& model, LmTrainerOptions opts, std::uint64_t seed)
    : model_(model), opts_(opts), opt_(model.params().tensors()), rng_(seed) {}

double LmTrainer::step(std::span<const PromptSchema> batch) {
  if (batch.empty()) throw UsageError("lm train step: empty batch");
  const Vocab v = model_.vocab();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double mean = 0;
  opt_.zero_grad();
  for (PromptSchema p : batch) {
    if (opts_.stage == Stage::kPretrain) {
      p.text_tokens.clear();
      p.structure = kStructureNone;
      p.label = kLabelNone;
    }
    cfg_dropout(p, opts_.cfg_dropout, rng_);
    const auto ids = build_sequence(p, v, model_.config().max_seq_len());
    const int prefix = static_cast<int>(ids.size() - p.audio_tokens.size());
    const auto targets = loss_targets(ids, v);
    const Tensor l = nc::cross_entropy(model_.forward(ids, prefix), targets, -1);
    const double value = l.item();
    if (!std::isfinite(value)) {
      nc::clear_tape();
      opt_.zero_grad();
      throw NumericError("lm: non-finite loss at step " + std::to_string(steps() + 1));
    }
    nc::backward(nc::scale(l, static_cast<nc::real>(inv)));
    mean += value * inv;
  }
  nn::optimizer_step(opt_, nc::lr_at({opts_.lr, opts_.warmup_steps}, steps() + 1), opts_.clip);
  return mean;
}

// ---- generation --------------------------------------------------------------------

sem::SemanticTokenSeq generate(const SequenceLm& model, const PromptSchema& cond, int new_tokens,
                               const GenParams& params) {
  const auto& cfg = model.config();
  const Vocab v = model.vocab();
  if (new_tokens < 0) throw UsageError("generate: negative token budget");
  if (params.cfg_scale < 0) throw UsageError("generate: cfg scale must be non-negative");
  if (params.top_k < 1) throw UsageError("generate: top_k must be at least 1");
  const std::size_t audio_total = cond.audio_tokens.size() + static_cast<std::size_t>(new_tokens);
  const std::size_t limit = static_cast<std::size_t>(sem::kFrameRate) * cfg.max_seconds;
  if (audio_total > limit) {
    throw UsageError("generate: " + std::to_string(audio_total) + " audio tokens exceed the preset limit of " +
                     std::to_string(limit) + " (" + std::to_string(cfg.max_seconds) + " s)");
  }
  sem::SemanticTokenSeq out;
  out.v_sem = v.v_sem;
  out.codes = cond.audio_tokens;
  if (new_tokens == 0) return out;

  PromptSchema c = cond;
  c.unconditional = false;
  c.audio_tokens.clear();
  const auto cond_prefix = build_prefix(c, v);
  PromptSchema u;
  u.unconditional = true;
  const auto uncond_prefix = build_prefix(u, v);

  SequenceLm::Session sc(model), su(model);
  sc.set_prefix(static_cast<int>(cond_prefix.size()));
  su.set_prefix(static_cast<int>(uncond_prefix.size()));
  const std::vector<float>* lc = nullptr;
  const std::vector<float>* lu = nullptr;
  for (int id : cond_prefix) lc = &sc.push(id);
  for (int id : uncond_prefix) lu = &su.push(id);
  for (int a : cond.audio_tokens) {
    if (a < 0 || a >= v.v_sem) throw UsageError("generate: prompt token out of range");
    lc = &sc.push(v.audio_begin() + a);
    lu = &su.push(v.audio_begin() + a);
  }

  // Sampling is restricted to the audio range of the vocabulary.
  const int k = std::min(params.top_k, v.v_sem);
  std::mt19937_64 rng(params.seed);
  for (int i = 0; i < new_tokens; ++i) {
    const std::span<const float> ca(lc->data() + v.audio_begin(), static_cast<std::size_t>(v.v_sem));
    const std::span<const float> ua(lu->data() + v.audio_begin(), static_cast<std::size_t>(v.v_sem));
    const auto g = cfg_logits(ca, ua, params.cfg_scale);
    const int tok = sample_topk(g, k, params.temperature, rng);
    out.codes.push_back(tok);
    if (i + 1 < new_tokens) {
      lc = &sc.push(v.audio_begin() + tok);
      lu = &su.push(v.audio_begin() + tok);
    }
  }
  return out;
}

sem::SemanticTokenSeq generate_t2m(const SequenceLm& model, PromptSchema cond, double duration_s,
                                   const GenParams& params) {
  if (!(duration_s > 0)) throw UsageError("generate: duration must be positive");
  const int max_s = model.config().max_seconds;
  if (duration_s > max_s) {
    throw UsageError("generate: duration " + std::to_string(duration_s) + " s exceeds the preset maximum of " +
                     std::to_string(max_s) + " s");
  }
  cond.audio_tokens.clear();
  if (cond.time_end == 0) cond.time_end = std::min(max_s, static_cast<int>(std::ceil(duration_s)));
  const int n = static_cast<int>(std::lround(sem::kFrameRate * duration_s));
  return generate(model, cond, n, params);
}

}  // namespace imusic::lm
