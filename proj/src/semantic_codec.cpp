#include "imusic/semantic_codec.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "codec_losses.hpp"
#include "imusic/dsp.hpp"
#include "imusic/error.hpp"
#include "json.hpp"

namespace imusic::sem {

using nc::Tensor;

SemCodecConfig SemCodecConfig::desk() { return {}; }

SemCodecConfig SemCodecConfig::full_scale() {
  SemCodecConfig c;
  c.v_sem = 4096;
  c.code_dim = 768;
  c.enc_channels = {64, 128, 256, 512, 768};
  c.dec_channels = 768;
  c.dec_blocks = 8;
  return c;
}

double SemCodecConfig::bitrate() const { return frame_rate() * std::log2(static_cast<double>(v_sem)); }

void SemCodecConfig::validate() const {
  if (v_sem < 2 || v_sem > 65536) throw UsageError("semantic codec: V_sem must be in [2, 65536]");
  if (code_dim < 1) throw UsageError("semantic codec: code_dim must be >= 1");
  int prod = 1;
  for (int s : strides) {
    if (s < 1) throw UsageError("semantic codec: strides must be >= 1");
    prod *= s;
  }
  if (prod != hop) throw UsageError("semantic codec: stride product " + std::to_string(prod) + " != hop");
  if (audio::kSemanticRate % hop != 0 || audio::kSemanticRate / hop != kFrameRate) {
    throw UsageError("semantic codec: 24000 / hop must equal 75");
  }
  if (enc_channels.size() != strides.size() + 1) {
    throw UsageError("semantic codec: enc_channels needs one entry more than strides");
  }
  if (dec_channels < 1 || dec_blocks < 0) throw UsageError("semantic codec: bad decoder shape");
}

std::string SemCodecConfig::to_json() const {
  nlohmann::ordered_json j;
  j["v_sem"] = v_sem;
  j["code_dim"] = code_dim;
  j["hop"] = hop;
  j["strides"] = strides;
  j["enc_channels"] = enc_channels;
  j["dec_channels"] = dec_channels;
  j["dec_blocks"] = dec_blocks;
  j["commit_weight"] = commit_weight;
  j["spectral_weight"] = spectral_weight;
  j["wave_weight"] = wave_weight;
  return j.dump();
}

SemCodecConfig SemCodecConfig::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SemCodecConfig c;
    c.v_sem = j.at("v_sem");
    c.code_dim = j.at("code_dim");
    c.hop = j.at("hop");
    c.strides = j.at("strides").get<std::vector<int>>();
    c.enc_channels = j.at("enc_channels").get<std::vector<int>>();
    c.dec_channels = j.at("dec_channels");
    c.dec_blocks = j.at("dec_blocks");
    c.commit_weight = j.at("commit_weight");
    c.spectral_weight = j.at("spectral_weight");
    c.wave_weight = j.at("wave_weight");
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("semantic codec config: ") + e.what());
  }
}

// ---- token files -----------------------------------------------------------

namespace {
constexpr std::uint32_t kTokenVersion = 1;
}

void write_tokens(const std::filesystem::path& path, const SemanticTokenSeq& seq) {
  if (seq.v_sem < 1 || seq.v_sem > 65536) throw UsageError("token file: V_sem must be in [1, 65536]");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  f.write("SEMT", 4);
  u32(kTokenVersion);
  u32(static_cast<std::uint32_t>(seq.v_sem));
  u32(static_cast<std::uint32_t>(seq.codes.size()));
  for (int c : seq.codes) {
    if (c < 0 || c >= seq.v_sem) throw UsageError("token file: code " + std::to_string(c) + " out of range");
    const auto v = static_cast<std::uint16_t>(c);
    f.write(reinterpret_cast<const char*>(&v), 2);
  }
  if (!f) throw DataError("write failed for " + path.string());
}

SemanticTokenSeq read_tokens(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  char magic[4];
  std::uint32_t version = 0, v = 0, count = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&v), 4);
  f.read(reinterpret_cast<char*>(&count), 4);
  if (!f || std::memcmp(magic, "SEMT", 4) != 0) throw DataError(path.string() + ": not a token file");
  if (version != kTokenVersion) {
    throw DataError(path.string() + ": token file version " + std::to_string(version) + " unsupported (expected 1)");
  }
  SemanticTokenSeq seq;
  seq.v_sem = static_cast<int>(v);
  seq.codes.resize(count);
  for (auto& c : seq.codes) {
    std::uint16_t x = 0;
    f.read(reinterpret_cast<char*>(&x), 2);
    if (!f) throw DataError(path.string() + ": truncated token stream");
    if (x >= v) throw DataError(path.string() + ": code " + std::to_string(x) + " out of range");
    c = x;
  }
  return seq;
}

int nearest_code(std::span<const float> table, int dim, std::span<const float> h) {
  const std::size_t rows = table.size() / static_cast<std::size_t>(dim);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    double d2 = 0;
    for (int d = 0; d < dim; ++d) {
      const double diff = static_cast<double>(h[static_cast<std::size_t>(d)]) - table[r * dim + d];
      d2 += diff * diff;
    }
    if (d2 < best_d) {  // strict: ties keep the lower index
      best_d = d2;
      best = static_cast<int>(r);
    }
  }
  return best;
}

// ---- model -----------------------------------------------------------------

SemanticCodec::SemanticCodec(const SemCodecConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const auto& ch = cfg_.enc_channels;
  enc_in_ = nn::make_conv(ps_, "enc.in", 1, ch[0], 7, 1, rng);
  for (std::size_t i = 0; i < cfg_.strides.size(); ++i) {
    const int s = cfg_.strides[i];
    enc_down_.push_back(nn::make_conv(ps_, "enc.down" + std::to_string(i), ch[i], ch[i + 1], 2 * s, s, rng));
  }
  enc_out_ = nn::make_conv(ps_, "enc.out", ch.back(), cfg_.code_dim, 3, 1, rng);
  feat_gain_ = Tensor::full({cfg_.code_dim}, 1);
  feat_bias_ = Tensor::zeros({cfg_.code_dim});
  const double b = 1.0 / cfg_.v_sem;
  codebook_ = ps_.add("vq.codebook", Tensor::uniform({cfg_.v_sem, cfg_.code_dim}, rng, -b, b));
  dec_in_ = nn::make_conv(ps_, "dec.in", cfg_.code_dim, cfg_.dec_channels, 3, 1, rng);
  for (int i = 0; i < cfg_.dec_blocks; ++i) {
    const std::string p = "dec.block" + std::to_string(i);
    dec_blocks_.emplace_back(nn::make_conv(ps_, p + ".a", cfg_.dec_channels, cfg_.dec_channels, 3, 1, rng),
                             nn::make_conv(ps_, p + ".b", cfg_.dec_channels, cfg_.dec_channels, 1, 1, rng));
  }
  const int bins = kHeadFft / 2 + 1;
  dec_head_ = nn::make_conv(ps_, "dec.head", cfg_.dec_channels, 2 * bins, 1, 1, rng);

  // Real inverse DFT of a Hermitian spectrum as two dense bases; 1280 is not
  // a power of two so the radix-2 FFT does not apply.
  std::vector<nc::real> cs(static_cast<std::size_t>(bins) * kHeadFft), sn(cs.size());
  for (int k = 0; k < bins; ++k) {
    const double c = (k == 0 || k == kHeadFft / 2) ? 1.0 / kHeadFft : 2.0 / kHeadFft;
    for (int n = 0; n < kHeadFft; ++n) {
      const double ang = 2 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * n) % kHeadFft) / kHeadFft;
      cs[static_cast<std::size_t>(k) * kHeadFft + n] = static_cast<nc::real>(c * std::cos(ang));
      sn[static_cast<std::size_t>(k) * kHeadFft + n] = static_cast<nc::real>(c * std::sin(ang));
    }
  }
  idft_cos_ = Tensor::from({bins, kHeadFft}, std::move(cs));
  idft_sin_ = Tensor::from({bins, kHeadFft}, std::move(sn));
  const auto w = dsp::hann(kHeadFft);
  synth_window_ = Tensor::from({kHeadFft}, std::vector<nc::real>(w.begin(), w.end()));
}

std::size_t SemanticCodec::frames_for(std::size_t samples) const {
  return (samples + static_cast<std::size_t>(cfg_.hop) - 1) / static_cast<std::size_t>(cfg_.hop);
}

Tensor SemanticCodec::encode_features(const Tensor& signal) const {
  const int len = static_cast<int>(signal.numel());
  if (len % cfg_.hop != 0 || len == 0) {
    throw UsageError("semantic encoder: length " + std::to_string(len) + " is not a positive multiple of " +
                     std::to_string(cfg_.hop));
  }
  Tensor x = nn::forward(enc_in_, nc::reshape(signal, {1, len}));
  for (const auto& c : enc_down_) x = nn::forward(c, nc::gelu(x));
  x = nc::transpose(nn::forward(enc_out_, nc::gelu(x)));
  // Unit-variance features keep the quantizer's scale fixed while the
  // encoder trains.
  return nc::layernorm(x, feat_gain_, feat_bias_);
}

std::vector<int> SemanticCodec::nearest_codes(const Tensor& h) const {
  const int rows = h.dim(0), dim = h.dim(1);
  std::vector<int> codes(static_cast<std::size_t>(rows));
  const std::span<const float> table(codebook_.data().data(), codebook_.numel());
  for (int r = 0; r < rows; ++r) {
    codes[static_cast<std::size_t>(r)] =
        nearest_code(table, dim, h.data().subspan(static_cast<std::size_t>(r) * dim, static_cast<std::size_t>(dim)));
  }
  return codes;
}

std::pair<int, std::vector<float>> SemanticCodec::quantize(std::span<const float> h) const {
  if (static_cast<int>(h.size()) != cfg_.code_dim) {
    throw UsageError("quantize: vector of width " + std::to_string(h.size()) + ", expected " +
                     std::to_string(cfg_.code_dim));
  }
  const std::span<const float> table(codebook_.data().data(), codebook_.numel());
  const int code = nearest_code(table, cfg_.code_dim, h);
  const auto row = table.subspan(static_cast<std::size_t>(code) * cfg_.code_dim, static_cast<std::size_t>(cfg_.code_dim));
  return {code, std::vector<float>(row.begin(), row.end())};
}

Tensor SemanticCodec::decode_latent(const Tensor& q) const {
  const int frames = q.dim(0);
  Tensor x = nn::forward(dec_in_, nc::transpose(q));
  for (const auto& [a, b] : dec_blocks_) x = nc::add(x, nn::forward(b, nc::gelu(nn::forward(a, nc::gelu(x)))));
  Tensor spec = nc::transpose(nn::forward(dec_head_, nc::gelu(x)));  // [F, 2*bins]
  const int bins = kHeadFft / 2 + 1;
  const Tensor mag = nc::exp(nc::clamp(nc::slice_cols(spec, 0, bins), -12, 7));
  const Tensor phase = nc::slice_cols(spec, bins, 2 * bins);
  const Tensor re = nc::mul(mag, nc::cos(phase));
  const Tensor im = nc::mul(mag, nc::sin(phase));
  const Tensor time = nc::sub(nc::matmul(re, idft_cos_), nc::matmul(im, idft_sin_));
  const Tensor ola = nc::overlap_add(nc::mul(time, synth_window_), cfg_.hop);
  // Keep the hop-sized block centred in each frame and undo the window overlap.
  const int offset = (kHeadFft - cfg_.hop) / 2;
  const int out_len = frames * cfg_.hop;
  const auto w = synth_window_.data();
  std::vector<nc::real> inv(static_cast<std::size_t>(out_len));
  for (int t = 0; t < out_len; ++t) {
    double env = 0;
    const int pos = t + offset;
    for (int f = std::max(0, (pos - kHeadFft) / cfg_.hop); f < frames && f * cfg_.hop <= pos; ++f) {
      const int i = pos - f * cfg_.hop;
      if (i < kHeadFft) env += static_cast<double>(w[static_cast<std::size_t>(i)]) * w[static_cast<std::size_t>(i)];
    }
    inv[static_cast<std::size_t>(t)] = static_cast<nc::real>(env > 1e-8 ? 1.0 / env : 0.0);
  }
  const Tensor cropped = nc::slice_cols(nc::reshape(ola, {1, static_cast<int>(ola.numel())}), offset, offset + out_len);
  return nc::mul(nc::reshape(cropped, {out_len}), Tensor::from({out_len}, std::move(inv)));
}

namespace {

Tensor padded_signal(const audio::Waveform& w, int hop) {
  std::size_t n = (w.samples.size() + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop) *
                  static_cast<std::size_t>(hop);
  if (n == 0) n = static_cast<std::size_t>(hop);
  std::vector<nc::real> v(n, 0);
  std::copy(w.samples.begin(), w.samples.end(), v.begin());
  return Tensor::from({static_cast<int>(n)}, std::move(v));
}

}  // namespace

SemanticTokenSeq SemanticCodec::encode(const audio::Waveform& w) const {
  if (w.sample_rate != audio::kSemanticRate) {
    throw UsageError("semantic encode: expected 24000 Hz input, got " + std::to_string(w.sample_rate));
  }
  SemanticTokenSeq seq;
  seq.v_sem = cfg_.v_sem;
  if (w.samples.empty()) return seq;
  nc::NoGradGuard ng;
  seq.codes = nearest_codes(encode_features(padded_signal(w, cfg_.hop)));
  return seq;
}

audio::Waveform SemanticCodec::decode(const SemanticTokenSeq& seq) const {
  audio::Waveform out;
  out.sample_rate = audio::kSemanticRate;
  if (seq.codes.empty()) return out;
  for (int c : seq.codes) {
    if (c < 0 || c >= cfg_.v_sem) {
      throw UsageError("semantic decode: code " + std::to_string(c) + " outside [0, " + std::to_string(cfg_.v_sem) + ")");
    }
  }
  nc::NoGradGuard ng;
  const Tensor y = decode_latent(nc::embedding(codebook_, seq.codes));
  out.samples.assign(y.data().begin(), y.data().end());
  return out;
}

Tensor SemanticCodec::loss(const Tensor& signal, SemLossParts* parts) const {
  const Tensor h = encode_features(signal);
  const auto codes = nearest_codes(h);
  const Tensor e = nc::embedding(codebook_, codes);
  const auto vq = detail::vq_terms(h, e);
  const Tensor recon = detail::reconstruction_loss(decode_latent(vq.quantized), nc::detach(signal),
                                                   audio::kSemanticRate, cfg_.spectral_weight, cfg_.wave_weight);
  const Tensor total =
      nc::add(nc::add(recon, vq.codebook), nc::scale(vq.commit, static_cast<nc::real>(cfg_.commit_weight)));
  if (parts) {
    parts->recon = recon.item();
    parts->codebook = vq.codebook.item();
    parts->commit = vq.commit.item();
    parts->total = total.item();
  }
  return total;
}

void SemanticCodec::init_codebook(const std::vector<float>& features, std::uint64_t seed) {
  const auto centers = detail::kmeans(features, cfg_.code_dim, cfg_.v_sem, 10, seed);
  std::copy(centers.begin(), centers.end(), codebook_.data().begin());
  initialized_ = true;
}

// ---- training --------------------------------------------------------------

SemCodecTrainer::SemCodecTrainer(SemanticCodec& model, TrainerOptions opts, std::uint64_t seed)
    : model_(model),
      opts_(opts),
      opt_(model.params().tensors()),
      rng_(seed),
      usage_(static_cast<std::size_t>(model.config().v_sem), 0) {}

SemLossParts SemCodecTrainer::step(std::span<const audio::Waveform> batch) {
  if (batch.empty()) throw UsageError("semantic codec train step: empty batch");
  const std::size_t len = batch.front().samples.size();
  std::vector<Tensor> signals;
  for (const auto& w : batch) {
    if (w.sample_rate != audio::kSemanticRate) throw UsageError("semantic codec train step: batch must be 24 kHz");
    if (w.samples.size() != len) throw UsageError("semantic codec train step: clips must have equal length");
    signals.push_back(padded_signal(w, model_.config().hop));
  }
  const int dim = model_.config().code_dim;
  std::vector<float> feats;
  if (!model_.codebook_initialized() || opts_.dead_code_interval > 0) {
    nc::NoGradGuard ng;
    for (const auto& s : signals) {
      const Tensor h = model_.encode_features(s);
      feats.insert(feats.end(), h.data().begin(), h.data().end());
    }
  }
  if (!model_.codebook_initialized()) model_.init_codebook(feats, rng_());

  SemLossParts mean;
  const auto scale = static_cast<nc::real>(1.0 / static_cast<double>(batch.size()));
  opt_.zero_grad();
  for (const auto& s : signals) {
    SemLossParts p;
    const Tensor l = model_.loss(s, &p);
    if (!std::isfinite(p.total)) {
      nc::clear_tape();
      opt_.zero_grad();
      throw NumericError("semantic codec: non-finite loss at step " + std::to_string(steps() + 1));
    }
    nc::backward(nc::scale(l, scale));
    mean.total += p.total / static_cast<double>(batch.size());
    mean.recon += p.recon / static_cast<double>(batch.size());
    mean.codebook += p.codebook / static_cast<double>(batch.size());
    mean.commit += p.commit / static_cast<double>(batch.size());
  }
  nn::optimizer_step(opt_, nc::lr_at({opts_.lr, opts_.warmup_steps}, steps() + 1), opts_.clip);

  if (opts_.dead_code_interval > 0) {
    const std::size_t rows = feats.size() / static_cast<std::size_t>(dim);
    const Tensor h = Tensor::from({static_cast<int>(rows), dim}, std::vector<nc::real>(feats.begin(), feats.end()));
    for (int c : model_.nearest_codes(h)) ++usage_[static_cast<std::size_t>(c)];
    if (steps() % opts_.dead_code_interval == 0) {
      auto table = model_.codebook().data();
      std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
      for (std::size_t c = 0; c < usage_.size(); ++c) {
        if (usage_[c] > 0) continue;
        const std::size_t r = pick(rng_);
        std::copy_n(feats.begin() + static_cast<std::ptrdiff_t>(r * dim), dim,
                    table.begin() + static_cast<std::ptrdiff_t>(c * dim));
      }
      std::fill(usage_.begin(), usage_.end(), 0);
    }
  }
  return mean;
}

}  // namespace imusic::sem
