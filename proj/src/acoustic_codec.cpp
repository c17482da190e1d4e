#include "imusic/acoustic_codec.hpp"

#include <cmath>

#include "codec_losses.hpp"
#include "imusic/error.hpp"
#include "json.hpp"

namespace imusic::ac {

using nc::Tensor;

AcCodecConfig AcCodecConfig::desk() { return {}; }

AcCodecConfig AcCodecConfig::full_scale() {
  AcCodecConfig c;
  c.latent_dim = 1024;
  c.codebook_size = 2048;
  c.strides = {2, 2, 2, 4, 5, 1};
  c.enc_channels = {32, 64, 128, 256, 512, 1024, 1024};
  return c;
}

void AcCodecConfig::validate() const {
  if (latent_dim < 1 || stages < 1 || codebook_size < 2) throw UsageError("acoustic codec: bad quantizer shape");
  int prod = 1;
  for (int s : strides) {
    if (s < 1) throw UsageError("acoustic codec: strides must be >= 1");
    prod *= s;
  }
  if (prod != hop) throw UsageError("acoustic codec: stride product " + std::to_string(prod) + " != hop");
  if (audio::kAcousticRate / hop != kFrameRate || audio::kAcousticRate % hop != 0) {
    throw UsageError("acoustic codec: 48000 / hop must equal 150");
  }
  if (enc_channels.size() != strides.size() + 1) {
    throw UsageError("acoustic codec: enc_channels needs one entry more than strides");
  }
}

std::string AcCodecConfig::to_json() const {
  nlohmann::ordered_json j;
  j["latent_dim"] = latent_dim;
  j["stages"] = stages;
  j["codebook_size"] = codebook_size;
  j["hop"] = hop;
  j["strides"] = strides;
  j["enc_channels"] = enc_channels;
  j["commit_weight"] = commit_weight;
  j["spectral_weight"] = spectral_weight;
  j["wave_weight"] = wave_weight;
  return j.dump();
}

AcCodecConfig AcCodecConfig::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    AcCodecConfig c;
    c.latent_dim = j.at("latent_dim");
    c.stages = j.at("stages");
    c.codebook_size = j.at("codebook_size");
    c.hop = j.at("hop");
    c.strides = j.at("strides").get<std::vector<int>>();
    c.enc_channels = j.at("enc_channels").get<std::vector<int>>();
    c.commit_weight = j.at("commit_weight");
    c.spectral_weight = j.at("spectral_weight");
    c.wave_weight = j.at("wave_weight");
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("acoustic codec config: ") + e.what());
  }
}

// ---- residual VQ -----------------------------------------------------------

ResidualVq::ResidualVq(int stages, int size, int dim) : size_(size), dim_(dim) {
  for (int i = 0; i < stages; ++i) books_.push_back(Tensor::zeros({size, dim}));
}

ResidualVq::ResidualVq(std::vector<Tensor> codebooks) : books_(std::move(codebooks)) {
  if (books_.empty()) throw UsageError("residual VQ needs at least one stage");
  size_ = books_.front().dim(0);
  dim_ = books_.front().dim(1);
  for (const auto& b : books_) {
    if (b.shape() != books_.front().shape()) throw UsageError("residual VQ stages must share a shape");
  }
}

std::pair<std::vector<int>, std::vector<float>> ResidualVq::quantize(std::span<const float> x) const {
  if (static_cast<int>(x.size()) != dim_) throw UsageError("rvq: vector width does not match codebooks");
  std::vector<float> residual(x.begin(), x.end());
  std::vector<float> sum(x.size(), 0.0f);
  std::vector<int> codes;
  for (const auto& book : books_) {
    const std::span<const float> table(book.data().data(), book.numel());
    const int c = sem::nearest_code(table, dim_, residual);
    codes.push_back(c);
    for (int d = 0; d < dim_; ++d) {
      const float e = table[static_cast<std::size_t>(c) * dim_ + d];
      sum[static_cast<std::size_t>(d)] += e;
      residual[static_cast<std::size_t>(d)] -= e;
    }
  }
  return {codes, sum};
}

std::vector<float> ResidualVq::dequantize(std::span<const int> codes) const {
  if (codes.size() != books_.size()) throw UsageError("rvq: expected one code per stage");
  std::vector<float> sum(static_cast<std::size_t>(dim_), 0.0f);
  for (std::size_t s = 0; s < books_.size(); ++s) {
    if (codes[s] < 0 || codes[s] >= size_) {
      throw UsageError("rvq: code " + std::to_string(codes[s]) + " outside [0, " + std::to_string(size_) + ")");
    }
    for (int d = 0; d < dim_; ++d) sum[static_cast<std::size_t>(d)] += books_[s].data()[static_cast<std::size_t>(codes[s]) * dim_ + d];
  }
  return sum;
}

std::vector<double> ResidualVq::residual_norms(std::span<const float> x) const {
  std::vector<double> norms;
  std::vector<float> residual(x.begin(), x.end());
  auto norm = [&] {
    double s = 0;
    for (float v : residual) s += static_cast<double>(v) * v;
    return std::sqrt(s);
  };
  norms.push_back(norm());
  for (const auto& book : books_) {
    const std::span<const float> table(book.data().data(), book.numel());
    const int c = sem::nearest_code(table, dim_, residual);
    for (int d = 0; d < dim_; ++d) residual[static_cast<std::size_t>(d)] -= table[static_cast<std::size_t>(c) * dim_ + d];
    norms.push_back(norm());
  }
  return norms;
}

// ---- codec -----------------------------------------------------------------

AcousticCodec::AcousticCodec(const AcCodecConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rvq_(1, 2, 1) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const auto& ch = cfg_.enc_channels;
  const int n = static_cast<int>(cfg_.strides.size());
  enc_in_ = nn::make_conv(ps_, "enc.in", 1, ch[0], 7, 1, rng);
  for (int i = 0; i < n; ++i) {
    const int s = cfg_.strides[static_cast<std::size_t>(i)];
    enc_down_.push_back(nn::make_conv(ps_, "enc.down" + std::to_string(i), ch[static_cast<std::size_t>(i)],
                                      ch[static_cast<std::size_t>(i) + 1], s == 1 ? 3 : 2 * s, s, rng));
  }
  enc_out_ = nn::make_conv(ps_, "enc.out", ch.back(), cfg_.latent_dim, 3, 1, rng);
  norm_gain_ = Tensor::full({cfg_.latent_dim}, 1);
  norm_bias_ = Tensor::zeros({cfg_.latent_dim});

  std::vector<Tensor> books;
  const double b = 1.0 / cfg_.codebook_size;
  for (int s = 0; s < cfg_.stages; ++s) {
    books.push_back(ps_.add("rvq.stage" + std::to_string(s),
                            Tensor::uniform({cfg_.codebook_size, cfg_.latent_dim}, rng, -b, b)));
  }
  rvq_ = ResidualVq(std::move(books));
  pin_null_codes();

  dec_in_ = nn::make_conv(ps_, "dec.in", cfg_.latent_dim, ch.back(), 7, 1, rng);
  for (int i = n - 1; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    const std::string p = "dec.up" + std::to_string(n - 1 - i);
    const int s = cfg_.strides[idx];
    if (s == 1) {
      // A unit stride has no transposed counterpart worth the name; model it
      // as a k=2 transposed conv cropped back to the input length.
      nn::ConvT1d c;
      const double bound = 1.0 / std::sqrt(2.0 * ch[idx + 1]);
      c.w = ps_.add(p + ".w", Tensor::uniform({ch[idx + 1], ch[idx], 2}, rng, -bound, bound));
      c.b = ps_.add(p + ".b", Tensor::zeros({ch[idx]}));
      c.stride = 1;
      c.crop_left = 0;
      c.crop_right = 1;
      dec_up_.push_back(c);
    } else {
      dec_up_.push_back(nn::make_conv_t(ps_, p, ch[idx + 1], ch[idx], s, rng));
    }
    dec_res_.push_back(nn::make_conv(ps_, "dec.res" + std::to_string(n - 1 - i), ch[idx], ch[idx], 7, 1, rng));
  }
  dec_out_ = nn::make_conv(ps_, "dec.out", ch[0], 1, 7, 1, rng);
}

std::size_t AcousticCodec::frames_for(std::size_t samples) const {
  return (samples + static_cast<std::size_t>(cfg_.hop) - 1) / static_cast<std::size_t>(cfg_.hop);
}

Tensor AcousticCodec::encode_latent(const Tensor& signal) const {
  const int len = static_cast<int>(signal.numel());
  if (len % cfg_.hop != 0 || len == 0) {
    throw UsageError("acoustic encoder: length " + std::to_string(len) + " is not a positive multiple of " +
                     std::to_string(cfg_.hop));
  }
  Tensor x = nn::forward(enc_in_, nc::reshape(signal, {1, len}));
  for (const auto& c : enc_down_) x = nn::forward(c, nc::gelu(x));
  x = nc::transpose(nn::forward(enc_out_, nc::gelu(x)));
  return nc::layernorm(x, norm_gain_, norm_bias_);
}

Tensor AcousticCodec::decode_latent(const Tensor& z) const {
  const int frames = z.dim(0);
  Tensor x = nn::forward(dec_in_, nc::transpose(z));
  for (std::size_t i = 0; i < dec_up_.size(); ++i) {
    x = nn::forward(dec_up_[i], nc::gelu(x));
    x = nc::add(x, nn::forward(dec_res_[i], nc::gelu(x)));
  }
  x = nn::forward(dec_out_, nc::gelu(x));
  return nc::reshape(x, {frames * cfg_.hop});
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

Tensor latent_tensor(const AcousticLatent& z) {
  return Tensor::from({z.frames, z.channels}, std::vector<nc::real>(z.values.begin(), z.values.end()));
}

}  // namespace

AcousticLatent AcousticCodec::encode(const audio::Waveform& w) const {
  if (w.sample_rate != audio::kAcousticRate) {
    throw UsageError("acoustic encode: expected 48000 Hz input, got " + std::to_string(w.sample_rate));
  }
  AcousticLatent z;
  z.channels = cfg_.latent_dim;
  if (w.samples.empty()) return z;
  nc::NoGradGuard ng;
  const Tensor t = encode_latent(padded_signal(w, cfg_.hop));
  z.frames = t.dim(0);
  z.values.assign(t.data().begin(), t.data().end());
  return z;
}

std::vector<int> AcousticCodec::quantize(const AcousticLatent& z, AcousticLatent* quantized) const {
  if (z.channels != cfg_.latent_dim) throw UsageError("acoustic quantize: latent width mismatch");
  std::vector<int> codes;
  codes.reserve(static_cast<std::size_t>(z.frames) * cfg_.stages);
  if (quantized) {
    *quantized = z;
  }
  for (int f = 0; f < z.frames; ++f) {
    auto [c, q] = rvq_.quantize(z.row(f));
    codes.insert(codes.end(), c.begin(), c.end());
    if (quantized) std::copy(q.begin(), q.end(), quantized->values.begin() + static_cast<std::ptrdiff_t>(f) * z.channels);
  }
  return codes;
}

AcousticLatent AcousticCodec::dequantize(std::span<const int> codes, int frames) const {
  if (codes.size() != static_cast<std::size_t>(frames) * cfg_.stages) {
    throw UsageError("acoustic dequantize: expected frames x stages codes");
  }
  AcousticLatent z;
  z.frames = frames;
  z.channels = cfg_.latent_dim;
  for (int f = 0; f < frames; ++f) {
    const auto v = rvq_.dequantize(codes.subspan(static_cast<std::size_t>(f) * cfg_.stages, static_cast<std::size_t>(cfg_.stages)));
    z.values.insert(z.values.end(), v.begin(), v.end());
  }
  return z;
}

audio::Waveform AcousticCodec::decode(const AcousticLatent& z) const {
  if (z.channels != cfg_.latent_dim && z.frames > 0) throw UsageError("acoustic decode: latent width mismatch");
  audio::Waveform w;
  w.sample_rate = audio::kAcousticRate;
  if (z.frames == 0) return w;
  for (float v : z.values) {
    if (!std::isfinite(v)) throw NumericError("acoustic decode: non-finite latent");
  }
  nc::NoGradGuard ng;
  const Tensor y = decode_latent(latent_tensor(z));
  w.samples.assign(y.data().begin(), y.data().end());
  return w;
}

audio::Waveform AcousticCodec::decode_codes(std::span<const int> codes, int frames) const {
  return decode(dequantize(codes, frames));
}

Tensor AcousticCodec::loss(const Tensor& signal, AcLossParts* parts) const {
  const Tensor h = encode_latent(signal);
  Tensor residual = h;
  Tensor cb_loss, commit_loss;
  std::vector<nc::real> qsum(h.numel(), 0);
  for (const auto& book : rvq_.codebooks()) {
    std::vector<int> codes(static_cast<std::size_t>(h.dim(0)));
    const std::span<const float> table(book.data().data(), book.numel());
    for (int f = 0; f < h.dim(0); ++f) {
      codes[static_cast<std::size_t>(f)] = sem::nearest_code(
          table, cfg_.latent_dim, residual.data().subspan(static_cast<std::size_t>(f) * cfg_.latent_dim, static_cast<std::size_t>(cfg_.latent_dim)));
    }
    const Tensor e = nc::embedding(book, codes);
    const auto vq = detail::vq_terms(residual, e);
    cb_loss = cb_loss.defined() ? nc::add(cb_loss, vq.codebook) : vq.codebook;
    commit_loss = commit_loss.defined() ? nc::add(commit_loss, vq.commit) : vq.commit;
    for (std::size_t i = 0; i < qsum.size(); ++i) qsum[i] += e.data()[i];
    residual = nc::sub(residual, nc::detach(e));
  }
  std::vector<nc::real> st(h.numel());
  for (std::size_t i = 0; i < st.size(); ++i) st[i] = qsum[i] - h.data()[i];
  const Tensor q = nc::add(h, Tensor::from(h.shape(), std::move(st)));
  const Tensor recon = detail::reconstruction_loss(decode_latent(q), nc::detach(signal), audio::kAcousticRate, cfg_.spectral_weight,
                                                   cfg_.wave_weight);
  const Tensor total = nc::add(nc::add(recon, cb_loss), nc::scale(commit_loss, static_cast<nc::real>(cfg_.commit_weight)));
  if (parts) {
    parts->recon = recon.item();
    parts->codebook = cb_loss.item();
    parts->commit = commit_loss.item();
    parts->total = total.item();
  }
  return total;
}

void AcousticCodec::pin_null_codes() {
  auto& books = rvq_.codebooks();
  for (std::size_t s = 0; s < books.size(); ++s) {
    std::fill_n(books[s].data().begin(), cfg_.latent_dim, 0.0f);
  }
}

void AcousticCodec::init_codebooks(const std::vector<float>& latents, std::uint64_t seed) {
  std::vector<float> residual = latents;
  const int dim = cfg_.latent_dim;
  const std::size_t rows = residual.size() / static_cast<std::size_t>(dim);
  std::mt19937_64 rng(seed);
  for (auto& book : rvq_.codebooks()) {
    auto centers = detail::kmeans(residual, dim, cfg_.codebook_size, 10, rng());
    std::fill_n(centers.begin(), dim, 0.0f);
    std::copy(centers.begin(), centers.end(), book.data().begin());
    for (std::size_t r = 0; r < rows; ++r) {
      const std::span<const float> x(residual.data() + r * dim, static_cast<std::size_t>(dim));
      const int c = sem::nearest_code(centers, dim, x);
      for (int d = 0; d < dim; ++d) residual[r * dim + d] -= centers[static_cast<std::size_t>(c) * dim + d];
    }
  }
  initialized_ = true;
}

// ---- training --------------------------------------------------------------

audio::Waveform random_crop(const audio::Waveform& w, int samples, std::mt19937_64& rng) {
  audio::Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(static_cast<std::size_t>(samples), 0.0f);
  if (w.samples.size() <= static_cast<std::size_t>(samples)) {
    std::copy(w.samples.begin(), w.samples.end(), out.samples.begin());
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, w.samples.size() - static_cast<std::size_t>(samples));
  const std::size_t off = pick(rng);
  std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(off), samples, out.samples.begin());
  return out;
}

AcCodecTrainer::AcCodecTrainer(AcousticCodec& model, sem::TrainerOptions opts, std::uint64_t seed)
    : model_(model),
      opts_(opts),
      opt_(model.params().tensors()),
      rng_(seed),
      usage_(static_cast<std::size_t>(model.config().stages),
             std::vector<std::int64_t>(static_cast<std::size_t>(model.config().codebook_size), 0)) {}

AcLossParts AcCodecTrainer::step(std::span<const audio::Waveform> batch) {
  if (batch.empty()) throw UsageError("acoustic codec train step: empty batch");
  std::vector<Tensor> signals;
  for (const auto& w : batch) {
    if (w.sample_rate != audio::kAcousticRate) throw UsageError("acoustic codec train step: batch must be 48 kHz");
    if (w.samples.size() != static_cast<std::size_t>(kCropSamples)) {
      throw UsageError("acoustic codec train step: crops must be exactly " + std::to_string(kCropSamples) +
                       " samples, got " + std::to_string(w.samples.size()));
    }
    signals.push_back(Tensor::from({kCropSamples}, std::vector<nc::real>(w.samples.begin(), w.samples.end())));
  }
  const int dim = model_.config().latent_dim;
  std::vector<float> latents;
  {
    nc::NoGradGuard ng;
    for (const auto& s : signals) {
      const Tensor h = model_.encode_latent(s);
      latents.insert(latents.end(), h.data().begin(), h.data().end());
    }
  }
  if (!model_.codebooks_initialized()) model_.init_codebooks(latents, rng_());

  AcLossParts mean;
  const double inv = 1.0 / static_cast<double>(batch.size());
  opt_.zero_grad();
  for (const auto& s : signals) {
    AcLossParts p;
    const Tensor l = model_.loss(s, &p);
    if (!std::isfinite(p.total)) {
      nc::clear_tape();
      opt_.zero_grad();
      throw NumericError("acoustic codec: non-finite loss at step " + std::to_string(steps() + 1));
    }
    nc::backward(nc::scale(l, static_cast<nc::real>(inv)));
    mean.total += p.total * inv;
    mean.recon += p.recon * inv;
    mean.codebook += p.codebook * inv;
    mean.commit += p.commit * inv;
  }
  nn::optimizer_step(opt_, nc::lr_at({opts_.lr, opts_.warmup_steps}, steps() + 1), opts_.clip);
  model_.pin_null_codes();

  if (opts_.dead_code_interval > 0) {
    // Usage per stage on the pre-update latents; unused entries restart from
    // residuals seen in this batch.
    const std::size_t rows = latents.size() / static_cast<std::size_t>(dim);
    std::vector<float> residual = latents;
    const bool restart = steps() % opts_.dead_code_interval == 0;
    std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
    auto& books = const_cast<ResidualVq&>(model_.rvq()).codebooks();
    for (std::size_t s = 0; s < books.size(); ++s) {
      auto table = books[s].data();
      const std::vector<float> snapshot(residual);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::span<const float> x(residual.data() + r * dim, static_cast<std::size_t>(dim));
        const int c = sem::nearest_code(table, dim, x);
        ++usage_[s][static_cast<std::size_t>(c)];
        for (int d = 0; d < dim; ++d) residual[r * dim + d] -= table[static_cast<std::size_t>(c) * dim + d];
      }
      if (restart) {
        for (std::size_t c = 0; c < usage_[s].size(); ++c) {
          if (usage_[s][c] > 0 || c == 0) continue;
          const std::size_t r = pick(rng_);
          std::copy_n(snapshot.begin() + static_cast<std::ptrdiff_t>(r * dim), dim,
                      table.begin() + static_cast<std::ptrdiff_t>(c * dim));
        }
        std::fill(usage_[s].begin(), usage_[s].end(), 0);
      }
    }
  }
  return mean;
}

}  // namespace imusic::ac
