#include "imusic/evalkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "imusic/dsp.hpp"
#include "imusic/error.hpp"
#include "json.hpp"

namespace imusic::eval {

using nc::Tensor;

namespace {

Tensor rows_tensor(const std::vector<std::vector<float>>& rows, int width) {
  std::vector<nc::real> v;
  v.reserve(rows.size() * static_cast<std::size_t>(width));
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != width) throw UsageError("feature width mismatch");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor::from({static_cast<int>(rows.size()), width}, std::move(v));
}

// Column mean and standard deviation (floored) written into the two tensors.
void fit_standardiser(const std::vector<std::vector<float>>& rows, Tensor& mean, Tensor& stdev) {
  const std::size_t d = mean.numel();
  std::vector<double> mu(d, 0), var(d, 0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j];
  }
  for (auto& m : mu) m /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) var[j] += (r[j] - mu[j]) * (r[j] - mu[j]);
  }
  for (std::size_t j = 0; j < d; ++j) {
    mean.data()[j] = static_cast<nc::real>(mu[j]);
    stdev.data()[j] = static_cast<nc::real>(std::max(1e-3, std::sqrt(var[j] / static_cast<double>(rows.size()))));
  }
}

Tensor standardise(const Tensor& x, const Tensor& mean, const Tensor& stdev) {
  std::vector<nc::real> inv(stdev.numel());
  for (std::size_t j = 0; j < inv.size(); ++j) inv[j] = 1 / stdev.data()[j];
  const int n = static_cast<int>(inv.size());
  return nc::mul(nc::sub(x, mean), Tensor::from({n}, std::move(inv)));
}

void check_distribution(std::span<const double> p, const char* what) {
  double s = 0;
  for (double x : p) {
    if (!(x >= 0) || !std::isfinite(x)) throw UsageError(std::string(what) + " has a negative or non-finite entry");
    s += x;
  }
  if (std::abs(s - 1) > 1e-6) throw UsageError(std::string(what) + " does not sum to 1 (sum " + std::to_string(s) + ")");
}

std::vector<std::filesystem::path> wav_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no WAV files in " + dir.string());
  return out;
}

}  // namespace

// ---- statistics and metrics ------------------------------------------------------

EmbeddingStats EmbeddingStats::from_rows(std::span<const std::vector<float>> rows) {
  if (rows.empty()) throw UsageError("embedding stats of an empty set");
  EmbeddingStats s;
  s.dim = static_cast<int>(rows[0].size());
  const std::size_t d = static_cast<std::size_t>(s.dim);
  s.mean.assign(d, 0);
  s.cov.assign(d * d, 0);
  for (const auto& r : rows) {
    if (r.size() != d) throw UsageError("embedding width mismatch");
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  }
  for (auto& m : s.mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < d; ++i) {
      const double di = r[i] - s.mean[i];
      for (std::size_t j = i; j < d; ++j) s.cov[i * d + j] += di * (r[j] - s.mean[j]);
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      s.cov[i * d + j] /= static_cast<double>(rows.size());
      s.cov[j * d + i] = s.cov[i * d + j];
    }
  }
  return s;
}

void EmbeddingStats::validate() const {
  const std::size_t d = static_cast<std::size_t>(dim);
  if (dim < 1 || mean.size() != d || cov.size() != d * d) throw UsageError("embedding stats: inconsistent sizes");
  Eigen::Map<const Eigen::MatrixXd> c(cov.data(), dim, dim);
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, c.cwiseAbs().maxCoeff())) {
    throw UsageError("embedding stats: covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-8) throw UsageError("embedding stats: covariance is not positive semidefinite");
}

double frechet_distance(const EmbeddingStats& a, const EmbeddingStats& b, bool* clamped) {
  a.validate();
  b.validate();
  if (a.dim != b.dim) {
    throw UsageError("frechet distance: dimensions " + std::to_string(a.dim) + " and " + std::to_string(b.dim) + " differ");
  }
  if (clamped) *clamped = false;
  if (a.mean == b.mean && a.cov == b.cov) return 0.0;
  const int d = a.dim;
  Eigen::Map<const Eigen::VectorXd> ma(a.mean.data(), d), mb(b.mean.data(), d);
  Eigen::Map<const Eigen::MatrixXd> ca(a.cov.data(), d, d), cb(b.cov.data(), d, d);
  // Tr (Ca Cb)^(1/2) = Tr (Ca^(1/2) Cb Ca^(1/2))^(1/2), which keeps every
  // decomposition symmetric.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(ca);
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd ra = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  const Eigen::MatrixXd inner = ra * cb * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  double tr_sqrt = 0;
  for (int i = 0; i < d; ++i) {
    const double l = ei.eigenvalues()[i];
    if (l < 0) {
      if (clamped && l < -1e-8) *clamped = true;
      continue;
    }
    tr_sqrt += std::sqrt(l);
  }
  const double fd = (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2 * tr_sqrt;
  return std::max(0.0, fd);
}

double kl_labels(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw UsageError("kl: distributions differ in size");
  check_distribution(p, "kl: p");
  check_distribution(q, "kl: q");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) kl += p[i] * std::log(p[i] / std::max(q[i], 1e-10));
  }
  return std::max(0.0, kl);
}

double si_snr(std::span<const float> estimate, std::span<const float> reference) {
  if (estimate.size() != reference.size() || reference.empty()) throw UsageError("si-snr: length mismatch");
  double mr = 0, me = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    mr += reference[i];
    me += estimate[i];
  }
  mr /= static_cast<double>(reference.size());
  me /= static_cast<double>(reference.size());
  double dot = 0, rr = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    dot += (estimate[i] - me) * (reference[i] - mr);
    rr += (reference[i] - mr) * (reference[i] - mr);
  }
  if (rr <= 0) throw UsageError("si-snr: silent reference");
  const double alpha = dot / rr;
  double s = 0, e = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * (reference[i] - mr);
    const double n = (estimate[i] - me) - t;
    s += t * t;
    e += n * n;
  }
  return 10 * std::log10((s + 1e-20) / (e + 1e-20));
}

double spectral_distance(std::span<const float> estimate, std::span<const float> reference) {
  if (estimate.size() != reference.size()) throw UsageError("spectral distance: length mismatch");
  const dsp::StftConfig cfg(1024, 256);
  auto mags = [&](std::span<const float> x) {
    std::vector<double> s(x.begin(), x.end());
    if (s.size() < 1024) s.resize(1024, 0.0);
    return dsp::stft(s, cfg).magnitude();
  };
  const auto a = mags(estimate), b = mags(reference);
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(std::log(a[i] + 1e-5) - std::log(b[i] + 1e-5));
  return acc / static_cast<double>(a.size());
}

double alignment_score(std::span<const float> text_emb, std::span<const float> audio_emb) {
  if (text_emb.size() != audio_emb.size() || text_emb.empty()) throw UsageError("alignment: embedding size mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < text_emb.size(); ++i) {
    dot += static_cast<double>(text_emb[i]) * audio_emb[i];
    na += static_cast<double>(text_emb[i]) * text_emb[i];
    nb += static_cast<double>(audio_emb[i]) * audio_emb[i];
  }
  if (na == 0 || nb == 0) throw NumericError("alignment: zero-norm embedding");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

// ---- features --------------------------------------------------------------------

std::vector<float> audio_features(const audio::Waveform& w) {
  const audio::Waveform v = audio::resample(w, audio::kSemanticRate);
  std::vector<double> s(v.samples.begin(), v.samples.end());
  if (s.size() < 1024) s.resize(1024, 0.0);
  constexpr int kMels = kAudioFeatures / 2;
  const auto mel = dsp::mel_spectrogram(s, dsp::StftConfig(1024, 256), audio::kSemanticRate, kMels);
  std::vector<float> out(kAudioFeatures, 0.0f);
  for (int m = 0; m < kMels; ++m) {
    double mu = 0, sq = 0;
    for (int f = 0; f < mel.frames; ++f) {
      const double l = std::log(mel.at(f, m) + 1e-6);
      mu += l;
      sq += l * l;
    }
    mu /= mel.frames;
    out[static_cast<std::size_t>(m)] = static_cast<float>(mu);
    out[static_cast<std::size_t>(kMels + m)] = static_cast<float>(std::sqrt(std::max(0.0, sq / mel.frames - mu * mu)));
  }
  return out;
}

std::vector<float> text_features(std::string_view caption) {
  std::vector<float> out(kTextFeatures, 0.0f);
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : word) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    out[h % kTextFeatures] += 1.0f;
    word.clear();
  };
  for (char c : caption) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

// ---- genre classifier ------------------------------------------------------------

GenreClassifier::GenreClassifier(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  feat_mean_ = ps_.add("feat_mean", Tensor::zeros({kAudioFeatures}));
  feat_std_ = ps_.add("feat_std", Tensor::full({kAudioFeatures}, 1));
  l1_ = nn::make_linear(ps_, "l1", kAudioFeatures, 64, rng);
  l2_ = nn::make_linear(ps_, "l2", 64, corpus::kGenreCount, rng);
}

void GenreClassifier::fit(const std::vector<std::vector<float>>& feats, const std::vector<int>& labels, int steps,
                          double lr) {
  if (feats.empty() || feats.size() != labels.size()) throw UsageError("classifier: features and labels differ");
  fit_standardiser(feats, feat_mean_, feat_std_);
  const Tensor x = rows_tensor(feats, kAudioFeatures);
  nc::Adam opt({l1_.w, l1_.b, l2_.w, l2_.b});
  for (int s = 0; s < steps; ++s) {
    const Tensor logits = nn::forward(l2_, nc::gelu(nn::forward(l1_, standardise(x, feat_mean_, feat_std_))));
    nc::backward(nc::cross_entropy(logits, labels));
    nn::optimizer_step(opt, lr, 1.0);
  }
}

std::vector<double> GenreClassifier::predict(std::span<const float> feats) const {
  if (feats.size() != static_cast<std::size_t>(kAudioFeatures)) throw UsageError("classifier: bad feature width");
  nc::NoGradGuard ng;
  const Tensor x = Tensor::from({1, kAudioFeatures}, std::vector<nc::real>(feats.begin(), feats.end()));
  const Tensor logits = nn::forward(l2_, nc::gelu(nn::forward(l1_, standardise(x, feat_mean_, feat_std_))));
  const auto l = logits.data();
  const double mx = *std::max_element(l.begin(), l.end());
  std::vector<double> p(l.size());
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(static_cast<double>(l[i]) - mx));
  for (auto& e : p) e /= z;
  return p;
}

// ---- dual encoder ----------------------------------------------------------------

DualEncoder::DualEncoder(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  audio_mean_ = ps_.add("audio_mean", Tensor::zeros({kAudioFeatures}));
  audio_std_ = ps_.add("audio_std", Tensor::full({kAudioFeatures}, 1));
  a1_ = nn::make_linear(ps_, "a1", kAudioFeatures, 64, rng);
  a2_ = nn::make_linear(ps_, "a2", 64, kEmbedDim, rng);
  t1_ = nn::make_linear(ps_, "t1", kTextFeatures, 64, rng);
  t2_ = nn::make_linear(ps_, "t2", 64, kEmbedDim, rng);
  // Layer norm with gain 1/sqrt(d) yields zero-mean unit-norm rows.
  unit_gain_ = Tensor::full({kEmbedDim}, static_cast<nc::real>(1.0 / std::sqrt(static_cast<double>(kEmbedDim))));
  zero_bias_ = Tensor::zeros({kEmbedDim});
}

Tensor DualEncoder::audio_branch(const Tensor& x) const {
  const Tensor h = nn::forward(a2_, nc::gelu(nn::forward(a1_, standardise(x, audio_mean_, audio_std_))));
  return nc::layernorm(h, unit_gain_, zero_bias_);
}

Tensor DualEncoder::text_branch(const Tensor& x) const {
  return nc::layernorm(nn::forward(t2_, nc::gelu(nn::forward(t1_, x))), unit_gain_, zero_bias_);
}

void DualEncoder::fit(const std::vector<std::vector<float>>& audio_feats,
                      const std::vector<std::vector<float>>& text_feats, int steps, double lr) {
  if (audio_feats.empty() || audio_feats.size() != text_feats.size()) throw UsageError("dual encoder: unpaired data");
  fit_standardiser(audio_feats, audio_mean_, audio_std_);
  const Tensor xa = rows_tensor(audio_feats, kAudioFeatures);
  const Tensor xt = rows_tensor(text_feats, kTextFeatures);
  std::vector<int> diag(audio_feats.size());
  std::iota(diag.begin(), diag.end(), 0);
  constexpr nc::real kInvTemperature = 10;
  nc::Adam opt({a1_.w, a1_.b, a2_.w, a2_.b, t1_.w, t1_.b, t2_.w, t2_.b});
  for (int s = 0; s < steps; ++s) {
    const Tensor sim = nc::scale(nc::matmul_bt(audio_branch(xa), text_branch(xt)), kInvTemperature);
    const Tensor loss = nc::add(nc::cross_entropy(sim, diag), nc::cross_entropy(nc::transpose(sim), diag));
    nc::backward(loss);
    nn::optimizer_step(opt, lr, 1.0);
  }
}

std::vector<float> DualEncoder::embed_audio_features(std::span<const float> feats) const {
  nc::NoGradGuard ng;
  const Tensor e = audio_branch(Tensor::from({1, kAudioFeatures}, std::vector<nc::real>(feats.begin(), feats.end())));
  return {e.data().begin(), e.data().end()};
}

std::vector<float> DualEncoder::embed_text_features(std::span<const float> feats) const {
  nc::NoGradGuard ng;
  const Tensor e = text_branch(Tensor::from({1, kTextFeatures}, std::vector<nc::real>(feats.begin(), feats.end())));
  return {e.data().begin(), e.data().end()};
}

// ---- evaluator bundle ------------------------------------------------------------

ckpt::Bundle Evaluator::to_bundle() const {
  nlohmann::ordered_json meta{{"kind", "evaluator"},
                              {"seed", seed},
                              {"heldout_accuracy", heldout_accuracy},
                              {"train_accuracy", train_accuracy}};
  ckpt::Bundle b;
  b.metadata = meta.dump();
  for (const auto& [name, t] : classifier.params().named()) {
    b.tensors.push_back({"clf." + name, t.shape(), {t.data().begin(), t.data().end()}});
  }
  for (const auto& [name, t] : encoder.params().named()) {
    b.tensors.push_back({"enc." + name, t.shape(), {t.data().begin(), t.data().end()}});
  }
  return b;
}

Evaluator Evaluator::from_bundle(const ckpt::Bundle& b) {
  const auto meta = nlohmann::json::parse(b.metadata, nullptr, false);
  if (meta.is_discarded() || meta.value("kind", "") != "evaluator") throw DataError("not an evaluator checkpoint");
  Evaluator ev;
  ev.seed = meta.value("seed", std::uint64_t{0});
  ev.heldout_accuracy = meta.value("heldout_accuracy", 0.0);
  ev.train_accuracy = meta.value("train_accuracy", 0.0);
  std::vector<std::pair<std::string, Tensor>> clf, enc;
  for (const auto& t : b.tensors) {
    const Tensor v = Tensor::from(t.shape, std::vector<nc::real>(t.values.begin(), t.values.end()));
    if (t.name.rfind("clf.", 0) == 0) clf.emplace_back(t.name.substr(4), v);
    else if (t.name.rfind("enc.", 0) == 0) enc.emplace_back(t.name.substr(4), v);
    else throw DataError("evaluator checkpoint: unexpected tensor " + t.name);
  }
  nn::assign(ev.classifier.params(), clf);
  nn::assign(ev.encoder.params(), enc);
  return ev;
}

Evaluator train_evaluator(const corpus::DatasetManifest& manifest, std::uint64_t seed) {
  if (manifest.records.empty()) throw DataError("evaluator training needs a non-empty corpus");
  std::vector<std::vector<float>> feats, texts;
  std::vector<int> labels;
  for (const auto& r : manifest.records) {
    const auto g = corpus::parse_genre(r.genre);
    if (!g) throw DataError("manifest record with unknown genre '" + r.genre + "'");
    feats.push_back(audio_features(audio::read_wav(manifest.view_path(r))));
    texts.push_back(text_features(r.caption));
    labels.push_back(static_cast<int>(*g));
  }
  std::vector<int> seen(corpus::kGenreCount, 0);
  std::vector<bool> heldout(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) heldout[i] = (seen[static_cast<std::size_t>(labels[i])]++ % 5) == 4;
  std::vector<std::vector<float>> tf;
  std::vector<int> tl;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!heldout[i]) {
      tf.push_back(feats[i]);
      tl.push_back(labels[i]);
    }
  }
  Evaluator ev;
  ev.seed = seed;
  ev.classifier = GenreClassifier(seed);
  ev.encoder = DualEncoder(seed + 1);
  ev.classifier.fit(tf, tl, 400, 1e-2);
  int hit_h = 0, n_h = 0, hit_t = 0, n_t = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto p = ev.classifier.predict(feats[i]);
    const bool hit = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == labels[i];
    if (heldout[i]) {
      hit_h += hit;
      ++n_h;
    } else {
      hit_t += hit;
      ++n_t;
    }
  }
  ev.heldout_accuracy = n_h ? static_cast<double>(hit_h) / n_h : 0.0;
  ev.train_accuracy = n_t ? static_cast<double>(hit_t) / n_t : 0.0;
  ev.encoder.fit(feats, texts, 300, 5e-3);
  return ev;
}

// ---- run evaluation --------------------------------------------------------------

std::string Report::to_json(std::uint64_t seed, const std::string& evaluator_id) const {
  nlohmann::ordered_json j;
  j["kl"] = kl;
  j["fd"] = fd;
  j["align"] = align ? nlohmann::ordered_json(*align) : nlohmann::ordered_json(nullptr);
  j["si_snr"] = si_snr ? nlohmann::ordered_json(*si_snr) : nlohmann::ordered_json(nullptr);
  j["n"] = n;
  j["paired"] = paired;
  j["better"] = {{"kl", "lower"}, {"fd", "lower"}, {"align", "higher"}, {"si_snr", "higher"}};
  j["metadata"] = {{"seed", seed}, {"evaluator", evaluator_id}};
  return j.dump(2);
}

Report evaluate_run(const std::filesystem::path& generated, const std::filesystem::path& reference,
                    const Evaluator& ev) {
  const auto gen_files = wav_files(generated);
  const auto ref_files = wav_files(reference);
  struct Clip {
    audio::Waveform wav;
    std::vector<float> feats;
  };
  auto load = [](const std::vector<std::filesystem::path>& files) {
    std::vector<Clip> out;
    for (const auto& f : files) {
      Clip c;
      c.wav = audio::read_wav(f);
      c.feats = audio_features(c.wav);
      out.push_back(std::move(c));
    }
    return out;
  };
  const auto gen = load(gen_files);
  const auto ref = load(ref_files);

  Report r;
  r.n = static_cast<int>(gen.size());
  r.paired = gen_files.size() == ref_files.size() &&
             std::equal(gen_files.begin(), gen_files.end(), ref_files.begin(),
                        [](const auto& a, const auto& b) { return a.filename() == b.filename(); });

  std::vector<std::vector<double>> pg, pr;
  for (const auto& c : gen) pg.push_back(ev.classifier.predict(c.feats));
  for (const auto& c : ref) pr.push_back(ev.classifier.predict(c.feats));
  if (r.paired) {
    double acc = 0;
    for (std::size_t i = 0; i < pg.size(); ++i) acc += kl_labels(pr[i], pg[i]);
    r.kl = acc / static_cast<double>(pg.size());
  } else {
    auto mean_dist = [](const std::vector<std::vector<double>>& ps) {
      std::vector<double> m(ps[0].size(), 0.0);
      for (const auto& p : ps) {
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += p[i];
      }
      const double z = std::accumulate(m.begin(), m.end(), 0.0);
      for (auto& e : m) e /= z;
      return m;
    };
    r.kl = kl_labels(mean_dist(pr), mean_dist(pg));
  }

  std::vector<std::vector<float>> eg, er;
  for (const auto& c : gen) eg.push_back(ev.encoder.embed_audio_features(c.feats));
  for (const auto& c : ref) er.push_back(ev.encoder.embed_audio_features(c.feats));
  r.fd = frechet_distance(EmbeddingStats::from_rows(eg), EmbeddingStats::from_rows(er));

  double align = 0;
  int n_align = 0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    auto caption_path = gen_files[i];
    caption_path.replace_extension(".txt");
    std::ifstream in(caption_path);
    if (!in) continue;
    std::ostringstream ss;
    ss << in.rdbuf();
    align += alignment_score(ev.encoder.embed_text(ss.str()), eg[i]);
    ++n_align;
  }
  if (n_align > 0) r.align = align / n_align;

  if (r.paired) {
    double acc = 0;
    bool ok = true;
    for (std::size_t i = 0; i < gen.size() && ok; ++i) {
      ok = gen[i].wav.sample_rate == ref[i].wav.sample_rate && gen[i].wav.samples.size() == ref[i].wav.samples.size();
      if (ok) acc += si_snr(gen[i].wav.samples, ref[i].wav.samples);
    }
    if (ok) r.si_snr = acc / static_cast<double>(gen.size());
  }
  return r;
}

}  // namespace imusic::eval
