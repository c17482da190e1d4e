#include "codec_losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "imusic/dsp.hpp"

namespace imusic::detail {

using nc::Tensor;

namespace {

constexpr int kMelFft = 1024;
constexpr int kMels = 64;

const Tensor& mel_basis(int sample_rate) {
  thread_local std::map<int, Tensor> cache;
  auto it = cache.find(sample_rate);
  if (it == cache.end()) {
    const auto fb = dsp::mel_filterbank(kMels, kMelFft, sample_rate);
    std::vector<nc::real> v(fb.begin(), fb.end());
    it = cache.emplace(sample_rate, Tensor::from({kMels, kMelFft / 2 + 1}, std::move(v))).first;
  }
  return it->second;
}

Tensor log_mel(const Tensor& mag, int sample_rate) {
  return nc::log(nc::add_scalar(nc::matmul_bt(nc::mul(mag, mag), mel_basis(sample_rate)), nc::real(1e-5)));
}

}  // namespace

Tensor reconstruction_loss(const Tensor& estimate, const Tensor& target, int sample_rate, double spectral_weight,
                           double wave_weight) {
  // Resolutions scale with the sample rate so both codecs see similar time spans.
  const int base = sample_rate >= 48000 ? 1024 : 512;
  const std::array<int, 3> ffts{base, base * 2, base * 4};
  Tensor total;
  auto acc = [&](Tensor t) { total = total.defined() ? nc::add(total, t) : t; };
  const int len = static_cast<int>(estimate.numel());
  for (int fft : ffts) {
    if (len < fft) continue;
    const int hop = fft / 4;
    const Tensor m_hat = nc::stft_magnitude(estimate, fft, hop);
    Tensor m_ref;
    {
      nc::NoGradGuard ng;
      m_ref = nc::stft_magnitude(target, fft, hop);
    }
    acc(nc::l1(m_hat, m_ref));
    acc(nc::l1(nc::log(m_hat), nc::log(m_ref)));
  }
  if (len >= kMelFft) {
    const Tensor m_hat = nc::stft_magnitude(estimate, kMelFft, kMelFft / 4);
    Tensor mel_ref;
    {
      nc::NoGradGuard ng;
      mel_ref = log_mel(nc::stft_magnitude(target, kMelFft, kMelFft / 4), sample_rate);
    }
    acc(nc::l1(log_mel(m_hat, sample_rate), mel_ref));
  }
  if (total.defined()) total = nc::scale(total, static_cast<nc::real>(spectral_weight));
  if (wave_weight > 0) acc(nc::scale(nc::l1(estimate, target), static_cast<nc::real>(wave_weight)));
  if (!total.defined()) total = nc::l1(estimate, target);
  return total;
}

VqTerms vq_terms(const Tensor& h, const Tensor& e) {
  VqTerms t;
  t.codebook = nc::mse(nc::detach(h), e);
  t.commit = nc::mse(h, nc::detach(e));
  std::vector<nc::real> diff(h.numel());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = e.data()[i] - h.data()[i];
  t.quantized = nc::add(h, Tensor::from(h.shape(), std::move(diff)));
  return t;
}

std::vector<float> kmeans(const std::vector<float>& points, int dim, int k, int iterations, std::uint64_t seed) {
  const std::size_t n = points.size() / static_cast<std::size_t>(dim);
  std::mt19937_64 rng(seed);
  std::vector<float> centers(static_cast<std::size_t>(k) * dim);
  double var = 0;
  for (float v : points) var += static_cast<double>(v) * v;
  const double scale = std::sqrt(var / std::max<std::size_t>(1, points.size())) + 1e-6;
  std::normal_distribution<double> jitter(0.0, 1e-3 * scale);

  if (n <= static_cast<std::size_t>(k)) {
    for (int c = 0; c < k; ++c) {
      const std::size_t src = n == 0 ? 0 : static_cast<std::size_t>(c) % n;
      for (int d = 0; d < dim; ++d) {
        const double base = n == 0 ? 0.0 : points[src * dim + d];
        centers[static_cast<std::size_t>(c) * dim + d] =
            static_cast<float>(static_cast<std::size_t>(c) < n ? base : base + jitter(rng));
      }
    }
    return centers;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int c = 0; c < k; ++c) {
    std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(order[static_cast<std::size_t>(c)] * dim), dim,
                centers.begin() + static_cast<std::ptrdiff_t>(c) * dim);
  }
  std::vector<int> assign(n);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = 1e300;
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        double d2 = 0;
        for (int d = 0; d < dim; ++d) {
          const double diff = static_cast<double>(points[i * dim + d]) - centers[static_cast<std::size_t>(c) * dim + d];
          d2 += diff * diff;
        }
        if (d2 < best) {
          best = d2;
          arg = c;
        }
      }
      assign[i] = arg;
    }
    std::vector<double> sums(centers.size(), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[static_cast<std::size_t>(assign[i])];
      for (int d = 0; d < dim; ++d) sums[static_cast<std::size_t>(assign[i]) * dim + d] += points[i * dim + d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) continue;
      for (int d = 0; d < dim; ++d) {
        centers[static_cast<std::size_t>(c) * dim + d] =
            static_cast<float>(sums[static_cast<std::size_t>(c) * dim + d] / counts[static_cast<std::size_t>(c)]);
      }
    }
  }
  return centers;
}

}  // namespace imusic::detail
