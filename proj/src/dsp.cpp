#include "imusic/dsp.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "imusic/error.hpp"

namespace imusic::dsp {

bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

// exp(-2*pi*i*k/n) for k < n/2, each entry evaluated directly.
const std::vector<cplx>& twiddles(std::size_t n) {
  thread_local std::map<std::size_t, std::vector<cplx>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<cplx> tw(std::max<std::size_t>(n / 2, 1));
  for (std::size_t k = 0; k < tw.size(); ++k) {
    tw[k] = std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  }
  return cache.emplace(n, std::move(tw)).first->second;
}

}  // namespace

void fft_inplace(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) {
    throw UsageError("fft length " + std::to_string(n) + " is not a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const std::vector<cplx>& tw = twiddles(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx w = inverse ? std::conj(tw[k * step]) : tw[k * step];
        const cplx u = a[i + k];
        const cplx v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

std::vector<cplx> fft(std::span<const cplx> x) {
  std::vector<cplx> a(x.begin(), x.end());
  fft_inplace(a, false);
  return a;
}

std::vector<cplx> ifft(std::span<const cplx> X) {
  std::vector<cplx> a(X.begin(), X.end());
  fft_inplace(a, true);
  return a;
}

std::vector<cplx> rfft(std::span<const double> x) {
  std::vector<cplx> a(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = x[i];
  fft_inplace(a, false);
  return a;
}

std::vector<double> hann(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / n);
  }
  return w;
}

StftConfig::StftConfig(int fft_size, int hop) : fft_size_(fft_size), hop_(hop) {
  if (fft_size <= 0 || hop <= 0 || fft_size % hop != 0) {
    throw UsageError("stft: hop " + std::to_string(hop) + " must divide fft_size " +
                     std::to_string(fft_size));
  }
  window_ = hann(fft_size);
  // Squared-window overlap-add must be flat for analysis+synthesis windowing.
  std::vector<double> acc(static_cast<std::size_t>(hop), 0.0);
  for (int n = 0; n < fft_size; ++n) {
    const double w = window_[static_cast<std::size_t>(n)];
    acc[static_cast<std::size_t>(n % hop)] += w * w;
  }
  double lo = acc[0];
  double hi = acc[0];
  for (double v : acc) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= 0 || (hi - lo) > 1e-9 * hi) {
    throw UsageError("stft: Hann window violates the COLA condition at fft_size " +
                     std::to_string(fft_size) + ", hop " + std::to_string(hop));
  }
  wola_gain_ = hi;
}

int StftConfig::frames_for(std::size_t length) const {
  if (length < static_cast<std::size_t>(fft_size_)) return 0;
  return static_cast<int>((length - static_cast<std::size_t>(fft_size_)) /
                          static_cast<std::size_t>(hop_)) +
         1;
}

std::vector<double> Spectrogram::magnitude() const {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::abs(values[i]);
  return out;
}

Spectrogram stft(std::span<const double> signal, const StftConfig& cfg) {
  const int n = cfg.fft_size();
  if (!is_power_of_two(static_cast<std::size_t>(n))) {
    throw UsageError("stft: fft_size " + std::to_string(n) + " is not a power of two");
  }
  if (signal.size() < static_cast<std::size_t>(n)) {
    throw UsageError("stft: signal of length " + std::to_string(signal.size()) +
                     " is shorter than fft_size " + std::to_string(n));
  }
  Spectrogram spec;
  spec.frames = cfg.frames_for(signal.size());
  spec.bins = cfg.bins();
  spec.values.resize(static_cast<std::size_t>(spec.frames) * spec.bins);
  const auto& w = cfg.window();
  std::vector<cplx> buf(static_cast<std::size_t>(n));
  for (int f = 0; f < spec.frames; ++f) {
    const std::size_t off = static_cast<std::size_t>(f) * cfg.hop();
    for (int i = 0; i < n; ++i) {
      buf[static_cast<std::size_t>(i)] = signal[off + i] * w[static_cast<std::size_t>(i)];
    }
    fft_inplace(buf, false);
    std::copy_n(buf.begin(), spec.bins,
                spec.values.begin() + static_cast<std::ptrdiff_t>(f) * spec.bins);
  }
  return spec;
}

std::vector<double> istft(const Spectrogram& spec, const StftConfig& cfg) {
  const int n = cfg.fft_size();
  if (spec.bins != cfg.bins()) {
    throw UsageError("istft: spectrogram has " + std::to_string(spec.bins) +
                     " bins, config expects " + std::to_string(cfg.bins()));
  }
  if (spec.frames == 0) return {};
  const std::size_t len = static_cast<std::size_t>(spec.frames - 1) * cfg.hop() + n;
  std::vector<double> out(len, 0.0);
  std::vector<double> env(len, 0.0);
  const auto& w = cfg.window();
  std::vector<cplx> buf(static_cast<std::size_t>(n));
  for (int f = 0; f < spec.frames; ++f) {
    for (int k = 0; k < spec.bins; ++k) buf[static_cast<std::size_t>(k)] = spec.at(f, k);
    for (int k = spec.bins; k < n; ++k) {
      buf[static_cast<std::size_t>(k)] = std::conj(spec.at(f, n - k));
    }
    fft_inplace(buf, true);
    const std::size_t off = static_cast<std::size_t>(f) * cfg.hop();
    for (int i = 0; i < n; ++i) {
      const double wi = w[static_cast<std::size_t>(i)];
      out[off + i] += buf[static_cast<std::size_t>(i)].real() * wi;
      env[off + i] += wi * wi;
    }
  }
  for (std::size_t i = 0; i < len; ++i) {
    if (env[i] > 1e-10) out[i] /= env[i];
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(int n_mels, int fft_size, double sample_rate,
                                   double fmin, double fmax) {
  const int bins = fft_size / 2 + 1;
  if (n_mels < 1 || n_mels > bins) {
    throw UsageError("mel: n_mels " + std::to_string(n_mels) + " outside [1, " +
                     std::to_string(bins) + "]");
  }
  if (fmax <= 0) fmax = sample_rate / 2;
  const double mlo = hz_to_mel(fmin);
  const double mhi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(mlo + (mhi - mlo) * i / (n_mels + 1));
  }
  const double bin_hz = sample_rate / fft_size;
  std::vector<double> fb(static_cast<std::size_t>(n_mels) * bins, 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double c = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    double row_sum = 0;
    for (int k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      double v = 0;
      if (f > lo && f <= c) v = (f - lo) / (c - lo);
      else if (f > c && f < hi) v = (hi - f) / (hi - c);
      fb[static_cast<std::size_t>(m) * bins + k] = v;
      row_sum += v;
    }
    if (row_sum <= 0) {
      // Filter narrower than one bin: fall back to the bin nearest its centre.
      const int k = std::min(bins - 1, static_cast<int>(std::lround(c / bin_hz)));
      fb[static_cast<std::size_t>(m) * bins + k] = 1.0;
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(std::span<const double> signal, const StftConfig& cfg,
                               double sample_rate, int n_mels) {
  const auto fb = mel_filterbank(n_mels, cfg.fft_size(), sample_rate);
  const Spectrogram spec = stft(signal, cfg);
  MelSpectrogram mel;
  mel.frames = spec.frames;
  mel.n_mels = n_mels;
  mel.values.assign(static_cast<std::size_t>(spec.frames) * n_mels, 0.0);
  for (int f = 0; f < spec.frames; ++f) {
    for (int m = 0; m < n_mels; ++m) {
      double acc = 0;
      const double* row = fb.data() + static_cast<std::size_t>(m) * spec.bins;
      for (int k = 0; k < spec.bins; ++k) {
        if (row[k] != 0) acc += row[k] * std::norm(spec.at(f, k));
      }
      mel.values[static_cast<std::size_t>(f) * n_mels + m] = acc;
    }
  }
  return mel;
}

}  // namespace imusic::dsp
