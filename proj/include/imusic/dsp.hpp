#pragma once

#include <complex>
#include <span>
#include <vector>

namespace imusic::dsp {

using cplx = std::complex<double>;

bool is_power_of_two(std::size_t n);

// Radix-2 transforms. ifft includes the 1/N factor. Throws UsageError for
// lengths that are not a power of two.
std::vector<cplx> fft(std::span<const cplx> x);
std::vector<cplx> ifft(std::span<const cplx> X);
std::vector<cplx> rfft(std::span<const double> x);  // full-length spectrum
void fft_inplace(std::vector<cplx>& a, bool inverse);

// Periodic Hann window.
std::vector<double> hann(int n);

class StftConfig {
 public:
  // Throws UsageError when hop does not divide fft_size or the squared Hann
  // window does not overlap-add to a constant at this hop.
  StftConfig(int fft_size, int hop);

  int fft_size() const { return fft_size_; }
  int hop() const { return hop_; }
  int bins() const { return fft_size_ / 2 + 1; }
  const std::vector<double>& window() const { return window_; }
  // Value of sum_k w^2(n + k*hop) in the fully-overlapped interior.
  double wola_gain() const { return wola_gain_; }

  int frames_for(std::size_t length) const;

 private:
  int fft_size_;
  int hop_;
  std::vector<double> window_;
  double wola_gain_ = 0;
};

struct Spectrogram {
  int frames = 0;
  int bins = 0;
  std::vector<cplx> values;  // frames x bins, row-major

  cplx at(int f, int k) const { return values[static_cast<std::size_t>(f) * bins + k]; }
  std::vector<double> magnitude() const;
};

// No centre padding: frames = floor((len - fft)/hop) + 1. fft_size must be a
// power of two.
Spectrogram stft(std::span<const double> signal, const StftConfig& cfg);
// Weighted overlap-add; output length (frames-1)*hop + fft_size.
std::vector<double> istft(const Spectrogram& spec, const StftConfig& cfg);

// Triangular filters on the HTK mel scale, shape n_mels x bins.
std::vector<double> mel_filterbank(int n_mels, int fft_size, double sample_rate,
                                   double fmin = 0.0, double fmax = -1.0);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Power spectrogram projected on the mel filterbank: frames x n_mels.
struct MelSpectrogram {
  int frames = 0;
  int n_mels = 0;
  std::vector<double> values;
  double at(int f, int m) const { return values[static_cast<std::size_t>(f) * n_mels + m]; }
};
MelSpectrogram mel_spectrogram(std::span<const double> signal, const StftConfig& cfg,
                               double sample_rate, int n_mels);

}  // namespace imusic::dsp
