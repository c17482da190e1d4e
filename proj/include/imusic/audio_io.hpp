#pragma once

#include <filesystem>
#include <vector>

namespace imusic::audio {

inline constexpr int kSemanticRate = 24000;
inline constexpr int kAcousticRate = 48000;

struct Waveform {
  std::vector<float> samples;  // mono, nominally in [-1, 1]
  int sample_rate = 0;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

enum class SampleFormat { kPcm16, kFloat32 };

// Reads RIFF/WAVE PCM16 or IEEE float32 with 1 or 2 channels; stereo is
// averaged to mono. Throws DataError on malformed or unsupported files.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wav,
               SampleFormat format = SampleFormat::kFloat32);

// Windowed-sinc conversion between 24 kHz and 48 kHz (ratio 2 or 1/2).
// Output length is round(len * ratio). Identity when rates already match.
Waveform resample(const Waveform& in, int target_rate);

// Consecutive non-overlapping clips of clip_seconds; a trailing remainder is
// kept when it lasts at least one second.
std::vector<Waveform> segment(const Waveform& in, double clip_seconds = 30.0);

// Mean over channels of interleaved frames.
std::vector<float> downmix(const std::vector<float>& interleaved, int channels);

}  // namespace imusic::audio
