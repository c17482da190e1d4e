#include "imusic/audio_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

#include "imusic/error.hpp"

namespace imusic::audio {

namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <class T>
T read_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::array<std::uint8_t, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  out.insert(out.end(), b.begin(), b.end());
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

std::vector<float> downmix(const std::vector<float>& interleaved, int channels) {
  if (channels <= 1) return interleaved;
  const std::size_t frames = interleaved.size() / static_cast<std::size_t>(channels);
  std::vector<float> mono(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0;
    for (int c = 0; c < channels; ++c) acc += interleaved[i * channels + c];
    mono[i] = static_cast<float>(acc / channels);
  }
  return mono;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto bad = [&](const std::string& why) { return DataError(path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw bad("not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t len = read_le<std::uint32_t>(chunk + 4);
    if (pos + 8 + len > bytes.size()) throw bad("chunk extends past end of file");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw bad("fmt chunk too short");
      format = read_le<std::uint16_t>(chunk + 8);
      channels = read_le<std::uint16_t>(chunk + 10);
      rate = read_le<std::uint32_t>(chunk + 12);
      bits = read_le<std::uint16_t>(chunk + 22);
      if (format == kFormatExtensible) {
        if (len < 40) throw bad("extensible fmt chunk too short");
        format = read_le<std::uint16_t>(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (channels == 0 || rate == 0) throw bad("missing fmt chunk");
  if (!data) throw bad("missing data chunk");
  if (channels > 2) throw bad("unsupported channel count " + std::to_string(channels));
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw bad("unsupported encoding (format " + std::to_string(format) + ", " +
              std::to_string(bits) + " bits); expected PCM16 or float32");
  }
  const std::size_t width = bits / 8;
  const std::size_t count = data_len / width;
  std::vector<float> inter(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* p = data + i * width;
    inter[i] = pcm16 ? static_cast<float>(read_le<std::int16_t>(p)) / 32768.0f : read_le<float>(p);
  }
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples = downmix(inter, channels);
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& wav, SampleFormat format) {
  const bool f32 = format == SampleFormat::kFloat32;
  const std::uint16_t bits = f32 ? 32 : 16;
  const std::uint32_t data_len = static_cast<std::uint32_t>(wav.samples.size() * (bits / 8));
  std::vector<std::uint8_t> out;
  out.reserve(64 + data_len);
  const std::uint32_t fmt_len = f32 ? 18 : 16;
  const std::uint32_t fact_len = f32 ? 12 : 0;
  put_tag(out, "RIFF");
  put_le<std::uint32_t>(out, 4 + (8 + fmt_len) + fact_len + 8 + data_len);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_le<std::uint32_t>(out, fmt_len);
  put_le<std::uint16_t>(out, f32 ? kFormatFloat : kFormatPcm);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(wav.sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(wav.sample_rate) * (bits / 8));
  put_le<std::uint16_t>(out, bits / 8);
  put_le<std::uint16_t>(out, bits);
  if (f32) {
    put_le<std::uint16_t>(out, 0);  // cbSize
    put_tag(out, "fact");
    put_le<std::uint32_t>(out, 4);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(wav.samples.size()));
  }
  put_tag(out, "data");
  put_le<std::uint32_t>(out, data_len);
  for (float s : wav.samples) {
    if (f32) {
      put_le<float>(out, s);
    } else {
      const double q = std::round(static_cast<double>(s) * 32768.0);
      put_le<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

namespace {

constexpr int kZeroCrossings = 16;
constexpr double kCutoff = 0.9;  // fraction of the lower Nyquist frequency

// Taps for one fractional phase of a Blackman-windowed sinc, normalized to
// unit DC gain. `fc` is the cutoff in units of the input Nyquist rate.
std::vector<double> sinc_taps(double phase, double fc, int half) {
  std::vector<double> taps(static_cast<std::size_t>(2 * half + 1));
  double sum = 0;
  for (int j = -half; j <= half; ++j) {
    const double d = j - phase;
    const double x = fc * d;
    const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    const double u = d / (half + 1);  // in (-1, 1)
    const double win = std::abs(u) >= 1 ? 0.0
                                        : 0.42 + 0.5 * std::cos(std::numbers::pi * u) +
                                              0.08 * std::cos(2 * std::numbers::pi * u);
    const double h = fc * sinc * win;
    taps[static_cast<std::size_t>(j + half)] = h;
    sum += h;
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

}  // namespace

Waveform resample(const Waveform& in, int target_rate) {
  if (target_rate != kSemanticRate && target_rate != kAcousticRate) {
    throw UsageError("resample: unsupported target rate " + std::to_string(target_rate));
  }
  if (in.sample_rate == target_rate) return in;
  const bool up = target_rate == 2 * in.sample_rate;
  const bool down = 2 * target_rate == in.sample_rate;
  if (!up && !down) {
    throw UsageError("resample: unsupported ratio " + std::to_string(in.sample_rate) + " -> " +
                     std::to_string(target_rate));
  }
  const double fc = kCutoff * (down ? 0.5 : 1.0);
  const int half = static_cast<int>(std::ceil(kZeroCrossings / fc));
  const std::size_t n_in = in.samples.size();
  Waveform out;
  out.sample_rate = target_rate;
  const std::size_t n_out =
      up ? 2 * n_in : static_cast<std::size_t>(std::llround(static_cast<double>(n_in) / 2.0));
  out.samples.resize(n_out);
  // Polyphase: output positions fall on input phase 0 or 0.5 only.
  const auto taps0 = sinc_taps(0.0, fc, half);
  const auto taps5 = sinc_taps(0.5, fc, half);
  for (std::size_t n = 0; n < n_out; ++n) {
    std::int64_t center;
    const std::vector<double>* taps;
    if (up) {
      center = static_cast<std::int64_t>(n / 2);
      taps = (n % 2 == 0) ? &taps0 : &taps5;
    } else {
      center = static_cast<std::int64_t>(2 * n);
      taps = &taps0;
    }
    double acc = 0;
    for (int j = -half; j <= half; ++j) {
      const std::int64_t idx = center + j;
      if (idx < 0 || idx >= static_cast<std::int64_t>(n_in)) continue;
      acc += (*taps)[static_cast<std::size_t>(j + half)] * in.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

std::vector<Waveform> segment(const Waveform& in, double clip_seconds) {
  if (!(clip_seconds > 0)) throw UsageError("segment: clip_seconds must be > 0");
  const std::size_t clip = static_cast<std::size_t>(std::llround(clip_seconds * in.sample_rate));
  const std::size_t min_tail = static_cast<std::size_t>(in.sample_rate);
  std::vector<Waveform> clips;
  for (std::size_t off = 0; off < in.samples.size(); off += clip) {
    const std::size_t len = std::min(clip, in.samples.size() - off);
    if (len < clip && len < min_tail) break;
    Waveform w;
    w.sample_rate = in.sample_rate;
    w.samples.assign(in.samples.begin() + static_cast<std::ptrdiff_t>(off),
                     in.samples.begin() + static_cast<std::ptrdiff_t>(off + len));
    clips.push_back(std::move(w));
  }
  return clips;
}

}  // namespace imusic::audio
