#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "imusic/audio_io.hpp"

namespace imusic::corpus {

enum class Genre : int { kAmbient, kClassical, kElectronic, kFolk, kHipHop, kJazz, kMetal, kRock };
inline constexpr int kGenreCount = 8;

enum class Section : int { kIntro, kVerse, kChorus, kOutro };

std::string_view genre_name(Genre g);
std::optional<Genre> parse_genre(std::string_view name);
std::string_view section_name(Section s);
std::optional<Section> parse_section(std::string_view name);

struct ClipSpec {
  Genre genre = Genre::kAmbient;
  int bpm = 120;
  int key = 0;  // pitch class, 0 = C
  std::vector<Section> structure;
  double duration_s = 4.0;
  std::uint64_t seed = 0;

  // Throws UsageError unless bpm is in [60, 180], duration in [1, 480],
  // key in [0, 12) and the structure is non-empty.
  void validate() const;
};

// Deterministic 48 kHz mono rendering; peak amplitude 0.9.
audio::Waveform synthesize_clip(const ClipSpec& spec);

std::string tempo_word(int bpm);
int template_count();
int caption_template_index(const ClipSpec& spec);
std::string caption_from_spec(const ClipSpec& spec);

struct ManifestRecord {
  std::string path;  // 48 kHz master, relative to the dataset root
  std::string caption;
  std::string genre;
  int bpm = 0;
  std::vector<std::string> structure;
  double duration = 0;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;

  // 24 kHz view path paired with a record's master path.
  std::filesystem::path master_path(const ManifestRecord& r) const;
  std::filesystem::path view_path(const ManifestRecord& r) const;
};

struct DatasetOptions {
  double duration_s = 4.0;
  // Relative genre weights; empty means uniform.
  std::vector<double> genre_weights;
  double clip_seconds = 30.0;
};

// Specs for n clips. Genre counts follow the weights by largest-remainder
// rounding, then the order is shuffled.
std::vector<ClipSpec> plan_specs(int n_clips, std::uint64_t seed, const DatasetOptions& opts = {});

// Writes master/<name>.wav (48 kHz float32), view24k/<name>.wav and
// manifest.jsonl under out_dir. Clips longer than opts.clip_seconds are
// segmented and produce one record per segment.
DatasetManifest build_dataset(int n_clips, const std::filesystem::path& out_dir, std::uint64_t seed,
                              const DatasetOptions& opts = {});

std::string manifest_line(const ManifestRecord& r);
DatasetManifest read_manifest(const std::filesystem::path& manifest_file);

}  // namespace imusic::corpus
