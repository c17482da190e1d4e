#include "imusic/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "imusic/error.hpp"
#include "json.hpp"

namespace imusic::corpus {

namespace {

constexpr std::array<std::string_view, kGenreCount> kGenreNames{
    "ambient", "classical", "electronic", "folk", "hiphop", "jazz", "metal", "rock"};
constexpr std::array<std::string_view, 4> kSectionNames{"intro", "verse", "chorus", "outro"};
constexpr std::array<std::string_view, 12> kKeyNames{"C", "C#", "D", "D#", "E", "F",
                                                     "F#", "G", "G#", "A", "A#", "B"};

enum class Drums { kNone, kFourOnFloor, kBackbeat, kSparse };

struct Recipe {
  int bpm_lo;
  int bpm_hi;
  std::vector<double> harmonics;
  double attack;   // seconds
  double decay;    // exp time constant, <= 0 sustains until note-off
  int root_midi;   // chord register
  double bass;     // bass voice level
  Drums drums;
  double drum_level;
  double hat_level;
  int arp_per_beat;  // 0 disables the arpeggio voice
  bool sevenths;
  double drive;  // tanh soft clipping gain, 0 = clean
  double swing;  // fraction of an eighth note
};

const Recipe& recipe(Genre g) {
  static const std::array<Recipe, kGenreCount> table{{
      // ambient
      {60, 80, {1.0, 0.15}, 0.6, 0.0, 60, 0.3, Drums::kNone, 0.0, 0.0, 0, false, 0.0, 0.0},
      // classical
      {70, 110, {1.0, 0.5, 0.33, 0.25, 0.2}, 0.08, 0.0, 55, 0.35, Drums::kNone, 0.0, 0.0, 2, false, 0.0, 0.0},
      // electronic
      {120, 135, {1.0, 0.5, 0.33, 0.25, 0.2, 0.17, 0.14, 0.12, 0.11, 0.1}, 0.005, 0.18, 60, 0.6,
       Drums::kFourOnFloor, 1.0, 0.25, 4, false, 0.0, 0.0},
      // folk
      {85, 115, {1.0, 0.6, 0.4, 0.3, 0.2, 0.1}, 0.004, 0.5, 52, 0.3, Drums::kSparse, 0.25, 0.05, 2, false,
       0.0, 0.0},
      // hiphop
      {80, 100, {1.0, 0.3}, 0.01, 0.0, 57, 0.9, Drums::kBackbeat, 1.0, 0.15, 1, true, 0.0, 0.15},
      // jazz
      {90, 140, {1.0, 0.4, 0.2, 0.1}, 0.01, 0.7, 53, 0.5, Drums::kSparse, 0.35, 0.2, 2, true, 0.0, 0.33},
      // metal
      {140, 180, {1.0, 0.0, 0.33, 0.0, 0.2, 0.0, 0.14}, 0.003, 0.0, 40, 0.7, Drums::kBackbeat, 1.0, 0.3, 4,
       false, 3.0, 0.0},
      // rock
      {110, 140, {1.0, 0.5, 0.33, 0.25, 0.2, 0.17}, 0.005, 0.0, 48, 0.6, Drums::kBackbeat, 0.8, 0.2, 2, false,
       1.2, 0.0},
  }};
  return table[static_cast<std::size_t>(g)];
}

constexpr std::array<int, 7> kMajorScale{0, 2, 4, 5, 7, 9, 11};
constexpr std::array<std::array<int, 4>, 4> kProgressions{{{0, 4, 5, 3}, {0, 5, 3, 4}, {5, 3, 0, 4}, {0, 3, 4, 3}}};

const std::vector<std::vector<Section>>& structure_choices() {
  using S = Section;
  static const std::vector<std::vector<Section>> choices{
      {S::kIntro, S::kVerse, S::kChorus, S::kOutro},
      {S::kVerse, S::kChorus},
      {S::kIntro, S::kVerse, S::kChorus},
      {S::kVerse, S::kChorus, S::kOutro},
      {S::kIntro, S::kChorus, S::kOutro},
      {S::kVerse, S::kChorus, S::kVerse, S::kChorus},
  };
  return choices;
}

double midi_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

int scale_note(int key, int root_midi, int degree) {
  const int octave = degree / 7;
  return root_midi + key + kMajorScale[static_cast<std::size_t>(degree % 7)] + 12 * octave;
}

std::uint64_t mix_seed(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Renderer {
 public:
  Renderer(std::size_t n, int rate) : buf_(n, 0.0), rate_(rate) {}

  void tone(double t0, double dur, double hz, const Recipe& r, double gain) {
    const std::size_t s0 = static_cast<std::size_t>(t0 * rate_);
    const double release = 0.02;
    const std::size_t len = static_cast<std::size_t>((dur + release) * rate_);
    const double nyq = rate_ / 2.0 * 0.9;
    for (std::size_t i = 0; i < len && s0 + i < buf_.size(); ++i) {
      const double t = static_cast<double>(i) / rate_;
      double env = r.attack > 0 ? std::min(1.0, t / r.attack) : 1.0;
      if (r.decay > 0) env *= std::exp(-t / r.decay);
      if (t > dur) env *= std::max(0.0, 1.0 - (t - dur) / release);
      if (env < 1e-5) continue;
      double v = 0;
      for (std::size_t h = 0; h < r.harmonics.size(); ++h) {
        const double f = hz * static_cast<double>(h + 1);
        if (f >= nyq || r.harmonics[h] == 0) continue;
        v += r.harmonics[h] * std::sin(2 * std::numbers::pi * f * t);
      }
      buf_[s0 + i] += gain * env * v;
    }
  }

  void kick(double t0, double gain) {
    const std::size_t s0 = static_cast<std::size_t>(t0 * rate_);
    double phase = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(0.35 * rate_) && s0 + i < buf_.size(); ++i) {
      const double t = static_cast<double>(i) / rate_;
      const double f = 45.0 + 105.0 * std::exp(-t / 0.03);
      phase += 2 * std::numbers::pi * f / rate_;
      buf_[s0 + i] += gain * std::exp(-t / 0.12) * std::sin(phase);
    }
  }

  void snare(double t0, double gain, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t s0 = static_cast<std::size_t>(t0 * rate_);
    for (std::size_t i = 0; i < static_cast<std::size_t>(0.2 * rate_) && s0 + i < buf_.size(); ++i) {
      const double t = static_cast<double>(i) / rate_;
      const double body = std::sin(2 * std::numbers::pi * 185.0 * t) * std::exp(-t / 0.05);
      buf_[s0 + i] += gain * (0.5 * body + 0.25 * noise(rng) * std::exp(-t / 0.06));
    }
  }

  void hat(double t0, double gain, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t s0 = static_cast<std::size_t>(t0 * rate_);
    double prev = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(0.06 * rate_) && s0 + i < buf_.size(); ++i) {
      const double t = static_cast<double>(i) / rate_;
      const double x = noise(rng);
      buf_[s0 + i] += gain * 0.3 * (x - prev) * std::exp(-t / 0.015);
      prev = x;
    }
  }

  std::vector<double>& samples() { return buf_; }

 private:
  std::vector<double> buf_;
  int rate_;
};

}  // namespace

std::string_view genre_name(Genre g) { return kGenreNames[static_cast<std::size_t>(g)]; }

std::optional<Genre> parse_genre(std::string_view name) {
  for (int i = 0; i < kGenreCount; ++i) {
    if (kGenreNames[static_cast<std::size_t>(i)] == name) return static_cast<Genre>(i);
  }
  return std::nullopt;
}

std::string_view section_name(Section s) { return kSectionNames[static_cast<std::size_t>(s)]; }

std::optional<Section> parse_section(std::string_view name) {
  for (std::size_t i = 0; i < kSectionNames.size(); ++i) {
    if (kSectionNames[i] == name) return static_cast<Section>(i);
  }
  return std::nullopt;
}

void ClipSpec::validate() const {
  if (bpm < 60 || bpm > 180) throw UsageError("clip spec: bpm " + std::to_string(bpm) + " outside [60, 180]");
  if (!(duration_s >= 1.0 && duration_s <= 480.0)) {
    throw UsageError("clip spec: duration " + std::to_string(duration_s) + "s outside [1, 480]");
  }
  if (key < 0 || key >= 12) throw UsageError("clip spec: key must be a pitch class 0..11");
  if (structure.empty()) throw UsageError("clip spec: empty structure");
}

audio::Waveform synthesize_clip(const ClipSpec& spec) {
  spec.validate();
  const Recipe& r = recipe(spec.genre);
  const int rate = audio::kAcousticRate;
  const std::size_t n = static_cast<std::size_t>(std::llround(spec.duration_s * rate));
  Renderer out(n, rate);
  std::mt19937_64 rng(mix_seed(spec.seed));
  std::uniform_int_distribution<int> pick_prog(0, static_cast<int>(kProgressions.size()) - 1);
  const auto& prog = kProgressions[static_cast<std::size_t>(pick_prog(rng))];

  const double beat = 60.0 / spec.bpm;
  const double bar = 4 * beat;
  const int n_bars = static_cast<int>(std::ceil(spec.duration_s / bar));
  const double section_len = spec.duration_s / static_cast<double>(spec.structure.size());
  std::uniform_int_distribution<int> pick_tone(0, 3);

  for (int b = 0; b < n_bars; ++b) {
    const double t_bar = b * bar;
    const auto sec_idx = std::min(spec.structure.size() - 1, static_cast<std::size_t>(t_bar / section_len));
    const Section sec = spec.structure[sec_idx];
    const bool drums_on = sec == Section::kVerse || sec == Section::kChorus;
    const bool bass_on = sec != Section::kIntro;
    const bool arp_on = sec == Section::kChorus || (sec == Section::kVerse && r.arp_per_beat >= 4);
    const double level = sec == Section::kIntro ? 0.6 : (sec == Section::kChorus ? 1.0 : 0.8);

    const int degree = prog[static_cast<std::size_t>(b % 4)];
    std::vector<int> chord{scale_note(spec.key, r.root_midi, degree), scale_note(spec.key, r.root_midi, degree + 2),
                           scale_note(spec.key, r.root_midi, degree + 4)};
    if (r.sevenths) chord.push_back(scale_note(spec.key, r.root_midi, degree + 6));

    // sustained chord
    for (int note : chord) out.tone(t_bar, bar * 0.98, midi_hz(note), r, 0.22 * level);
    if (bass_on && r.bass > 0) {
      for (int q = 0; q < 4; ++q) {
        const int bn = (r.sevenths && q % 2 == 1) ? chord[2] - 24 : chord[0] - 12;
        out.tone(t_bar + q * beat, beat * 0.9, midi_hz(bn), r, 0.3 * r.bass * level);
      }
    }
    if (arp_on && r.arp_per_beat > 0) {
      const int steps = 4 * r.arp_per_beat;
      const double step = beat / r.arp_per_beat;
      for (int s = 0; s < steps; ++s) {
        const int note = chord[static_cast<std::size_t>(pick_tone(rng)) % chord.size()] + 12;
        const double swing = (s % 2 == 1) ? r.swing * step : 0.0;
        out.tone(t_bar + s * step + swing, step * 0.8, midi_hz(note), r, 0.18 * level);
      }
    }
    if (drums_on && r.drums != Drums::kNone) {
      for (int q = 0; q < 4; ++q) {
        const double tb = t_bar + q * beat;
        switch (r.drums) {
          case Drums::kFourOnFloor:
            out.kick(tb, r.drum_level);
            if (q % 2 == 1) out.snare(tb, 0.5 * r.drum_level, rng);
            break;
          case Drums::kBackbeat:
            if (q % 2 == 0) out.kick(tb, r.drum_level);
            else out.snare(tb, 0.8 * r.drum_level, rng);
            break;
          case Drums::kSparse:
            if (q == 0 || q == 2) out.kick(tb, r.drum_level);
            break;
          case Drums::kNone:
            break;
        }
        if (r.hat_level > 0) {
          out.hat(tb, r.hat_level, rng);
          out.hat(tb + beat * (0.5 + 0.5 * r.swing), 0.7 * r.hat_level, rng);
        }
      }
    }
  }

  auto& s = out.samples();
  if (r.drive > 0) {
    for (auto& x : s) x = std::tanh(r.drive * x) / std::tanh(r.drive);
  }
  // outro fade
  if (spec.structure.back() == Section::kOutro) {
    const std::size_t start = static_cast<std::size_t>((spec.duration_s - section_len) * rate);
    for (std::size_t i = start; i < n; ++i) {
      s[i] *= 1.0 - 0.8 * static_cast<double>(i - start) / static_cast<double>(n - start);
    }
  }
  double peak = 0;
  for (double x : s) peak = std::max(peak, std::abs(x));
  audio::Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  const double g = peak > 0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(s[i] * g);
  return w;
}

std::string tempo_word(int bpm) {
  if (bpm < 90) return "slow";
  if (bpm < 130) return "medium";
  return "fast";
}

int template_count() { return 5; }

int caption_template_index(const ClipSpec& spec) {
  return static_cast<int>(mix_seed(spec.seed ^ 0xC0FFEEULL) % static_cast<std::uint64_t>(template_count()));
}

std::string caption_from_spec(const ClipSpec& spec) {
  const std::string genre(genre_name(spec.genre));
  const std::string tempo = tempo_word(spec.bpm);
  const std::string key(kKeyNames[static_cast<std::size_t>(spec.key)]);
  std::string form;
  for (std::size_t i = 0; i < spec.structure.size(); ++i) {
    if (i) form += i + 1 == spec.structure.size() ? " and " : ", ";
    form += section_name(spec.structure[i]);
  }
  std::ostringstream os;
  switch (caption_template_index(spec)) {
    case 0:
      os << "A " << tempo << " " << genre << " track at " << spec.bpm << " BPM with " << form << ".";
      break;
    case 1:
      os << "Instrumental " << genre << " music in " << key << " major, " << tempo << " tempo, structured as "
         << form << ".";
      break;
    case 2:
      os << "This " << genre << " piece moves through " << form << " at a " << tempo << " pace.";
      break;
    case 3:
      os << tempo << " " << genre << " groove around " << spec.bpm << " beats per minute; sections: " << form
         << ".";
      break;
    default:
      os << "A " << genre << " composition in " << key << " with a " << tempo << " feel, arranged as " << form
         << ".";
      break;
  }
  return os.str();
}

std::filesystem::path DatasetManifest::master_path(const ManifestRecord& r) const { return root / r.path; }

std::filesystem::path DatasetManifest::view_path(const ManifestRecord& r) const {
  return root / "view24k" / std::filesystem::path(r.path).filename();
}

std::vector<ClipSpec> plan_specs(int n_clips, std::uint64_t seed, const DatasetOptions& opts) {
  if (n_clips < 0) throw UsageError("corpus: negative clip count");
  std::vector<double> w = opts.genre_weights;
  if (w.empty()) w.assign(kGenreCount, 1.0);
  if (static_cast<int>(w.size()) != kGenreCount) {
    throw UsageError("corpus: expected " + std::to_string(kGenreCount) + " genre weights");
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0)) throw UsageError("corpus: genre weights must sum to a positive value");

  // Largest-remainder apportionment.
  std::vector<int> counts(kGenreCount);
  std::vector<std::pair<double, int>> rema;
  int assigned = 0;
  for (int g = 0; g < kGenreCount; ++g) {
    const double exact = n_clips * w[static_cast<std::size_t>(g)] / total;
    counts[static_cast<std::size_t>(g)] = static_cast<int>(std::floor(exact));
    assigned += counts[static_cast<std::size_t>(g)];
    rema.emplace_back(exact - std::floor(exact), g);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (int i = 0; assigned < n_clips; ++i, ++assigned) ++counts[static_cast<std::size_t>(rema[static_cast<std::size_t>(i)].second)];

  std::vector<Genre> genres;
  for (int g = 0; g < kGenreCount; ++g) genres.insert(genres.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(g)]), static_cast<Genre>(g));
  std::mt19937_64 rng(mix_seed(seed));
  std::shuffle(genres.begin(), genres.end(), rng);

  std::vector<ClipSpec> specs;
  const auto& choices = structure_choices();
  for (int i = 0; i < n_clips; ++i) {
    ClipSpec s;
    s.genre = genres[static_cast<std::size_t>(i)];
    const Recipe& r = recipe(s.genre);
    s.bpm = std::uniform_int_distribution<int>(r.bpm_lo, r.bpm_hi)(rng);
    s.key = std::uniform_int_distribution<int>(0, 11)(rng);
    s.structure = choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)];
    s.duration_s = opts.duration_s;
    s.seed = mix_seed(seed * 1000003ULL + static_cast<std::uint64_t>(i));
    s.validate();
    specs.push_back(std::move(s));
  }
  return specs;
}

std::string manifest_line(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["path"] = r.path;
  j["caption"] = r.caption;
  j["genre"] = r.genre;
  j["bpm"] = r.bpm;
  j["structure"] = r.structure;
  j["duration"] = r.duration;
  j["seed"] = r.seed;
  return j.dump();
}

DatasetManifest build_dataset(int n_clips, const std::filesystem::path& out_dir, std::uint64_t seed,
                              const DatasetOptions& opts) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "master", ec);
  if (!ec) fs::create_directories(out_dir / "view24k", ec);
  if (ec) throw DataError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = out_dir;
  const auto specs = plan_specs(n_clips, seed, opts);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ClipSpec& spec = specs[i];
    const audio::Waveform master = synthesize_clip(spec);
    std::vector<audio::Waveform> parts;
    if (spec.duration_s > opts.clip_seconds) {
      parts = audio::segment(master, opts.clip_seconds);
    } else {
      parts.push_back(master);
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "clip_%04zu", i);
    for (std::size_t p = 0; p < parts.size(); ++p) {
      std::string name = stem;
      if (parts.size() > 1) {
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "_s%02zu", p);
        name += suffix;
      }
      name += ".wav";
      ManifestRecord rec;
      rec.path = "master/" + name;
      rec.caption = caption_from_spec(spec);
      rec.genre = std::string(genre_name(spec.genre));
      rec.bpm = spec.bpm;
      for (Section s : spec.structure) rec.structure.emplace_back(section_name(s));
      rec.duration = parts[p].duration_seconds();
      rec.seed = spec.seed;
      audio::write_wav(manifest.master_path(rec), parts[p]);
      audio::write_wav(manifest.view_path(rec), audio::resample(parts[p], audio::kSemanticRate));
      manifest.records.push_back(std::move(rec));
    }
  }
  const fs::path mpath = out_dir / "manifest.jsonl";
  std::ofstream out(mpath, std::ios::trunc);
  if (!out) throw DataError("cannot write " + mpath.string());
  for (const auto& r : manifest.records) out << manifest_line(r) << '\n';
  if (!out) throw DataError("write failed for " + mpath.string());
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& manifest_file) {
  std::ifstream in(manifest_file);
  if (!in) throw DataError("cannot open manifest " + manifest_file.string());
  DatasetManifest m;
  m.root = manifest_file.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.path = j.at("path").get<std::string>();
      r.caption = j.at("caption").get<std::string>();
      r.genre = j.at("genre").get<std::string>();
      r.bpm = j.at("bpm").get<int>();
      r.structure = j.at("structure").get<std::vector<std::string>>();
      r.duration = j.at("duration").get<double>();
      r.seed = j.at("seed").get<std::uint64_t>();
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(manifest_file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

}  // namespace imusic::corpus
