#pragma once

// Run directories, module checkpoints, training loops over a corpus and the
// generation chain: caption -> semantic tokens -> (flow -> acoustic latent ->
// 48 kHz) or (semantic decoder -> 24 kHz).
//
// A run directory holds sem-codec.imck, ac-codec.imck, lm.imck, srfm.imck,
// their ".adam" optimizer sidecars, <module>_loss.csv and evaluator.imck.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "imusic/acoustic_codec.hpp"
#include "imusic/config.hpp"
#include "imusic/evalkit.hpp"
#include "imusic/semantic_codec.hpp"
#include "imusic/sequence_lm.hpp"
#include "imusic/srfm.hpp"

namespace imusic::pipeline {

enum class Module { kSemCodec, kAcCodec, kLm, kFlow };

std::string_view module_name(Module m);
std::optional<Module> parse_module(std::string_view name);
std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, Module m);

struct Preset {
  std::string name;
  sem::SemCodecConfig sem;
  ac::AcCodecConfig ac;
  lm::LmConfig lm;
  srfm::FlowConfig flow;

  // "desk-0.5" (30 s limit) or "desk-1.5" (wider LM, 480 s limit).
  static Preset named(const std::string& name);
};

using LogFn = std::function<void(const std::string&)>;

// Untrained models of a preset written to a run directory; used for shape
// checks and smoke runs.
void init_run(const std::filesystem::path& run_dir, const Preset& preset, std::uint64_t seed);

struct TrainResult {
  std::int64_t first_step = 0;
  std::int64_t last_step = 0;
  std::vector<double> losses;  // one per step of this invocation
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
};

// Trains one module from the run config (paths.corpus, paths.run,
// train.*, seed.seed). Resumes from an existing checkpoint in the run
// directory. DataError names a missing prerequisite checkpoint.
TrainResult train(const cfg::RunConfig& config, Module module, const LogFn& log = {});

// Mean of the first and last `window` losses.
std::pair<double, double> loss_trend(const std::vector<double>& losses, std::size_t window = 10);

struct GenOptions {
  lm::GenParams lm;
  srfm::OdeParams ode;
  bool no_flow = false;
  std::uint64_t seed = 0;
};

GenOptions gen_options(const cfg::RunConfig& config);

class Generator {
 public:
  // Loads the checkpoints needed for the chosen mode.
  Generator(const std::filesystem::path& run_dir, bool need_flow);

  const lm::SequenceLm& lm() const { return *lm_; }
  const sem::SemanticCodec& semantic() const { return *sem_; }

  // 48000 * d samples at 48 kHz (full) or 24000 * d at 24 kHz (no flow).
  audio::Waveform text_to_music(const std::string& caption, double duration_s, const GenOptions& opts) const;
  // Prompt plus extra seconds; the output has exactly as many samples as the
  // prompt duration plus the extra duration at the output rate.
  audio::Waveform continuation(const audio::Waveform& prompt, double extra_s, const GenOptions& opts,
                               const std::string& caption = {}) const;
  // Semantic tokens to audio through the chosen path.
  audio::Waveform render(const sem::SemanticTokenSeq& tokens, const GenOptions& opts) const;

 private:
  std::unique_ptr<sem::SemanticCodec> sem_;
  std::unique_ptr<ac::AcousticCodec> ac_;
  std::unique_ptr<lm::SequenceLm> lm_;
  std::unique_ptr<srfm::FlowNet> flow_;
};

// Caption conditioning record: genre and section words found in the caption
// fill the label and structure slots.
lm::PromptSchema schema_for_caption(const std::string& caption, double duration_s, const lm::Vocab& v);

// Trains (or loads the cached) evaluator for a corpus.
eval::Evaluator load_or_train_evaluator(const std::filesystem::path& corpus_dir, const std::filesystem::path& cache,
                                        std::uint64_t seed, const LogFn& log = {});

struct SweepRow {
  double cfg = 0;
  eval::Report report;
};

// Generates `clips` captions from the corpus manifest at each guidance value
// (applied to both the LM and the flow sampler), evaluates each set against
// the matching corpus masters, and writes <out>/sweep.csv.
std::vector<SweepRow> cfg_sweep(const cfg::RunConfig& config, const std::vector<double>& values, int clips,
                                double duration_s, const std::filesystem::path& out_dir, const LogFn& log = {});
std::string sweep_csv(const std::vector<SweepRow>& rows);

// Loaders shared by the tools.
std::unique_ptr<sem::SemanticCodec> load_semantic(const std::filesystem::path& path);
std::unique_ptr<ac::AcousticCodec> load_acoustic(const std::filesystem::path& path);
std::unique_ptr<lm::SequenceLm> load_lm(const std::filesystem::path& path);
std::unique_ptr<srfm::FlowNet> load_flow(const std::filesystem::path& path);

}  // namespace imusic::pipeline
