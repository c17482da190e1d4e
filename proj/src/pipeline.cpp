#include "imusic/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "imusic/checkpoint.hpp"
#include "imusic/corpus.hpp"
#include "imusic/error.hpp"
#include "json.hpp"

namespace imusic::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModuleNames[] = {"sem-codec", "ac-codec", "lm", "srfm"};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

json read_meta(const ckpt::Bundle& b, const fs::path& path, Module expected) {
  auto meta = json::parse(b.metadata, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) throw DataError("checkpoint " + path.string() + ": unreadable metadata");
  const std::string kind = meta.value("kind", "");
  if (kind != module_name(expected)) {
    throw DataError("checkpoint " + path.string() + " holds '" + kind + "', expected '" +
                    std::string(module_name(expected)) + "'");
  }
  return meta;
}

std::string meta_for(Module m, const std::string& preset, const std::string& config_json, std::int64_t step,
                     bool initialized) {
  nlohmann::ordered_json j;
  j["kind"] = module_name(m);
  j["preset"] = preset;
  j["config"] = json::parse(config_json);
  j["step"] = step;
  j["initialized"] = initialized;
  return j.dump();
}

void save_module(const fs::path& path, const nn::ParamStore& ps, const std::string& meta, const nc::Adam* opt) {
  ckpt::save(path, ckpt::from_params(ps, meta));
  if (opt) ckpt::save_adam(ckpt::adam_sidecar(path), *opt);
}

void require_checkpoint(const fs::path& path, Module needed, Module training) {
  if (!fs::exists(path)) {
    throw DataError(std::string(module_name(training)) + " training needs the " + std::string(module_name(needed)) +
                    " checkpoint " + path.string() + " (train --module " + std::string(module_name(needed)) +
                    " first)");
  }
}

int structure_of(const corpus::ManifestRecord& r) {
  if (r.structure.empty()) return lm::kStructureNone;
  return lm::parse_structure(r.structure.front()).value_or(lm::kStructureNone);
}

int label_of(const corpus::ManifestRecord& r) {
  const auto g = corpus::parse_genre(r.genre);
  return g ? static_cast<int>(*g) : lm::kLabelNone;
}

audio::Waveform fit_length(audio::Waveform w, std::size_t n) {
  w.samples.resize(n, 0.0f);
  return w;
}

}  // namespace

std::string_view module_name(Module m) { return kModuleNames[static_cast<int>(m)]; }

std::optional<Module> parse_module(std::string_view name) {
  for (int i = 0; i < 4; ++i) {
    if (name == kModuleNames[i]) return static_cast<Module>(i);
  }
  return std::nullopt;
}

fs::path checkpoint_path(const fs::path& run_dir, Module m) {
  return run_dir / (std::string(module_name(m)) + ".imck");
}

Preset Preset::named(const std::string& name) {
  Preset p;
  p.name = name;
  p.sem = sem::SemCodecConfig::desk();
  p.ac = ac::AcCodecConfig::desk();
  p.flow.v_sem = p.sem.v_sem;
  p.flow.latent_dim = p.ac.latent_dim;
  if (name == "desk-0.5") {
    p.lm = lm::LmConfig::desk_05();
  } else if (name == "desk-1.5") {
    p.lm = lm::LmConfig::desk_15();
  } else {
    throw UsageError("unknown preset '" + name + "' (expected desk-0.5 or desk-1.5)");
  }
  p.lm.v_sem = p.sem.v_sem;
  return p;
}

// ---- loading -------------------------------------------------------------------

std::unique_ptr<sem::SemanticCodec> load_semantic(const fs::path& path) {
  const auto b = ckpt::load(path);
  const auto meta = read_meta(b, path, Module::kSemCodec);
  auto m = std::make_unique<sem::SemanticCodec>(sem::SemCodecConfig::from_json(meta.at("config").dump()), 0);
  ckpt::to_params(b, m->params());
  m->set_codebook_initialized(meta.value("initialized", false));
  return m;
}

std::unique_ptr<ac::AcousticCodec> load_acoustic(const fs::path& path) {
  const auto b = ckpt::load(path);
  const auto meta = read_meta(b, path, Module::kAcCodec);
  auto m = std::make_unique<ac::AcousticCodec>(ac::AcCodecConfig::from_json(meta.at("config").dump()), 0);
  ckpt::to_params(b, m->params());
  m->set_codebooks_initialized(meta.value("initialized", false));
  return m;
}

std::unique_ptr<lm::SequenceLm> load_lm(const fs::path& path) {
  const auto b = ckpt::load(path);
  const auto meta = read_meta(b, path, Module::kLm);
  auto m = std::make_unique<lm::SequenceLm>(lm::LmConfig::from_json(meta.at("config").dump()), 0);
  ckpt::to_params(b, m->params());
  return m;
}

std::unique_ptr<srfm::FlowNet> load_flow(const fs::path& path) {
  const auto b = ckpt::load(path);
  const auto meta = read_meta(b, path, Module::kFlow);
  auto m = std::make_unique<srfm::FlowNet>(srfm::FlowConfig::from_json(meta.at("config").dump()), 0);
  ckpt::to_params(b, m->params());
  return m;
}

void init_run(const fs::path& run_dir, const Preset& preset, std::uint64_t seed) {
  fs::create_directories(run_dir);
  const sem::SemanticCodec s(preset.sem, mix(seed, 1));
  save_module(checkpoint_path(run_dir, Module::kSemCodec), s.params(),
              meta_for(Module::kSemCodec, preset.name, preset.sem.to_json(), 0, false), nullptr);
  const ac::AcousticCodec a(preset.ac, mix(seed, 2));
  save_module(checkpoint_path(run_dir, Module::kAcCodec), a.params(),
              meta_for(Module::kAcCodec, preset.name, preset.ac.to_json(), 0, false), nullptr);
  const lm::SequenceLm l(preset.lm, mix(seed, 3));
  save_module(checkpoint_path(run_dir, Module::kLm), l.params(),
              meta_for(Module::kLm, preset.name, preset.lm.to_json(), 0, false), nullptr);
  const srfm::FlowNet f(preset.flow, mix(seed, 4));
  save_module(checkpoint_path(run_dir, Module::kFlow), f.params(),
              meta_for(Module::kFlow, preset.name, preset.flow.to_json(), 0, false), nullptr);
}

// ---- training ------------------------------------------------------------------

std::pair<double, double> loss_trend(const std::vector<double>& losses, std::size_t window) {
  if (losses.empty()) return {0.0, 0.0};
  const std::size_t w = std::max<std::size_t>(1, std::min(window, losses.size() / 2 == 0 ? 1 : losses.size() / 2));
  double a = 0, b = 0;
  for (std::size_t i = 0; i < w; ++i) {
    a += losses[i];
    b += losses[losses.size() - 1 - i];
  }
  return {a / static_cast<double>(w), b / static_cast<double>(w)};
}

TrainResult train(const cfg::RunConfig& config, Module module, const LogFn& log_fn) {
  auto log = [&](const std::string& s) {
    if (log_fn) log_fn(s);
  };
  const fs::path run = config.get("paths.run");
  const fs::path corpus_dir = config.get("paths.corpus");
  const Preset preset = Preset::named(config.get("model.preset"));
  const auto seed = static_cast<std::uint64_t>(config.get_int("seed.seed"));
  const auto steps = config.get_int("train.steps");
  const auto batch = static_cast<int>(config.get_int("train.batch"));
  const auto every = config.get_int("train.checkpoint_every");
  const auto stage = config.get_int("train.stage");
  if (steps < 0 || batch < 1 || every < 0) throw UsageError("train: steps, batch and checkpoint_every must be non-negative");
  if (stage < 1 || stage > 3) throw UsageError("train: stage must be 1, 2 or 3");
  static constexpr double kDefaultLr[] = {2e-3, 2e-3, 1e-3, 1e-3};
  const double lr = config.get("train.lr") == "auto" ? kDefaultLr[static_cast<int>(module)] : config.get_double("train.lr");

  const fs::path ckpt_path = checkpoint_path(run, module);
  if (module == Module::kLm) require_checkpoint(checkpoint_path(run, Module::kSemCodec), Module::kSemCodec, module);
  if (module == Module::kFlow) {
    require_checkpoint(checkpoint_path(run, Module::kSemCodec), Module::kSemCodec, module);
    require_checkpoint(checkpoint_path(run, Module::kAcCodec), Module::kAcCodec, module);
  }
  const auto manifest = corpus::read_manifest(corpus_dir / "manifest.jsonl");
  if (manifest.records.empty()) throw DataError("corpus " + corpus_dir.string() + " has no records");
  std::error_code ec;
  fs::create_directories(run, ec);
  if (ec) throw DataError("cannot create run directory " + run.string() + ": " + ec.message());

  log("resolved config:\n" + config.dump());
  {
    std::ofstream cfg_out(run / (std::string(module_name(module)) + "_config.txt"));
    cfg_out << config.dump();
  }

  TrainResult result;
  result.checkpoint = ckpt_path;
  result.loss_csv = run / (std::string(module_name(module)) + "_loss.csv");
  const bool resume = fs::exists(ckpt_path);

  // Shared loop: step function returns the loss, save writes the checkpoint.
  auto loop = [&](auto&& step_fn, auto&& current_step, auto&& save) {
    result.first_step = current_step();
    const bool new_csv = !fs::exists(result.loss_csv) || !resume;
    std::ofstream csv(result.loss_csv, new_csv ? std::ios::trunc : std::ios::app);
    if (!csv) throw DataError("cannot write " + result.loss_csv.string());
    if (new_csv) csv << "step,loss\n";
    for (std::int64_t i = 0; i < steps; ++i) {
      const double loss = step_fn();
      result.losses.push_back(loss);
      const auto s = current_step();
      csv << s << "," << loss << "\n";
      csv.flush();
      if (i == 0 || (s % 10) == 0) log(std::string(module_name(module)) + " step " + std::to_string(s) + " loss " + std::to_string(loss));
      if (every > 0 && s % every == 0) save();
    }
    save();
    result.last_step = current_step();
  };

  std::mt19937_64 data_rng(mix(seed, 100 + static_cast<std::uint64_t>(module)));

  switch (module) {
    case Module::kSemCodec: {
      auto model = resume ? load_semantic(ckpt_path) : std::make_unique<sem::SemanticCodec>(preset.sem, mix(seed, 1));
      sem::TrainerOptions opts;
      opts.lr = lr;
      opts.warmup_steps = config.get_int("train.warmup");
      opts.clip = config.get_double("train.clip");
      sem::SemCodecTrainer trainer(*model, opts, mix(seed, 11));
      if (resume) ckpt::load_adam(ckpt::adam_sidecar(ckpt_path), trainer.optimizer());
      data_rng.seed(mix(seed, 100 + static_cast<std::uint64_t>(trainer.steps())));
      std::vector<audio::Waveform> clips;
      for (const auto& r : manifest.records) clips.push_back(audio::read_wav(manifest.view_path(r)));
      const int hop = model->config().hop;
      const double crop_s = config.get_double("train.crop_seconds");
      const int crop = std::max(hop, static_cast<int>(std::ceil(crop_s * audio::kSemanticRate / hop)) * hop);
      std::uniform_int_distribution<std::size_t> pick(0, clips.size() - 1);
      loop(
          [&] {
            std::vector<audio::Waveform> b;
            for (int i = 0; i < batch; ++i) b.push_back(ac::random_crop(clips[pick(data_rng)], crop, data_rng));
            return trainer.step(b).total;
          },
          [&] { return trainer.steps(); },
          [&] {
            save_module(ckpt_path, model->params(),
                        meta_for(module, preset.name, model->config().to_json(), trainer.steps(),
                                 model->codebook_initialized()),
                        &trainer.optimizer());
          });
      break;
    }
    case Module::kAcCodec: {
      auto model = resume ? load_acoustic(ckpt_path) : std::make_unique<ac::AcousticCodec>(preset.ac, mix(seed, 2));
      sem::TrainerOptions opts;
      opts.lr = lr;
      opts.warmup_steps = config.get_int("train.warmup");
      opts.clip = config.get_double("train.clip");
      ac::AcCodecTrainer trainer(*model, opts, mix(seed, 12));
      if (resume) ckpt::load_adam(ckpt::adam_sidecar(ckpt_path), trainer.optimizer());
      data_rng.seed(mix(seed, 200 + static_cast<std::uint64_t>(trainer.steps())));
      std::vector<audio::Waveform> clips;
      for (const auto& r : manifest.records) clips.push_back(audio::read_wav(manifest.master_path(r)));
      std::uniform_int_distribution<std::size_t> pick(0, clips.size() - 1);
      loop(
          [&] {
            std::vector<audio::Waveform> b;
            for (int i = 0; i < batch; ++i) b.push_back(ac::random_crop(clips[pick(data_rng)], ac::kCropSamples, data_rng));
            return trainer.step(b).total;
          },
          [&] { return trainer.steps(); },
          [&] {
            save_module(ckpt_path, model->params(),
                        meta_for(module, preset.name, model->config().to_json(), trainer.steps(),
                                 model->codebooks_initialized()),
                        &trainer.optimizer());
          });
      break;
    }
    case Module::kLm: {
      const auto codec = load_semantic(checkpoint_path(run, Module::kSemCodec));
      auto model = resume ? load_lm(ckpt_path) : std::make_unique<lm::SequenceLm>(preset.lm, mix(seed, 3));
      if (model->config().v_sem != codec->config().v_sem) throw DataError("lm and semantic codec disagree on V_sem");
      lm::LmTrainerOptions opts;
      opts.lr = lr;
      opts.warmup_steps = config.get_int("train.warmup");
      opts.clip = config.get_double("train.clip");
      opts.cfg_dropout = config.get_double("train.cfg_dropout");
      opts.stage = static_cast<lm::Stage>(stage);
      lm::LmTrainer trainer(*model, opts, mix(seed, 13));
      if (resume) ckpt::load_adam(ckpt::adam_sidecar(ckpt_path), trainer.optimizer());
      data_rng.seed(mix(seed, 300 + static_cast<std::uint64_t>(trainer.steps())));
      std::vector<lm::PromptSchema> schemas;
      for (const auto& r : manifest.records) {
        lm::PromptSchema p;
        p.text_tokens = lm::tokenize_caption(r.caption);
        p.structure = structure_of(r);
        p.label = label_of(r);
        p.audio_tokens = codec->encode(audio::read_wav(manifest.view_path(r))).codes;
        schemas.push_back(std::move(p));
      }
      log("encoded " + std::to_string(schemas.size()) + " clips to semantic tokens");
      const int max_s = model->config().max_seconds;
      // Stages 1 and 2 see windows of at most 30 s; stage 3 sees whole clips
      // up to the preset limit.
      const int window_tokens = sem::kFrameRate * (stage == 3 ? max_s : std::min(30, max_s));
      std::uniform_int_distribution<std::size_t> pick(0, schemas.size() - 1);
      loop(
          [&] {
            std::vector<lm::PromptSchema> b;
            for (int i = 0; i < batch; ++i) {
              lm::PromptSchema p = schemas[pick(data_rng)];
              const int n = static_cast<int>(p.audio_tokens.size());
              int start = 0;
              if (n > window_tokens) {
                start = std::uniform_int_distribution<int>(0, n - window_tokens)(data_rng);
                p.audio_tokens = std::vector<int>(p.audio_tokens.begin() + start, p.audio_tokens.begin() + start + window_tokens);
              }
              const int end = start + static_cast<int>(p.audio_tokens.size());
              p.time_start = std::min(max_s, start / sem::kFrameRate);
              p.time_end = std::min(max_s, (end + sem::kFrameRate - 1) / sem::kFrameRate);
              b.push_back(std::move(p));
            }
            return trainer.step(b);
          },
          [&] { return trainer.steps(); },
          [&] {
            save_module(ckpt_path, model->params(),
                        meta_for(module, preset.name, model->config().to_json(), trainer.steps(), true),
                        &trainer.optimizer());
          });
      break;
    }
    case Module::kFlow: {
      const auto scodec = load_semantic(checkpoint_path(run, Module::kSemCodec));
      const auto acodec = load_acoustic(checkpoint_path(run, Module::kAcCodec));
      auto model = resume ? load_flow(ckpt_path) : std::make_unique<srfm::FlowNet>(preset.flow, mix(seed, 4));
      if (model->config().latent_dim != acodec->config().latent_dim || model->config().v_sem != scodec->config().v_sem) {
        throw DataError("flow model does not match the codec checkpoints");
      }
      srfm::FlowTrainerOptions opts;
      opts.lr = lr;
      opts.warmup_steps = config.get_int("train.warmup");
      opts.clip = config.get_double("train.clip");
      srfm::FlowTrainer trainer(*model, opts, mix(seed, 14));
      if (resume) ckpt::load_adam(ckpt::adam_sidecar(ckpt_path), trainer.optimizer());
      data_rng.seed(mix(seed, 400 + static_cast<std::uint64_t>(trainer.steps())));
      std::vector<srfm::FlowPair> full;
      for (const auto& r : manifest.records) {
        srfm::FlowPair p;
        p.tokens = scodec->encode(audio::read_wav(manifest.view_path(r))).codes;
        p.latent = acodec->encode(audio::read_wav(manifest.master_path(r)));
        full.push_back(std::move(p));
      }
      log("encoded " + std::to_string(full.size()) + " token/latent pairs");
      const int w = std::max(1, static_cast<int>(std::lround(config.get_double("train.crop_seconds") * sem::kFrameRate)));
      std::uniform_int_distribution<std::size_t> pick(0, full.size() - 1);
      loop(
          [&] {
            std::vector<srfm::FlowPair> b;
            for (int i = 0; i < batch; ++i) {
              const auto& src = full[pick(data_rng)];
              const int n = std::min(static_cast<int>(src.tokens.size()), src.latent.frames / srfm::kUpsample);
              const int len = std::min(w, n);
              const int k = std::uniform_int_distribution<int>(0, n - len)(data_rng);
              srfm::FlowPair p;
              p.tokens.assign(src.tokens.begin() + k, src.tokens.begin() + k + len);
              p.latent.frames = len * srfm::kUpsample;
              p.latent.channels = src.latent.channels;
              const auto row0 = static_cast<std::ptrdiff_t>(k) * srfm::kUpsample * src.latent.channels;
              const auto count = static_cast<std::ptrdiff_t>(p.latent.frames) * p.latent.channels;
              p.latent.values.assign(src.latent.values.begin() + row0, src.latent.values.begin() + row0 + count);
              b.push_back(std::move(p));
            }
            return trainer.step(b);
          },
          [&] { return trainer.steps(); },
          [&] {
            save_module(ckpt_path, model->params(),
                        meta_for(module, preset.name, model->config().to_json(), trainer.steps(), true),
                        &trainer.optimizer());
          });
      break;
    }
  }
  return result;
}

// ---- generation ----------------------------------------------------------------

GenOptions gen_options(const cfg::RunConfig& config) {
  GenOptions o;
  o.lm.cfg_scale = config.get_double("generate.cfg_scale");
  o.lm.top_k = static_cast<int>(config.get_int("generate.top_k"));
  o.lm.temperature = config.get_double("generate.temperature");
  o.seed = static_cast<std::uint64_t>(config.get_int("seed.seed"));
  o.lm.seed = o.seed;
  o.ode.steps = static_cast<int>(config.get_int("generate.flow_steps"));
  o.ode.solver = srfm::parse_solver(config.get("generate.solver"));
  o.ode.cfg_scale = config.get_double("generate.flow_cfg_scale");
  return o;
}

Generator::Generator(const fs::path& run_dir, bool need_flow) {
  for (Module m : {Module::kSemCodec, Module::kLm}) {
    if (!fs::exists(checkpoint_path(run_dir, m))) {
      throw DataError("generation needs the " + std::string(module_name(m)) + " checkpoint " +
                      checkpoint_path(run_dir, m).string());
    }
  }
  sem_ = load_semantic(checkpoint_path(run_dir, Module::kSemCodec));
  lm_ = load_lm(checkpoint_path(run_dir, Module::kLm));
  if (need_flow) {
    for (Module m : {Module::kAcCodec, Module::kFlow}) {
      if (!fs::exists(checkpoint_path(run_dir, m))) {
        throw DataError("full-rate generation needs the " + std::string(module_name(m)) + " checkpoint " +
                        checkpoint_path(run_dir, m).string() + " (or use no-flow mode)");
      }
    }
    ac_ = load_acoustic(checkpoint_path(run_dir, Module::kAcCodec));
    flow_ = load_flow(checkpoint_path(run_dir, Module::kFlow));
  }
}

lm::PromptSchema schema_for_caption(const std::string& caption, double duration_s, const lm::Vocab& v) {
  lm::PromptSchema p;
  p.text_tokens = lm::tokenize_caption(caption);
  p.time_start = 0;
  p.time_end = std::clamp(static_cast<int>(std::ceil(duration_s)), 0, v.max_seconds);
  std::string lower;
  for (char c : caption) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (int g = 0; g < corpus::kGenreCount; ++g) {
    if (lower.find(corpus::genre_name(static_cast<corpus::Genre>(g))) != std::string::npos) {
      p.label = g;
      break;
    }
  }
  for (int s = 0; s < lm::kStructureNone; ++s) {
    if (lower.find(lm::structure_name(s)) != std::string::npos) {
      p.structure = s;
      break;
    }
  }
  return p;
}

audio::Waveform Generator::render(const sem::SemanticTokenSeq& tokens, const GenOptions& opts) const {
  if (opts.no_flow) return sem_->decode(tokens);
  if (!flow_ || !ac_) throw UsageError("generator was opened without the flow model");
  const auto z = srfm::sample(*flow_, tokens.codes, opts.ode, mix(opts.seed, 7));
  return ac_->decode(z);
}

audio::Waveform Generator::text_to_music(const std::string& caption, double duration_s, const GenOptions& opts) const {
  const auto schema = schema_for_caption(caption, duration_s, lm_->vocab());
  lm::GenParams gp = opts.lm;
  gp.seed = opts.seed;
  const auto tokens = lm::generate_t2m(*lm_, schema, duration_s, gp);
  audio::Waveform w = render(tokens, opts);
  return fit_length(std::move(w), static_cast<std::size_t>(std::llround(duration_s * w.sample_rate)));
}

audio::Waveform Generator::continuation(const audio::Waveform& prompt, double extra_s, const GenOptions& opts,
                                        const std::string& caption) const {
  if (extra_s < 0) throw UsageError("continuation: extra duration must be non-negative");
  if (prompt.samples.empty()) throw UsageError("continuation: empty prompt");
  const audio::Waveform p24 = audio::resample(prompt, audio::kSemanticRate);
  const auto encoded = sem_->encode(p24);
  const int max_s = lm_->config().max_seconds;
  const std::size_t limit = static_cast<std::size_t>(sem::kFrameRate) * max_s;
  if (encoded.codes.size() > limit) {
    throw UsageError("continuation: prompt of " + std::to_string(prompt.duration_seconds()) +
                     " s alone exceeds the preset limit of " + std::to_string(max_s) + " s");
  }
  auto schema = schema_for_caption(caption, prompt.duration_seconds() + extra_s, lm_->vocab());
  schema.audio_tokens = encoded.codes;
  lm::GenParams gp = opts.lm;
  gp.seed = opts.seed;
  const auto tokens = lm::generate(*lm_, schema, static_cast<int>(std::lround(sem::kFrameRate * extra_s)), gp);
  audio::Waveform w = render(tokens, opts);
  const double rate = w.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(prompt.duration_seconds() * rate) + std::llround(extra_s * rate));
  return fit_length(std::move(w), n);
}

// ---- evaluation ------------------------------------------------------------------

eval::Evaluator load_or_train_evaluator(const fs::path& corpus_dir, const fs::path& cache, std::uint64_t seed,
                                        const LogFn& log) {
  if (fs::exists(cache)) return eval::Evaluator::from_bundle(ckpt::load(cache));
  const auto manifest = corpus::read_manifest(corpus_dir / "manifest.jsonl");
  auto ev = eval::train_evaluator(manifest, seed);
  if (log) {
    log("evaluator: genre classifier held-out accuracy " + std::to_string(ev.heldout_accuracy) + ", train accuracy " +
        std::to_string(ev.train_accuracy));
    if (ev.heldout_accuracy < 0.8) log("warning: classifier is under the 80% held-out gate; KL values are unreliable");
  }
  if (cache.has_parent_path()) fs::create_directories(cache.parent_path());
  ckpt::save(cache, ev.to_bundle());
  return ev;
}

std::vector<SweepRow> cfg_sweep(const cfg::RunConfig& config, const std::vector<double>& values, int clips,
                                double duration_s, const fs::path& out_dir, const LogFn& log) {
  if (values.empty() || clips < 1) throw UsageError("sweep: need at least one value and one clip");
  const fs::path run = config.get("paths.run");
  const fs::path corpus_dir = config.get("paths.corpus");
  const auto manifest = corpus::read_manifest(corpus_dir / "manifest.jsonl");
  if (manifest.records.size() < static_cast<std::size_t>(clips)) {
    throw DataError("sweep: corpus has fewer than " + std::to_string(clips) + " records");
  }
  const auto seed = static_cast<std::uint64_t>(config.get_int("seed.seed"));
  const auto ev = load_or_train_evaluator(corpus_dir, run / "evaluator.imck", seed, log);
  const Generator gen(run, true);
  GenOptions base = gen_options(config);

  auto clip_name = [](int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%03d", i);
    return std::string(buf);
  };
  const fs::path ref_dir = out_dir / "reference";
  fs::create_directories(ref_dir);
  for (int i = 0; i < clips; ++i) {
    const auto& r = manifest.records[static_cast<std::size_t>(i)];
    audio::Waveform w = audio::read_wav(manifest.master_path(r));
    w = fit_length(std::move(w), static_cast<std::size_t>(std::llround(duration_s * w.sample_rate)));
    audio::write_wav(ref_dir / (clip_name(i) + ".wav"), w);
  }

  std::vector<SweepRow> rows;
  for (double v : values) {
    std::ostringstream name;
    name << "cfg_" << v;
    const fs::path dir = out_dir / name.str();
    fs::create_directories(dir);
    GenOptions o = base;
    o.lm.cfg_scale = v;
    o.ode.cfg_scale = v;
    for (int i = 0; i < clips; ++i) {
      const auto& r = manifest.records[static_cast<std::size_t>(i)];
      o.seed = mix(seed, 1000 + static_cast<std::uint64_t>(i));
      const auto w = gen.text_to_music(r.caption, duration_s, o);
      audio::write_wav(dir / (clip_name(i) + ".wav"), w);
      std::ofstream(dir / (clip_name(i) + ".txt")) << r.caption;
    }
    rows.push_back({v, eval::evaluate_run(dir, ref_dir, ev)});
    if (log) log("cfg " + name.str().substr(4) + ": kl " + std::to_string(rows.back().report.kl) + " fd " + std::to_string(rows.back().report.fd));
  }
  std::ofstream(out_dir / "sweep.csv") << sweep_csv(rows);
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "cfg,kl,fd,align,n\n";
  for (const auto& r : rows) {
    out << r.cfg << "," << r.report.kl << "," << r.report.fd << ",";
    if (r.report.align) out << *r.report.align;
    out << "," << r.report.n << "\n";
  }
  return out.str();
}

}  // namespace imusic::pipeline
