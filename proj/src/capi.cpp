#include "imusic/imusic.h"

#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "imusic/checkpoint.hpp"
#include "imusic/config.hpp"
#include "imusic/corpus.hpp"
#include "imusic/error.hpp"
#include "imusic/pipeline.hpp"
#include "json.hpp"

using namespace imusic;

struct imusic_config {
  cfg::RunConfig cfg;
};

struct imusic_generator {
  std::unique_ptr<pipeline::Generator> gen;
  pipeline::GenOptions opts;
};

namespace {

thread_local std::string g_last_error;

template <class F>
int guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return IMUSIC_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return IMUSIC_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return IMUSIC_ERR_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

void need(const void* p, const char* what) {
  if (!p) throw UsageError(std::string(what) + " must not be NULL");
}

pipeline::LogFn logger(imusic_log_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

std::string wav_info(const audio::Waveform& w, const char* path) {
  nlohmann::ordered_json j;
  j["path"] = path;
  j["sample_rate"] = w.sample_rate;
  j["samples"] = w.samples.size();
  j["seconds"] = w.duration_seconds();
  return j.dump();
}

}  // namespace

extern "C" {

const char* imusic_last_error(void) { return g_last_error.c_str(); }

void imusic_string_free(char* s) { std::free(s); }

const char* imusic_version(void) { return "1.0.0"; }

int imusic_config_new(imusic_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new imusic_config();
  });
}

void imusic_config_free(imusic_config* cfg) { delete cfg; }

int imusic_config_load(imusic_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "config");
    need(path, "path");
    cfg->cfg.load_file(path);
  });
}

int imusic_config_set(imusic_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->cfg.set(key, value);
  });
}

int imusic_config_get(const imusic_config* cfg, const char* key, char** out) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    put(out, cfg->cfg.get(key));
  });
}

int imusic_config_dump(const imusic_config* cfg, char** out) {
  return guarded([&] {
    need(cfg, "config");
    put(out, cfg->cfg.dump());
  });
}

int imusic_corpus_build(int n_clips, const char* out_dir, uint64_t seed, double duration_s, char** summary_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    if (n_clips < 1) throw UsageError("corpus-build: need at least one clip");
    corpus::DatasetOptions opts;
    opts.duration_s = duration_s;
    const auto m = corpus::build_dataset(n_clips, out_dir, seed, opts);
    nlohmann::ordered_json j;
    j["out"] = out_dir;
    j["records"] = m.records.size();
    j["seed"] = seed;
    put(summary_json, j.dump());
  });
}

int imusic_init_run(const imusic_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    pipeline::init_run(cfg->cfg.get("paths.run"), pipeline::Preset::named(cfg->cfg.get("model.preset")),
                       static_cast<std::uint64_t>(cfg->cfg.get_int("seed.seed")));
  });
}

int imusic_train(const imusic_config* cfg, const char* module, imusic_log_fn log, void* user, char** summary_json) {
  return guarded([&] {
    need(cfg, "config");
    need(module, "module");
    const auto m = pipeline::parse_module(module);
    if (!m) throw UsageError(std::string("unknown module '") + module + "' (sem-codec, ac-codec, lm, srfm)");
    const auto r = pipeline::train(cfg->cfg, *m, logger(log, user));
    const auto [head, tail] = pipeline::loss_trend(r.losses);
    nlohmann::ordered_json j;
    j["module"] = module;
    j["first_step"] = r.first_step;
    j["last_step"] = r.last_step;
    j["checkpoint"] = r.checkpoint.string();
    j["loss_csv"] = r.loss_csv.string();
    j["loss_head_mean"] = head;
    j["loss_tail_mean"] = tail;
    put(summary_json, j.dump());
  });
}

int imusic_generator_open(const imusic_config* cfg, int no_flow, imusic_generator** out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    auto g = std::make_unique<imusic_generator>();
    g->opts = pipeline::gen_options(cfg->cfg);
    g->opts.no_flow = no_flow != 0;
    g->gen = std::make_unique<pipeline::Generator>(cfg->cfg.get("paths.run"), !g->opts.no_flow);
    *out = g.release();
  });
}

void imusic_generator_free(imusic_generator* gen) { delete gen; }

int imusic_generate(imusic_generator* gen, const char* caption, double duration_s, const char* out_wav,
                    char** info_json) {
  return guarded([&] {
    need(gen, "generator");
    need(caption, "caption");
    need(out_wav, "out_wav");
    if (!(duration_s > 0)) throw UsageError("generate: duration must be positive");
    const auto w = gen->gen->text_to_music(caption, duration_s, gen->opts);
    audio::write_wav(out_wav, w);
    put(info_json, wav_info(w, out_wav));
  });
}

int imusic_continue(imusic_generator* gen, const char* prompt_wav, double extra_s, const char* caption,
                    const char* out_wav, char** info_json) {
  return guarded([&] {
    need(gen, "generator");
    need(prompt_wav, "prompt_wav");
    need(out_wav, "out_wav");
    const auto prompt = audio::read_wav(prompt_wav);
    const auto w = gen->gen->continuation(prompt, extra_s, gen->opts, caption ? caption : "");
    audio::write_wav(out_wav, w);
    put(info_json, wav_info(w, out_wav));
  });
}

int imusic_eval(const imusic_config* cfg, const char* generated_dir, const char* reference_dir, imusic_log_fn log,
                void* user, char** report_json) {
  return guarded([&] {
    need(cfg, "config");
    need(generated_dir, "generated_dir");
    need(reference_dir, "reference_dir");
    const std::filesystem::path cache = std::filesystem::path(cfg->cfg.get("paths.run")) / "evaluator.imck";
    const auto seed = static_cast<std::uint64_t>(cfg->cfg.get_int("seed.seed"));
    const auto ev = pipeline::load_or_train_evaluator(cfg->cfg.get("paths.corpus"), cache, seed, logger(log, user));
    const auto r = eval::evaluate_run(generated_dir, reference_dir, ev);
    put(report_json, r.to_json(seed, cache.string()));
  });
}

int imusic_inspect(const char* checkpoint_path, char** out_json) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    put(out_json, ckpt::describe(ckpt::inspect(checkpoint_path)));
  });
}

int imusic_sweep(const imusic_config* cfg, const double* values, size_t n_values, int clips, double duration_s,
                 const char* out_dir, imusic_log_fn log, void* user, char** out_csv) {
  return guarded([&] {
    need(cfg, "config");
    need(values, "values");
    need(out_dir, "out_dir");
    const std::vector<double> v(values, values + n_values);
    const auto rows = pipeline::cfg_sweep(cfg->cfg, v, clips, duration_s, out_dir, logger(log, user));
    put(out_csv, pipeline::sweep_csv(rows));
  });
}

}  // extern "C"
