// Command-line front end. Talks to the library only through imusic.h.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "imusic/imusic.h"

namespace {

struct Failure {
  int code;
};

void check(int rc) {
  if (rc != IMUSIC_OK) {
    std::fprintf(stderr, "error: %s\n", imusic_last_error());
    throw Failure{rc};
  }
}

void print_owned(char* s) {
  if (s) {
    std::printf("%s\n", s);
    imusic_string_free(s);
  }
}

void log_line(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

// Settings shared by every command that reads a run configuration. Flags
// given explicitly override the config file.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> value, filled by option callbacks

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "Run config file (sectioned key = value)");
    cmd->add_option("--set", sets, "Override a config key, e.g. --set train.lr=0.001");
    bind(cmd, "--run", "paths.run", "Run directory");
    bind(cmd, "--corpus", "paths.corpus", "Corpus directory");
    bind(cmd, "--preset", "model.preset", "desk-0.5 or desk-1.5");
    bind(cmd, "--seed", "seed.seed", "Random seed");
  }

  void bind(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { flags[key] = v; }, help);
  }

  imusic_config* make() const {
    imusic_config* cfg = nullptr;
    check(imusic_config_new(&cfg));
    try {
      if (!config_file.empty()) check(imusic_config_load(cfg, config_file.c_str()));
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
          std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", s.c_str());
          throw Failure{IMUSIC_ERR_USAGE};
        }
        check(imusic_config_set(cfg, s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()));
      }
      for (const auto& [k, v] : flags) check(imusic_config_set(cfg, k.c_str(), v.c_str()));
    } catch (...) {
      imusic_config_free(cfg);
      throw;
    }
    return cfg;
  }
};

struct ConfigHandle {
  imusic_config* p;
  explicit ConfigHandle(const Common& c) : p(c.make()) {}
  ~ConfigHandle() { imusic_config_free(p); }
};

void add_generation_flags(CLI::App* cmd, Common& c) {
  c.bind(cmd, "--cfg", "generate.cfg_scale", "Guidance scale for the LM");
  c.bind(cmd, "--top-k", "generate.top_k", "Top-K sampling size");
  c.bind(cmd, "--temperature", "generate.temperature", "Sampling temperature");
  c.bind(cmd, "--flow-steps", "generate.flow_steps", "ODE steps of the flow sampler");
  c.bind(cmd, "--solver", "generate.solver", "euler or midpoint");
  c.bind(cmd, "--flow-cfg", "generate.flow_cfg_scale", "Guidance scale for the flow model");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-music generation at desk scale"};
  app.require_subcommand(1);
  app.set_version_flag("--version", imusic_version());

  // corpus-build
  auto* corpus_cmd = app.add_subcommand("corpus-build", "Synthesize a captioned toy corpus");
  int n_clips = 64;
  std::string corpus_out = "data/corpus";
  std::uint64_t corpus_seed = 0;
  double clip_seconds = 4.0;
  corpus_cmd->add_option("--clips", n_clips, "Number of clips")->capture_default_str();
  corpus_cmd->add_option("--out", corpus_out, "Output directory")->capture_default_str();
  corpus_cmd->add_option("--seed", corpus_seed, "Random seed")->capture_default_str();
  corpus_cmd->add_option("--duration", clip_seconds, "Seconds per clip")->capture_default_str();

  // init
  Common init_c;
  auto* init_cmd = app.add_subcommand("init", "Write untrained weights of a preset into the run directory");
  init_c.add_to(init_cmd);

  // train
  Common train_c;
  std::string module;
  auto* train_cmd = app.add_subcommand("train", "Train one module; resumes from the run directory");
  train_c.add_to(train_cmd);
  train_cmd->add_option("--module", module, "sem-codec, ac-codec, lm or srfm")->required();
  train_c.bind(train_cmd, "--steps", "train.steps", "Optimizer steps for this invocation");
  train_c.bind(train_cmd, "--lr", "train.lr", "Learning rate or 'auto'");
  train_c.bind(train_cmd, "--batch", "train.batch", "Batch size");
  train_c.bind(train_cmd, "--warmup", "train.warmup", "Linear warmup steps");
  train_c.bind(train_cmd, "--stage", "train.stage", "LM stage 1, 2 or 3");
  train_c.bind(train_cmd, "--checkpoint-every", "train.checkpoint_every", "Steps between checkpoints");

  // generate
  Common gen_c;
  std::string caption, out_wav;
  double duration = 4.0;
  bool no_flow = false;
  auto* gen_cmd = app.add_subcommand("generate", "Text to music");
  gen_c.add_to(gen_cmd);
  add_generation_flags(gen_cmd, gen_c);
  gen_cmd->add_option("--caption", caption, "Text prompt")->required();
  gen_cmd->add_option("--duration", duration, "Seconds")->capture_default_str();
  gen_cmd->add_option("--out", out_wav, "Output WAV")->required();
  gen_cmd->add_flag("--no-flow", no_flow, "Decode semantic tokens directly at 24 kHz");

  // continue
  Common cont_c;
  std::string prompt_wav, cont_caption, cont_out;
  double extra = 4.0;
  bool cont_no_flow = false;
  auto* cont_cmd = app.add_subcommand("continue", "Continue an audio prompt");
  cont_c.add_to(cont_cmd);
  add_generation_flags(cont_cmd, cont_c);
  cont_cmd->add_option("--prompt", prompt_wav, "Prompt WAV")->required()->check(CLI::ExistingFile);
  cont_cmd->add_option("--extra", extra, "Seconds to add")->capture_default_str();
  cont_cmd->add_option("--caption", cont_caption, "Optional text prompt");
  cont_cmd->add_option("--out", cont_out, "Output WAV")->required();
  cont_cmd->add_flag("--no-flow", cont_no_flow, "Decode semantic tokens directly at 24 kHz");

  // eval
  Common eval_c;
  std::string generated, reference;
  auto* eval_cmd = app.add_subcommand("eval", "Objective metrics of generated audio against references");
  eval_c.add_to(eval_cmd);
  eval_cmd->add_option("--generated", generated, "Directory of generated WAVs")->required();
  eval_cmd->add_option("--reference", reference, "Directory of reference WAVs")->required();

  // inspect
  std::string ckpt_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print a checkpoint's header and tensor table");
  inspect_cmd->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();

  // sweep
  Common sweep_c;
  std::vector<double> values{3, 5, 7, 10};
  int sweep_clips = 4;
  double sweep_seconds = 2.0;
  std::string sweep_out = "runs/sweep";
  auto* sweep_cmd = app.add_subcommand("sweep", "Guidance-scale sweep with objective metrics");
  sweep_c.add_to(sweep_cmd);
  add_generation_flags(sweep_cmd, sweep_c);
  sweep_cmd->add_option("--values", values, "Guidance values")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--clips", sweep_clips, "Captions per value")->capture_default_str();
  sweep_cmd->add_option("--duration", sweep_seconds, "Seconds per clip")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : IMUSIC_ERR_USAGE;
  }

  try {
    if (*corpus_cmd) {
      char* s = nullptr;
      check(imusic_corpus_build(n_clips, corpus_out.c_str(), corpus_seed, clip_seconds, &s));
      print_owned(s);
    } else if (*init_cmd) {
      ConfigHandle cfg(init_c);
      check(imusic_init_run(cfg.p));
    } else if (*train_cmd) {
      ConfigHandle cfg(train_c);
      char* s = nullptr;
      check(imusic_train(cfg.p, module.c_str(), log_line, nullptr, &s));
      print_owned(s);
    } else if (*gen_cmd) {
      ConfigHandle cfg(gen_c);
      imusic_generator* g = nullptr;
      check(imusic_generator_open(cfg.p, no_flow ? 1 : 0, &g));
      char* s = nullptr;
      const int rc = imusic_generate(g, caption.c_str(), duration, out_wav.c_str(), &s);
      imusic_generator_free(g);
      check(rc);
      print_owned(s);
    } else if (*cont_cmd) {
      ConfigHandle cfg(cont_c);
      imusic_generator* g = nullptr;
      check(imusic_generator_open(cfg.p, cont_no_flow ? 1 : 0, &g));
      char* s = nullptr;
      const int rc = imusic_continue(g, prompt_wav.c_str(), extra, cont_caption.empty() ? nullptr : cont_caption.c_str(),
                                     cont_out.c_str(), &s);
      imusic_generator_free(g);
      check(rc);
      print_owned(s);
    } else if (*eval_cmd) {
      ConfigHandle cfg(eval_c);
      char* s = nullptr;
      check(imusic_eval(cfg.p, generated.c_str(), reference.c_str(), log_line, nullptr, &s));
      print_owned(s);
    } else if (*inspect_cmd) {
      char* s = nullptr;
      check(imusic_inspect(ckpt_path.c_str(), &s));
      print_owned(s);
    } else if (*sweep_cmd) {
      ConfigHandle cfg(sweep_c);
      char* s = nullptr;
      check(imusic_sweep(cfg.p, values.data(), values.size(), sweep_clips, sweep_seconds, sweep_out.c_str(), log_line,
                         nullptr, &s));
      if (s) {
        std::printf("%s", s);
        imusic_string_free(s);
      }
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
