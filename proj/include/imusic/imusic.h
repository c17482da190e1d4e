#ifndef IMUSIC_IMUSIC_H
#define IMUSIC_IMUSIC_H

/* C interface to the library. Every call returns IMUSIC_OK or an error
 * code; imusic_last_error() then holds a message for the calling thread.
 * Strings returned through char** are owned by the caller and released
 * with imusic_string_free(). */

#include <stddef.h>
#include <stdint.h>

#if defined(IMUSIC_BUILDING_LIBRARY)
#define IMUSIC_API __attribute__((visibility("default")))
#else
#define IMUSIC_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum {
  IMUSIC_OK = 0,
  IMUSIC_ERR_USAGE = 1,
  IMUSIC_ERR_DATA = 2,
  IMUSIC_ERR_NUMERIC = 3,
  IMUSIC_ERR_INTERNAL = 4
};

typedef struct imusic_config imusic_config;
typedef struct imusic_generator imusic_generator;

/* Progress lines from long-running calls; may be NULL. */
typedef void (*imusic_log_fn)(const char* line, void* user);

IMUSIC_API const char* imusic_last_error(void);
IMUSIC_API void imusic_string_free(char* s);
IMUSIC_API const char* imusic_version(void);

/* Run configuration ("section.key" addressed). */
IMUSIC_API int imusic_config_new(imusic_config** out);
IMUSIC_API void imusic_config_free(imusic_config* cfg);
IMUSIC_API int imusic_config_load(imusic_config* cfg, const char* path);
IMUSIC_API int imusic_config_set(imusic_config* cfg, const char* key, const char* value);
IMUSIC_API int imusic_config_get(const imusic_config* cfg, const char* key, char** out);
IMUSIC_API int imusic_config_dump(const imusic_config* cfg, char** out);

/* Synthetic corpus: <out_dir>/master, <out_dir>/view24k, manifest.jsonl. */
IMUSIC_API int imusic_corpus_build(int n_clips, const char* out_dir, uint64_t seed, double duration_s,
                                   char** summary_json);

/* Writes untrained weights of the configured preset into paths.run. */
IMUSIC_API int imusic_init_run(const imusic_config* cfg);

/* module: "sem-codec", "ac-codec", "lm" or "srfm". */
IMUSIC_API int imusic_train(const imusic_config* cfg, const char* module, imusic_log_fn log, void* user,
                            char** summary_json);

/* Loads the models of paths.run. no_flow selects the 24 kHz semantic decoder
 * path; otherwise output is 48 kHz through the flow model. Generation
 * settings (generate.*, seed.seed) are read from cfg at open time. */
IMUSIC_API int imusic_generator_open(const imusic_config* cfg, int no_flow, imusic_generator** out);
IMUSIC_API void imusic_generator_free(imusic_generator* gen);
IMUSIC_API int imusic_generate(imusic_generator* gen, const char* caption, double duration_s, const char* out_wav,
                               char** info_json);
/* caption may be NULL. */
IMUSIC_API int imusic_continue(imusic_generator* gen, const char* prompt_wav, double extra_s, const char* caption,
                               const char* out_wav, char** info_json);

/* Compares two directories of WAV files with the corpus evaluator (trained
 * on first use and cached as paths.run/evaluator.imck). */
IMUSIC_API int imusic_eval(const imusic_config* cfg, const char* generated_dir, const char* reference_dir,
                           imusic_log_fn log, void* user, char** report_json);

/* Header, metadata and tensor table of a checkpoint as JSON. */
IMUSIC_API int imusic_inspect(const char* checkpoint_path, char** out_json);

/* Guidance sweep; returns the CSV written to <out_dir>/sweep.csv. */
IMUSIC_API int imusic_sweep(const imusic_config* cfg, const double* values, size_t n_values, int clips,
                            double duration_s, const char* out_dir, imusic_log_fn log, void* user, char** out_csv);

#ifdef __cplusplus
}
#endif

#endif
