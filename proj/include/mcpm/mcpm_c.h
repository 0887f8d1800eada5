/* C interface to the corrupted-pixel-mining trainer. Every entry point is
 * usable from plain C; errors come back as return codes with a thread-local
 * message. Functions returning pointers yield NULL on failure. */
#ifndef MCPM_MCPM_C_H
#define MCPM_MCPM_C_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  MCPM_OK = 0,
  MCPM_ERR_CONFIG = 1, /* bad arguments, bad config file, schema violation */
  MCPM_ERR_RUNTIME = 2 /* I/O failure, divergence, internal failure */
} mcpm_rc;

/* Library version, e.g. "0.1.0". Static storage, never freed. */
const char* mcpm_version(void);

/* Message for the calling thread's most recent failure; empty string when
 * the last call succeeded. Valid until the thread's next library call. */
const char* mcpm_last_error(void);

/* Frees strings returned by mcpm_config_to_json. NULL is a no-op. */
void mcpm_string_free(char* s);

/* ------------------------------------------------------------------ */
/* experiment configuration                                            */

typedef struct mcpm_config mcpm_config;

/* Parse a config file / JSON text. NULL on failure (see mcpm_last_error). */
mcpm_config* mcpm_config_load(const char* path);
mcpm_config* mcpm_config_parse(const char* json_text, const char* source_name);
void mcpm_config_free(mcpm_config* cfg);

/* Re-derive every section seed from one master seed. */
mcpm_rc mcpm_config_set_seed(mcpm_config* cfg, uint64_t seed);

/* mode is "mcpm", "baseline" or "both". */
mcpm_rc mcpm_config_set_mode(mcpm_config* cfg, const char* mode);

/* Output directory the config carries for commands not given one. */
const char* mcpm_config_out_dir(const mcpm_config* cfg);

/* The resolved configuration as JSON; free with mcpm_string_free. */
char* mcpm_config_to_json(const mcpm_config* cfg);

/* ------------------------------------------------------------------ */
/* commands                                                            */

/* Generate the synthetic dataset container into out_dir. */
mcpm_rc mcpm_run_generate(const mcpm_config* cfg, const char* out_dir);

typedef struct {
  int ran;      /* 0 when the mode excluded this method */
  int diverged; /* training aborted on a non-finite step */
  double miou, dice, hausdorff;
  double mean_weight_clean;     /* mask-weight means by corruption band; */
  double mean_weight_corrupted; /* nan where not applicable */
} mcpm_method_result;

typedef struct {
  mcpm_method_result mcpm;
  mcpm_method_result baseline;
} mcpm_train_result;

/* Train the configured method(s) on the dataset in data_dir, writing
 * histories, metrics and models under out_dir. Divergence returns
 * MCPM_ERR_RUNTIME with the partial outputs on disk and, when result is
 * non-NULL, the per-method detail filled in. */
mcpm_rc mcpm_run_train(const mcpm_config* cfg, const char* data_dir, const char* out_dir,
                       mcpm_train_result* result);

/* Evaluate a saved model on the dataset's test split. Metric outputs are
 * optional; pass NULL to skip any of them. */
mcpm_rc mcpm_run_evaluate(const char* model_path, const char* data_dir, const char* out_dir,
                          double* miou, double* dice, double* hausdorff);

typedef struct {
  int corrupted;        /* the sample's corruption flag */
  uint64_t band_pixels; /* pixels whose label disagrees with the clean one */
  double mean_inside;   /* mean mask weight on band pixels; nan if none */
  double mean_outside;
} mcpm_weights_result;

/* Dump one training sample's weight/loss/prediction/label maps. */
mcpm_rc mcpm_run_weights(const char* model_path, const char* data_dir, int index,
                         const char* out_dir, mcpm_weights_result* result);

/* ------------------------------------------------------------------ */
/* corruption sweep                                                    */

typedef struct mcpm_sweep_spec mcpm_sweep_spec;

mcpm_sweep_spec* mcpm_sweep_load(const char* path);
mcpm_sweep_spec* mcpm_sweep_parse(const char* json_text, const char* source_name);
void mcpm_sweep_free(mcpm_sweep_spec* spec);

/* Replace the spec's seed list. */
mcpm_rc mcpm_sweep_set_seeds(mcpm_sweep_spec* spec, const uint64_t* seeds, size_t count);

/* Run every (r, seed) cell; writes sweep_report.csv and sweep_timing.csv.
 * Failed cells are recorded in the report and do not abort the sweep. */
mcpm_rc mcpm_run_sweep(const mcpm_sweep_spec* spec, const char* out_dir);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MCPM_MCPM_C_H */
