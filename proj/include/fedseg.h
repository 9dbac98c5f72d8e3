/* C interface to the federated segmentation core. All functions return a
 * status code; details for the most recent failure on the calling thread
 * are available from fedseg_last_error(). Strings returned through char**
 * out-parameters are owned by the caller and released with
 * fedseg_string_free(). Config arguments take the JSON run-config text
 * documented in the README. */
#ifndef FEDSEG_H
#define FEDSEG_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fedseg_status {
  FEDSEG_OK = 0,
  FEDSEG_ERROR_VALIDATION = 2, /* bad config, arguments or shapes */
  FEDSEG_ERROR_RUNTIME = 3,    /* training divergence, internal failures */
  FEDSEG_ERROR_IO = 4          /* filesystem or codec failures */
} fedseg_status;

const char* fedseg_version(void);

/* Message for the last failure on this thread; never NULL. */
const char* fedseg_last_error(void);

void fedseg_string_free(char* s);

/* ------------------------------------------------------------------ */
/* Model handle                                                        */
/* ------------------------------------------------------------------ */

typedef struct fedseg_model fedseg_model;

/* Builds a freshly initialized model from the config's "unet" section. */
fedseg_status fedseg_model_build(const char* config_json,
                                 fedseg_model** out_model);

/* Builds the model from the config, then loads checkpoint weights. */
fedseg_status fedseg_model_open(const char* config_json,
                                const char* checkpoint_path,
                                fedseg_model** out_model);

fedseg_status fedseg_model_save(const fedseg_model* model,
                                const char* checkpoint_path);

void fedseg_model_free(fedseg_model* model);

fedseg_status fedseg_model_param_counts(const fedseg_model* model,
                                        uint64_t* total, uint64_t* trainable,
                                        uint64_t* non_trainable);

/* format: "table" or "csv". */
fedseg_status fedseg_model_summary(const fedseg_model* model,
                                   const char* format, char** out_text);

/* ------------------------------------------------------------------ */
/* Batch operations                                                    */
/* ------------------------------------------------------------------ */

/* Writes PNG image/mask pairs plus manifest.jsonl under out_dir. Refuses
 * to overwrite an existing manifest unless force is nonzero. */
fedseg_status fedseg_generate_synthetic(const char* out_dir,
                                        int32_t train_count,
                                        int32_t test_count, int32_t height,
                                        int32_t width, uint64_t seed,
                                        int32_t force);

/* Runs federated training; writes checkpoint.fseg, config.json,
 * roundlog.csv, metrics.csv (and stats.json when feature-wise
 * normalization is on) under out_dir. out_dir may be NULL to use
 * paths.out_dir from the config. On divergence the completed rounds are
 * still written to roundlog.csv. */
fedseg_status fedseg_train(const char* config_json, const char* out_dir);

/* Evaluates a checkpoint on one manifest split. manifest_path may be NULL
 * to use paths.manifest from the config. Writes a metrics CSV to
 * out_csv_path when given; returns the CSV text via out_csv when given. */
fedseg_status fedseg_evaluate(const char* config_json,
                              const char* checkpoint_path,
                              const char* manifest_path, const char* split,
                              const char* label, const char* out_csv_path,
                              char** out_csv);

/* aggregators and seeds are comma-separated lists, e.g. "mean,dpf,pqep"
 * and "1,2,3". One full training run per pair; the CSV has one row per
 * run plus a mean row per aggregator. */
fedseg_status fedseg_compare_aggregators(const char* config_json,
                                         const char* aggregators,
                                         const char* seeds,
                                         const char* out_csv_path,
                                         char** out_csv);

/* Predicts masks for a split and writes the bounding-box crop of the
 * largest connected component per image, plus a crops.csv report. */
fedseg_status fedseg_export_crops(const char* config_json,
                                  const char* checkpoint_path,
                                  const char* manifest_path, const char* split,
                                  const char* out_dir, char** out_report);

#ifdef __cplusplus
}
#endif

#endif /* FEDSEG_H */
