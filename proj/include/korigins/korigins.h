#ifndef KORIGINS_KORIGINS_H
#define KORIGINS_KORIGINS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define KO_API __declspec(dllexport)
#else
#define KO_API __attribute__((visibility("default")))
#endif

typedef enum ko_status {
  KO_OK = 0,
  KO_ERR_ARGUMENT = 1,
  KO_ERR_SHAPE = 2,
  KO_ERR_CONFIG = 3,
  KO_ERR_FORMAT = 4,
  KO_ERR_IO = 5,
  KO_ERR_INTERNAL = 6
} ko_status;

typedef enum ko_precision { KO_F64 = 0, KO_F32 = 1 } ko_precision;

/* Message for the most recent failure on the calling thread ("" if none). */
KO_API const char* ko_last_error(void);
KO_API const char* ko_status_name(ko_status status);
KO_API const char* ko_version(void);

/* Copies a NUL-terminated string into buf when it fits. *needed receives
 * the required size including the terminator. */
typedef struct ko_string_out {
  char* buf;
  size_t capacity;
  size_t needed;
} ko_string_out;

/* ---- metrics ---- */

KO_API ko_status ko_hellinger(double mu1, double sigma1, double mu2, double sigma2, double* out);

/* ---- networks ---- */

typedef struct ko_network ko_network;

/* class_mu/class_sigma describe the classes (background first) and are
 * required for K-Origins networks; pass NULL otherwise. */
KO_API ko_status ko_network_build(const char* name, size_t class_count, const double* class_mu,
                                  const double* class_sigma, ko_network** out);
KO_API ko_status ko_network_load_spec(const char* json_path, ko_network** out);
KO_API void ko_network_free(ko_network* net);

KO_API ko_status ko_network_rfl(const ko_network* net, size_t* out);
KO_API ko_status ko_network_param_count(const ko_network* net, size_t* out);
KO_API ko_status ko_network_name(const ko_network* net, ko_string_out* out);
KO_API ko_status ko_network_save_spec(const ko_network* net, const char* json_path);

/* Table of every canonical network with its RFL, parameter count and the
 * reference count where one exists. */
KO_API ko_status ko_param_audit(ko_string_out* out);

/* ---- data ---- */

/* Reads a dataset spec JSON, writes PGMs next to the manifest. */
KO_API ko_status ko_generate(const char* spec_path, const char* manifest_path, size_t* image_count);

/* Class (mu, sigma) pairs recorded in a manifest, background first. With
 * null buffers only *count is written. */
KO_API ko_status ko_manifest_classes(const char* manifest, double* mu, double* sigma, size_t capacity,
                                     size_t* count);

/* ---- training ---- */

typedef struct ko_train_options {
  size_t epochs;
  size_t batch_size;
  double lr_conv;
  double lr_korigins;
  uint64_t seed;
  int shuffle;
  ko_precision precision;
  size_t eval_every;
} ko_train_options;

KO_API void ko_train_options_default(ko_train_options* options);

typedef void (*ko_epoch_callback)(size_t epoch, double mean_loss, double val_macc, void* user);
typedef void (*ko_log_callback)(const char* line, void* user);

/* Trains `net` (reinitialized from options->seed) on a manifest and writes
 * model.korg, network.json and history.csv into out_dir. val_manifest may
 * be NULL. */
KO_API ko_status ko_train(const ko_network* net, const char* train_manifest, const char* val_manifest,
                          const ko_train_options* options, const char* out_dir, ko_epoch_callback on_epoch,
                          void* user, double* final_macc);

/* network_json may be NULL: network.json next to the checkpoint is used. */
KO_API ko_status ko_eval(const char* checkpoint_path, const char* network_json, const char* manifest,
                         ko_precision precision, double* macc);

/* ---- sweeps ---- */

typedef struct ko_sweep_options {
  size_t image_count;
  size_t height;
  size_t width;
  size_t epochs;
  size_t batch_size;
  double lr_korigins;
  uint64_t seed;
  ko_precision precision;
  size_t eval_every;
  const char* networks; /* comma list or NULL for all */
  const char* columns;  /* comma list of ratios / delta mu, or NULL */
  const char* rows;     /* comma list of delta sigma, or NULL */
} ko_sweep_options;

KO_API void ko_sweep_options_default(ko_sweep_options* options);

KO_API ko_status ko_sweep_rfl(int noise, const ko_sweep_options* options, const char* out_dir,
                              ko_log_callback log, void* user);
/* problem: "detect" or "tracer"; size: "small" or "large". */
KO_API ko_status ko_sweep_hd(const char* problem, const char* size, const ko_sweep_options* options,
                             const char* out_dir, ko_log_callback log, void* user);

/* Regenerates each recorded cell's validation set from its seed and
 * re-scores its checkpoint. *mismatches counts cells whose MAcc differs. */
KO_API ko_status ko_sweep_verify(const char* sweep_dir, size_t* cells, size_t* mismatches,
                                 ko_log_callback log, void* user);

#ifdef __cplusplus
}
#endif

#endif
