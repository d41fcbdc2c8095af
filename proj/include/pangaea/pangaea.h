#ifndef PANGAEA_H
#define PANGAEA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define PG_API __declspec(dllexport)
#else
#define PG_API __attribute__((visibility("default")))
#endif

/* One code per library error kind, plus argument and internal failures. */
typedef enum pg_status {
  PG_OK = 0,
  PG_ERR_DIMENSION = 1,
  PG_ERR_CONTRACT = 2,
  PG_ERR_CONFIG = 3,
  PG_ERR_CAPACITY = 4,
  PG_ERR_DOMAIN = 5,
  PG_ERR_EVALUATION = 6,
  PG_ERR_IMPUTATION = 7,
  PG_ERR_DEGENERATE = 8,
  PG_ERR_UNDEFINED_METRIC = 9,
  PG_ERR_FIT = 10,
  PG_ERR_PARSE = 11,
  PG_ERR_IO = 12,
  PG_ERR_FORMAT = 13,
  PG_ERR_VERSION = 14,
  PG_ERR_TRUNCATED = 15,
  PG_ERR_CHECKSUM = 16,
  PG_ERR_SHAPE = 17,
  PG_ERR_ARGUMENT = 18,
  PG_ERR_INTERNAL = 19
} pg_status;

typedef struct pg_model pg_model;

PG_API const char* pg_version(void);
PG_API const char* pg_status_name(pg_status status);
/* Message of the last failure on the calling thread; "" after success. */
PG_API const char* pg_last_error(void);

/* JSON request {"command": ..., ...}; on success *result holds a JSON string
   to release with pg_string_free. */
PG_API pg_status pg_run_job(const char* request_json, char** result);
PG_API void pg_string_free(char* s);

/* config_json may be NULL for the default desk configuration. */
PG_API pg_status pg_model_create(const char* config_json, uint64_t seed, pg_model** out);
PG_API pg_status pg_model_load(const char* path, pg_model** out);
PG_API pg_status pg_model_save(const pg_model* model, const char* path);
PG_API void pg_model_free(pg_model* model);
PG_API pg_status pg_model_param_count(const pg_model* model, size_t* count);
/* Encodes one sample and returns hidden states [rows x cols]. With out == NULL
   only rows and cols are filled. */
PG_API pg_status pg_model_forward(const pg_model* model, const char* modality,
                                  const double* values, const size_t* shape, size_t rank,
                                  uint64_t seed, double* out, size_t capacity, size_t* rows,
                                  size_t* cols);

PG_API pg_status pg_encode_count(const char* modality, const double* values, const size_t* shape,
                                 size_t rank, uint64_t seed, size_t vocab_size, size_t* count);
PG_API pg_status pg_fit_scaling(const double* x, const double* y, size_t n, double* p, double* c,
                                int* boundary);
/* name: acc, f1, f1_weighted, auc, mse, mae, rmse. */
PG_API pg_status pg_metric(const char* name, const double* y, const double* y_hat, size_t n,
                           double* value);
PG_API pg_status pg_improvement(double x, double x0, int higher_is_better, double* value);
PG_API pg_status pg_lr_at(size_t step, size_t total_steps, double warmup_ratio, size_t cycles,
                          double base_lr, double* lr);

#ifdef __cplusplus
}
#endif

#endif
