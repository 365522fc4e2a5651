#ifndef SETCHOICE_H
#define SETCHOICE_H

#include <stddef.h>
#include <stdint.h>

#define SETCHOICE_OK 0

#define SETCHOICE_ERR_NULL 1

#define SETCHOICE_ERR_UTF8 2

#define SETCHOICE_ERR_SHAPE 3

#define SETCHOICE_ERR_STATE 4

#define SETCHOICE_ERR_NUMERIC 5

#define SETCHOICE_ERR_VALIDATION 6

#define SETCHOICE_ERR_DOMAIN 7

#define SETCHOICE_ERR_CALIBRATION 8

#define SETCHOICE_ERR_UNDEFINED 9

#define SETCHOICE_ERR_PARSE 10

#define SETCHOICE_ERR_CONFIG 11

#define SETCHOICE_ERR_IO 12

#define SETCHOICE_ERR_BUFFER 13

#define SETCHOICE_ERR_PANIC 14

// A dataset of choice tasks.
typedef struct SetchoiceDataset SetchoiceDataset;

// A trained model.
typedef struct SetchoiceModel SetchoiceModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the calling thread's last failure, or NULL after a success.
// The pointer stays valid until the thread's next call into this library.
const char *setchoice_last_error(void);

// Loads a checkpoint written by `setchoice_model_save` or the CLI.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t setchoice_model_load(const char *path, struct SetchoiceModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
int32_t setchoice_model_save(const struct SetchoiceModel *model, const char *path);

// Releases a model; NULL is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void setchoice_model_free(struct SetchoiceModel *model);

// Copies the model's name (e.g. "feta") into `buffer`.
//
// # Safety
// `model` must be a live handle; `buffer` must hold `capacity` bytes.
int32_t setchoice_model_name(const struct SetchoiceModel *model,
                             char *buffer,
                             size_t capacity,
                             size_t *needed);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
int32_t setchoice_model_threshold(const struct SetchoiceModel *model, double *out);

// # Safety
// `model` must be a live handle.
int32_t setchoice_model_set_threshold(struct SetchoiceModel *model, double threshold);

// Writes one utility per object into `scores` (length `n`).
//
// # Safety
// `objects` must hold `n * d` doubles and `scores` room for `n`.
int32_t setchoice_model_scores(const struct SetchoiceModel *model,
                               const double *objects,
                               size_t n,
                               size_t d,
                               double *scores);

// Writes 1 for each chosen object and 0 otherwise into `chosen` (length `n`).
//
// # Safety
// `objects` must hold `n * d` doubles and `chosen` room for `n` bytes.
int32_t setchoice_model_choose(const struct SetchoiceModel *model,
                               const double *objects,
                               size_t n,
                               size_t d,
                               uint8_t *chosen);

// Index of the single best object.
//
// # Safety
// `objects` must hold `n * d` doubles and `index` be a valid pointer.
int32_t setchoice_model_discrete_choose(const struct SetchoiceModel *model,
                                        const double *objects,
                                        size_t n,
                                        size_t d,
                                        size_t *index);

// Loads a dataset file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t setchoice_dataset_load(const char *path, struct SetchoiceDataset **out);

// Generates a synthetic dataset from a JSON generator spec, e.g.
// `{"family":"pareto","instances":100,"task_size":8,"dim":2,"seed":1}`.
//
// # Safety
// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
int32_t setchoice_dataset_generate(const char *spec_json, struct SetchoiceDataset **out);

// # Safety
// `dataset` must be a live handle and `out` a valid pointer.
int32_t setchoice_dataset_len(const struct SetchoiceDataset *dataset, size_t *out);

// Releases a dataset; NULL is ignored.
//
// # Safety
// `dataset` must come from this library and not be used afterwards.
void setchoice_dataset_free(struct SetchoiceDataset *dataset);

// Trains and calibrates a model on a whole dataset. `config_toml` holds the
// `[model]`, `[train]` and `[cv]` sections of an experiment config; NULL
// means all defaults (a FETA model).
//
// # Safety
// `dataset` must be a live handle, `config_toml` NULL or a NUL-terminated
// string, and `out` a valid pointer.
int32_t setchoice_fit(const struct SetchoiceDataset *dataset,
                      const char *config_toml,
                      struct SetchoiceModel **out);

// Copies the metric suite of `model` on `dataset` as a JSON object.
//
// # Safety
// Handles must be live; `buffer` must hold `capacity` bytes.
int32_t setchoice_evaluate(const struct SetchoiceModel *model,
                           const struct SetchoiceDataset *dataset,
                           char *buffer,
                           size_t capacity,
                           size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SETCHOICE_H */
