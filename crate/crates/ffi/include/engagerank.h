/* C interface to the engagerank influencer-ranking pipeline. */

#ifndef ENGAGERANK_H
#define ENGAGERANK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the nonzero values mirror the CLI exit codes.
 */
typedef enum EngagerankStatus {
  ENGAGERANK_STATUS_OK = 0,
  /**
   * Bad arguments: null pointers, malformed JSON, invalid settings.
   */
  ENGAGERANK_STATUS_USAGE = 1,
  /**
   * Missing or inconsistent data.
   */
  ENGAGERANK_STATUS_DATA = 2,
  /**
   * Numerical failure (non-finite loss, failed gradient check).
   */
  ENGAGERANK_STATUS_NUMERIC = 3,
  /**
   * A bug tripped an internal panic; details in the last-error message.
   */
  ENGAGERANK_STATUS_INTERNAL = 4,
} EngagerankStatus;

/**
 * Opaque trained-model handle (parameters + feature layout).
 */
typedef struct EngagerankModel EngagerankModel;

/**
 * Opaque synthetic-world handle.
 */
typedef struct EngagerankWorld EngagerankWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the most recent error message for this thread into `buf` (NUL
 * terminated, truncated to `cap`). Returns the full message length in
 * bytes, so callers can detect truncation; 0 means no error recorded.
 */
uintptr_t engagerank_last_error(char *buf, uintptr_t cap);

/**
 * Generate a seeded synthetic world. `config_json` is a WorldConfig JSON
 * document; omitted fields take their defaults. Returns null on error.
 */
struct EngagerankWorld *engagerank_world_generate(const char *config_json);

/**
 * Load a previously saved world directory. Returns null on error.
 */
struct EngagerankWorld *engagerank_world_load(const char *dir);

enum EngagerankStatus engagerank_world_save(const struct EngagerankWorld *world, const char *dir);

void engagerank_world_free(struct EngagerankWorld *world);

/**
 * Number of influencers (the length score buffers must have).
 * Returns 0 if `world` is null.
 */
uintptr_t engagerank_world_influencer_count(const struct EngagerankWorld *world);

/**
 * Copy influencer `index`'s id into `buf` (NUL terminated, truncated to
 * `cap`). Returns the id's full length, or 0 if the handle is null or the
 * index is out of range. Index order matches score buffers.
 */
uintptr_t engagerank_world_influencer_id(const struct EngagerankWorld *world,
                                         uintptr_t index,
                                         char *buf,
                                         uintptr_t cap);

/**
 * Train the full model on a world. `run_config_json` is a RunConfig JSON
 * document (its `model` and `train` sections apply; paths are ignored).
 * Returns null on error.
 */
struct EngagerankModel *engagerank_train(const struct EngagerankWorld *world,
                                         const char *run_config_json);

enum EngagerankStatus engagerank_model_save(const struct EngagerankModel *model, const char *path);

/**
 * Load a checkpoint written by `engagerank_model_save` (or the CLI).
 * Returns null on error.
 */
struct EngagerankModel *engagerank_model_load(const char *path);

void engagerank_model_free(struct EngagerankModel *model);

/**
 * Score every influencer on the world's held-out evaluation window. `out`
 * must hold `engagerank_world_influencer_count` doubles; entries follow
 * influencer index order.
 */
enum EngagerankStatus engagerank_score(const struct EngagerankModel *model,
                                       const struct EngagerankWorld *world,
                                       double *out,
                                       uintptr_t len);

/**
 * NDCG@k of the model's ranking against the world's held-out window.
 */
enum EngagerankStatus engagerank_eval_ndcg(const struct EngagerankModel *model,
                                           const struct EngagerankWorld *world,
                                           uintptr_t k,
                                           double *out);

/**
 * Finite-difference check of the full composed gradient on a tiny instance.
 * Writes the max relative error and returns OK iff it is below 1e-4.
 */
enum EngagerankStatus engagerank_gradcheck(double *out_max_rel_err);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENGAGERANK_H */
