#ifndef MEETSCHED_H
#define MEETSCHED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every exported call.
 */
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_ARGUMENT = 1,
  MS_STATUS_INVALID_UTF8 = 2,
  MS_STATUS_INVALID_JSON = 3,
  MS_STATUS_NOT_FOUND = 4,
  MS_STATUS_CONFLICT = 5,
  MS_STATUS_INVALID = 6,
  MS_STATUS_IO = 7,
  MS_STATUS_CHECK_FAILED = 8,
  MS_STATUS_INTERNAL = 9,
} MsStatus;

/**
 * Trained ballot-response classifier.
 */
typedef struct MsClassifier MsClassifier;

/**
 * Worker view of a saved agent: claim, answer and act on tasks.
 */
typedef struct MsDesk MsDesk;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *ms_version(void);

/**
 * Copies the calling thread's last error message into `buf` (always
 * NUL-terminated when `len > 0`) and returns the full message length.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t ms_last_error(char *buf, size_t len);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void ms_string_free(char *s);

/**
 * The classifier trained on the bundled synthetic corpus.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MsStatus ms_classifier_default(struct MsClassifier **out);

/**
 * Loads a model saved by `meetsched train-classifier`.
 *
 * # Safety
 * `model_json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum MsStatus ms_classifier_from_json(const char *model_json, struct MsClassifier **out);

/**
 * Classifies a ballot reply against a JSON array of options. Writes the
 * decision (per-option probabilities and selections) as JSON.
 *
 * # Safety
 * `clf` must be a live handle; string arguments NUL-terminated; `out` valid.
 */
enum MsStatus ms_classifier_classify(const struct MsClassifier *clf,
                                     const char *response,
                                     const char *options_json,
                                     char **out);

/**
 * # Safety
 * `clf` must come from this library and not have been freed. Null is ignored.
 */
void ms_classifier_free(struct MsClassifier *clf);

/**
 * Opens a state directory written by `meetsched simulate` or `serve`.
 * Changes made through the handle are saved back to it.
 *
 * # Safety
 * `state_dir` must be NUL-terminated; `out` valid.
 */
enum MsStatus ms_desk_open(const char *state_dir, struct MsDesk **out);

/**
 * Claims the next task of `tier` ("micro" or "macro"). Writes the task as
 * JSON, or null when the queue is empty.
 *
 * # Safety
 * `desk` must be a live handle; strings NUL-terminated; `out` valid.
 */
enum MsStatus ms_desk_claim_next(const struct MsDesk *desk,
                                 const char *worker,
                                 const char *tier_name,
                                 char **out);

/**
 * Submits a microtask answer (`TaskOutput` JSON).
 *
 * # Safety
 * `desk` must be a live handle; strings NUL-terminated; `out` valid.
 */
enum MsStatus ms_desk_submit(const struct MsDesk *desk,
                             const char *task_id,
                             const char *worker,
                             const char *output_json,
                             char **out);

/**
 * Presses "I can't answer" on a claimed microtask.
 *
 * # Safety
 * `desk` must be a live handle; strings NUL-terminated; `out` valid.
 */
enum MsStatus ms_desk_cant_answer(const struct MsDesk *desk,
                                  const char *task_id,
                                  const char *worker,
                                  char **out);

/**
 * Executes an expert action (`MacroAction` JSON) on a claimed macrotask.
 *
 * # Safety
 * `desk` must be a live handle; strings NUL-terminated; `out` valid.
 */
enum MsStatus ms_desk_macro_action(const struct MsDesk *desk,
                                   const char *task_id,
                                   const char *worker,
                                   const char *action_json,
                                   char **out);

/**
 * Writes one request (state, escalations, invitation) as JSON.
 *
 * # Safety
 * `desk` must be a live handle; strings NUL-terminated; `out` valid.
 */
enum MsStatus ms_desk_request(const struct MsDesk *desk, const char *request_id, char **out);

/**
 * # Safety
 * `desk` must come from this library and not have been freed. Null is ignored.
 */
void ms_desk_free(struct MsDesk *desk);

/**
 * Runs a catalog scenario with scripted workers; writes the run metrics as
 * JSON. When `out_dir` is non-null the run's files are exported there.
 *
 * # Safety
 * `scenario` must be NUL-terminated; `out_dir` NUL-terminated or null; `out` valid.
 */
enum MsStatus ms_simulate(const char *scenario, uint64_t seed, const char *out_dir, char **out);

/**
 * Renders an `Invitation` (JSON) as an iCalendar document.
 *
 * # Safety
 * `invitation_json` must be NUL-terminated; `out` valid.
 */
enum MsStatus ms_ics_render(const char *invitation_json, char **out);

/**
 * Parses an iCalendar document into `Invitation` JSON.
 *
 * # Safety
 * `ics` must be NUL-terminated; `out` valid.
 */
enum MsStatus ms_ics_parse(const char *ics, char **out);

/**
 * Runs one acceptance check by name (as accepted by `meetsched check`).
 * The report is written even when the check fails, in which case the
 * status is `CheckFailed`.
 *
 * # Safety
 * `name` must be NUL-terminated; `out` valid.
 */
enum MsStatus ms_check(const char *name, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEETSCHED_H */
