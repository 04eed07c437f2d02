#ifndef CONVCTL_H
#define CONVCTL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum ConvctlStatus {
  CONVCTL_STATUS_OK = 0,
  // A required pointer argument was NULL.
  CONVCTL_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  CONVCTL_STATUS_INVALID_UTF8 = 2,
  CONVCTL_STATUS_IO = 3,
  CONVCTL_STATUS_PARSE = 4,
  // Checksum, version or layout problem in a model archive.
  CONVCTL_STATUS_ARCHIVE = 5,
  CONVCTL_STATUS_UNKNOWN_PRESET = 6,
  CONVCTL_STATUS_UNKNOWN_CONTROL = 7,
  CONVCTL_STATUS_UNKNOWN_BUCKET = 8,
  // Bad feature name or weight.
  CONVCTL_STATUS_CONFIG = 9,
  // Every beam candidate was pruned by a blocking weight.
  CONVCTL_STATUS_BEAM_EXHAUSTED = 10,
  // Input rejected, e.g. an empty message.
  CONVCTL_STATUS_VALIDATION = 11,
  CONVCTL_STATUS_INTERNAL = 12,
  // A Rust panic was caught at the boundary.
  CONVCTL_STATUS_PANIC = 13,
} ConvctlStatus;

// A loaded model.
typedef struct ConvctlModel ConvctlModel;

// One human-to-agent conversation.
typedef struct ConvctlSession ConvctlSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static string.
const char *convctl_version(void);

// Message for the last failed call on this thread, or NULL. Valid until the
// next call into the library from the same thread.
const char *convctl_last_error(void);

// Loads a model archive from `path`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ConvctlStatus convctl_model_load(const char *path, struct ConvctlModel **out);

// Releases a model. NULL is ignored.
//
// # Safety
// `model` must come from `convctl_model_load` and not be freed twice.
void convctl_model_free(struct ConvctlModel *model);

// Starts a session with a built-in preset (or a preset file path).
// `persona` may be NULL; otherwise one persona line per `\n`.
//
// # Safety
// `model` must be a live model handle, strings NUL-terminated, `out`
// writable.
enum ConvctlStatus convctl_session_new(const struct ConvctlModel *model,
                                       const char *preset,
                                       const char *persona,
                                       struct ConvctlSession **out);

// Releases a session. NULL is ignored.
//
// # Safety
// `session` must come from `convctl_session_new` and not be freed twice.
void convctl_session_free(struct ConvctlSession *session);

// Sends one user message and writes the reply as JSON
// (`response`, `diagnostics`, `turn_index`) to `out`. On failure the
// session is unchanged.
//
// # Safety
// `session` must be live, `message` NUL-terminated, `out` writable.
enum ConvctlStatus convctl_session_send(struct ConvctlSession *session,
                                        const char *message,
                                        char **out);

// Sets control `control` to bucket `z`; a negative `z` removes the control.
//
// # Safety
// `session` must be live and `control` NUL-terminated.
enum ConvctlStatus convctl_session_set_z(struct ConvctlSession *session,
                                         const char *control,
                                         int32_t z);

// Sets a decoding weight. `-INFINITY` blocks the feature; NaN and
// `+INFINITY` are rejected.
//
// # Safety
// `session` must be live and `feature` NUL-terminated.
enum ConvctlStatus convctl_session_set_weight(struct ConvctlSession *session,
                                              const char *feature,
                                              double weight);

// Drops a decoding weight.
//
// # Safety
// `session` must be live and `feature` NUL-terminated.
enum ConvctlStatus convctl_session_clear_weight(struct ConvctlSession *session,
                                                const char *feature);

// Writes the whole conversation as a chat-log JSON object to `out`.
//
// # Safety
// `session` must be live and `out` writable.
enum ConvctlStatus convctl_session_transcript(struct ConvctlSession *session, char **out);

// Releases a string returned by the library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void convctl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVCTL_H */
