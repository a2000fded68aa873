#ifndef SRNN_H
#define SRNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status code returned by every function.
 */
typedef enum SrnnStatus {
  SRNN_STATUS_OK = 0,
  SRNN_STATUS_NULL_POINTER = 1,
  SRNN_STATUS_INVALID_ARGUMENT = 2,
  SRNN_STATUS_IO = 3,
  SRNN_STATUS_CHECKPOINT = 4,
  SRNN_STATUS_PARSE = 5,
  SRNN_STATUS_UNKNOWN_TOKEN = 6,
  SRNN_STATUS_ALPHABET_MISMATCH = 7,
  SRNN_STATUS_INTERNAL = 8,
  SRNN_STATUS_PANIC = 9,
} SrnnStatus;

/**
 * Automaton handle.
 */
typedef struct SrnnDfa SrnnDfa;

/**
 * Trained model handle.
 */
typedef struct SrnnModel SrnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *srnn_last_error_message(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum SrnnStatus srnn_model_load(const char *path, struct SrnnModel **out_model);

/**
 * # Safety
 * `model` must come from [`srnn_model_load`] and not be freed twice.
 */
void srnn_model_free(struct SrnnModel *model);

/**
 * Number of alphabet symbols (token ids `0..n`).
 *
 * # Safety
 * Pointers must be valid.
 */
enum SrnnStatus srnn_model_num_symbols(const struct SrnnModel *model, size_t *out_n);

/**
 * Token id of an alphabet symbol.
 *
 * # Safety
 * Pointers must be valid; `symbol` nul-terminated.
 */
enum SrnnStatus srnn_model_token_id(const struct SrnnModel *model,
                                    const char *symbol,
                                    size_t *out_id);

/**
 * Classifies one sequence. Writes the reject/accept logits to
 * `out_logits[0..2]` and whether the accept logit wins to `out_accept`
 * (either pointer may be null).
 *
 * # Safety
 * `tokens` must hold `len` ids; `out_logits`, if non-null, two doubles.
 */
enum SrnnStatus srnn_model_classify(const struct SrnnModel *model,
                                    const size_t *tokens_ptr,
                                    size_t len,
                                    double *out_logits,
                                    bool *out_accept);

/**
 * Extracts a complete DFA from `model` using the dataset file at `path`.
 *
 * # Safety
 * Pointers must be valid; `path` nul-terminated.
 */
enum SrnnStatus srnn_extract_dfa(const struct SrnnModel *model,
                                 const char *dataset_path,
                                 struct SrnnDfa **out_dfa);

/**
 * Ground-truth automaton of Tomita grammar 1-7.
 *
 * # Safety
 * `out_dfa` must be writable.
 */
enum SrnnStatus srnn_tomita_dfa(uint8_t grammar, struct SrnnDfa **out_dfa);

/**
 * # Safety
 * Pointers must be valid.
 */
enum SrnnStatus srnn_dfa_minimize(const struct SrnnDfa *dfa, struct SrnnDfa **out_dfa);

/**
 * # Safety
 * Pointers must be valid.
 */
enum SrnnStatus srnn_dfa_num_states(const struct SrnnDfa *dfa, size_t *out_n);

/**
 * # Safety
 * `tokens` must hold `len` symbol indices.
 */
enum SrnnStatus srnn_dfa_accepts(const struct SrnnDfa *dfa,
                                 const size_t *tokens_ptr,
                                 size_t len,
                                 bool *out_accept);

/**
 * Graphviz rendering; free the result with [`srnn_string_free`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum SrnnStatus srnn_dfa_to_dot(const struct SrnnDfa *dfa, char **out_dot);

/**
 * Language equivalence of two automata over the same alphabet.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SrnnStatus srnn_dfa_equivalent(const struct SrnnDfa *a,
                                    const struct SrnnDfa *b,
                                    bool *out_equal);

/**
 * # Safety
 * `dfa` must come from this library and not be freed twice.
 */
void srnn_dfa_free(struct SrnnDfa *dfa);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void srnn_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SRNN_H */
