#ifndef TAP_H
#define TAP_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum TapExtreme {
  TAP_EXTREME_MIN = 0,
  TAP_EXTREME_MAX = 1,
} TapExtreme;

// Result of every fallible call.
typedef enum TapStatus {
  TAP_STATUS_OK = 0,
  // Null pointer, bad UTF-8, or a value the call cannot accept.
  TAP_STATUS_INVALID_ARGUMENT = 1,
  // The proof was checked and rejected.
  TAP_STATUS_VERIFICATION_FAILED = 2,
  // The server refused or failed the request.
  TAP_STATUS_SERVER_ERROR = 3,
  // The bytes are not a well-formed message of the expected kind.
  TAP_STATUS_WIRE_ERROR = 4,
  // A result does not fit the output type.
  TAP_STATUS_OVERFLOW = 5,
  // A Rust panic was caught at the boundary.
  TAP_STATUS_INTERNAL = 6,
} TapStatus;

// Owned byte buffer.
typedef struct TapBuffer TapBuffer;

typedef struct TapServer TapServer;

typedef struct TapVerifier TapVerifier;

typedef struct TapTypeRange {
  uint32_t lo;
  uint32_t hi;
} TapTypeRange;

// Inclusive time and per-attribute type bounds.
typedef struct TapRange {
  uint32_t t_min;
  uint32_t t_max;
  const struct TapTypeRange *types;
  size_t type_count;
} TapRange;

typedef struct TapAggregate {
  uint64_t count;
  uint64_t sum;
  uint64_t sum_squares;
  // NaN when undefined.
  double mean;
  double stddev;
} TapAggregate;

typedef struct TapAuditReport {
  bool passed;
  size_t new_buckets;
  size_t buckets_checked;
  size_t sortedness_checked;
  size_t bounds_checked;
  size_t findings;
} TapAuditReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *tap_last_error(void);

const char *tap_status_name(enum TapStatus status);

const uint8_t *tap_buffer_data(const struct TapBuffer *buf);

size_t tap_buffer_len(const struct TapBuffer *buf);

void tap_buffer_free(struct TapBuffer *buf);

// New in-memory server. `csv` (nullable) holds rows with a
// `Time,ID,<types…>,Value` header; time-0 rows initialize it.
enum TapStatus tap_server_new(const char *schema_toml,
                              const uint8_t *key,
                              const char *csv,
                              struct TapServer **out_server);

// Reopens a server directory written by the `tap` tool.
enum TapStatus tap_server_open(const char *dir, struct TapServer **out_server);

void tap_server_free(struct TapServer *server);

// Appends the CSV's epochs, all later than the current one.
enum TapStatus tap_server_ingest_csv(struct TapServer *server, const char *csv, size_t *out_epochs);

enum TapStatus tap_server_current_epoch(const struct TapServer *server, uint32_t *out_epoch);

enum TapStatus tap_server_digest(const struct TapServer *server,
                                 uint32_t epoch,
                                 uint8_t *out_digest);

// The seed issued to `user` for `epoch`, as handed out on submission.
enum TapStatus tap_server_user_seed(const struct TapServer *server,
                                    const char *user,
                                    uint32_t epoch,
                                    uint8_t *out_seed);

enum TapStatus tap_server_lookup(const struct TapServer *server,
                                 const char *user,
                                 const uint32_t *types,
                                 size_t type_count,
                                 uint32_t epoch,
                                 struct TapBuffer **out_proof);

enum TapStatus tap_server_sum(const struct TapServer *server,
                              const struct TapRange *r,
                              uint32_t at,
                              struct TapBuffer **out_proof);

enum TapStatus tap_server_minmax(const struct TapServer *server,
                                 const struct TapRange *r,
                                 enum TapExtreme mode,
                                 uint32_t at,
                                 struct TapBuffer **out_proof);

// `num/den`-quantile.
enum TapStatus tap_server_quantile(const struct TapServer *server,
                                   const struct TapRange *r,
                                   uint64_t num,
                                   uint64_t den,
                                   uint32_t at,
                                   struct TapBuffer **out_proof);

// Audit proof for the epochs after `from` up to `to`; `has_from = false`
// audits from the empty tree.
enum TapStatus tap_server_audit(const struct TapServer *server,
                                bool has_from,
                                uint32_t from,
                                uint32_t to,
                                struct TapBuffer **out_proof);

enum TapStatus tap_verifier_new(const char *schema_toml, struct TapVerifier **out_verifier);

void tap_verifier_free(struct TapVerifier *v);

// Checks that the proof shows `user`'s row with `value` under `seed`.
enum TapStatus tap_verify_lookup(const struct TapVerifier *v,
                                 const char *user,
                                 const uint32_t *types,
                                 size_t type_count,
                                 uint32_t epoch,
                                 uint64_t value,
                                 const uint8_t *seed,
                                 const uint8_t *proof,
                                 size_t proof_len,
                                 const uint8_t *digest32);

enum TapStatus tap_verify_nonexistence(const struct TapVerifier *v,
                                       const char *user,
                                       const uint32_t *types,
                                       size_t type_count,
                                       uint32_t epoch,
                                       const uint8_t *proof,
                                       size_t proof_len,
                                       const uint8_t *digest32);

enum TapStatus tap_verify_sum(const struct TapVerifier *v,
                              const struct TapRange *r,
                              const uint8_t *proof,
                              size_t proof_len,
                              const uint8_t *digest32,
                              struct TapAggregate *out_result);

enum TapStatus tap_verify_minmax(const struct TapVerifier *v,
                                 const struct TapRange *r,
                                 enum TapExtreme mode,
                                 const uint8_t *proof,
                                 size_t proof_len,
                                 const uint8_t *digest32,
                                 uint64_t *out_value);

enum TapStatus tap_verify_quantile(const struct TapVerifier *v,
                                   const struct TapRange *r,
                                   uint64_t num,
                                   uint64_t den,
                                   const uint8_t *proof,
                                   size_t proof_len,
                                   const uint8_t *digest32,
                                   uint64_t *out_value);

// Audits `from → to` against the given bulletin digests. `old_digest` is
// ignored when `has_from` is false. Returns `VerificationFailed` with the
// report filled in when the audit finds problems.
enum TapStatus tap_verify_audit(const struct TapVerifier *v,
                                bool has_from,
                                uint32_t from,
                                uint32_t to,
                                const uint8_t *old_digest,
                                const uint8_t *new_digest,
                                const uint8_t *proof,
                                size_t proof_len,
                                struct TapAuditReport *out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAP_H */
