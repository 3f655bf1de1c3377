#include <stdio.h>
#include <string.h>

#include "tap.h"

#define CHECK(call)                                                            \
  do {                                                                         \
    TapStatus s_ = (call);                                                     \
    if (s_ != TAP_STATUS_OK) {                                                 \
      fprintf(stderr, "%s: %s (%s)\n", #call, tap_status_name(s_),             \
              tap_last_error());                                               \
      return 1;                                                                \
    }                                                                          \
  } while (0)

static const char *SCHEMA =
    "[[types]]\nname = \"Type\"\ncodes = { residential = 0, industrial = 1 }\n";

static const char *CSV = "Time,ID,Type,Value\n"
                         "0,Alice,residential,11\n0,Bob,residential,24\n"
                         "0,Carol,residential,13\n1,Alice,residential,19\n"
                         "1,Bob,residential,26\n1,Carol,residential,27\n"
                         "1,Dave,residential,26\n1,Erin,industrial,36\n";

int main(void) {
  uint8_t key[32];
  memset(key, 7, sizeof key);
  TapServer *server = NULL;
  TapVerifier *verifier = NULL;
  CHECK(tap_server_new(SCHEMA, key, CSV, &server));
  CHECK(tap_verifier_new(SCHEMA, &verifier));

  uint8_t digest[32];
  CHECK(tap_server_digest(server, 1, digest));

  TapTypeRange types[1] = {{0, 1}};
  TapRange range = {0, 1, types, 1};
  TapBuffer *proof = NULL;
  CHECK(tap_server_sum(server, &range, 1, &proof));
  TapAggregate agg;
  CHECK(tap_verify_sum(verifier, &range, tap_buffer_data(proof),
                       tap_buffer_len(proof), digest, &agg));
  printf("count=%llu sum=%llu sum_squares=%llu mean=%.2f\n",
         (unsigned long long)agg.count, (unsigned long long)agg.sum,
         (unsigned long long)agg.sum_squares, agg.mean);
  tap_buffer_free(proof);

  uint32_t t = 0;
  TapBuffer *lookup = NULL;
  uint8_t seed[32];
  CHECK(tap_server_user_seed(server, "Bob", 1, seed));
  CHECK(tap_server_lookup(server, "Bob", &t, 1, 1, &lookup));
  TapStatus forged =
      tap_verify_lookup(verifier, "Bob", &t, 1, 1, 99, seed,
                        tap_buffer_data(lookup), tap_buffer_len(lookup), digest);
  tap_buffer_free(lookup);
  if (forged != TAP_STATUS_VERIFICATION_FAILED) {
    fprintf(stderr, "wrong value accepted\n");
    return 1;
  }

  tap_verifier_free(verifier);
  tap_server_free(server);
  return 0;
}
