#ifndef LISTCHURN_H
#define LISTCHURN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define LC_MODE_SUFFIX_AWARE 0

#define LC_MODE_NAIVE 1

#define LC_FORMAT_AUTO 0

#define LC_FORMAT_HOSTS 1

#define LC_FORMAT_FILTER_LIST 2

#define LC_FORMAT_DOMAIN_LIST 3

// Result of every fallible call.
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  LC_STATUS_INVALID_UTF8 = 2,
  LC_STATUS_INVALID_ARGUMENT = 3,
  LC_STATUS_INVALID_HOST = 4,
  LC_STATUS_IO = 5,
  LC_STATUS_PANIC = 6,
} LcStatus;

// A sorted set of domain strings.
typedef struct LcDomainSet LcDomainSet;

// A public suffix table.
typedef struct LcSuffixTable LcSuffixTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *lc_version(void);

// Message for the most recent call on this thread if it failed, or NULL.
// Valid until the next call into the library from the same thread.
const char *lc_last_error(void);

// The bundled suffix table, with or without the private section.
//
// # Safety
// `out` must be a valid pointer.
enum LcStatus lc_suffix_table_bundled(bool include_private, struct LcSuffixTable **out);

// Loads a suffix table from a file in public-suffix format.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum LcStatus lc_suffix_table_load(const char *path,
                                   bool include_private,
                                   struct LcSuffixTable **out);

// # Safety
// `table` must come from this library and not be used afterwards. NULL is ignored.
void lc_suffix_table_free(struct LcSuffixTable *table);

// Registrable domain of `host`; the result is freed with [`lc_string_free`].
//
// # Safety
// Pointers must be valid; `host` NUL-terminated.
enum LcStatus lc_registrable_domain(const struct LcSuffixTable *table,
                                    const char *host,
                                    uint32_t mode_code,
                                    char **out);

// # Safety
// `s` must come from this library and not be used afterwards. NULL is ignored.
void lc_string_free(char *s);

// Parses blacklist text into its registrable domains. `format` is one of
// the `LC_FORMAT_*` values; `out_format` (nullable) receives the format used.
//
// # Safety
// Pointers must be valid; `list_text` NUL-terminated.
enum LcStatus lc_blacklist_parse(const struct LcSuffixTable *table,
                                 const char *list_text,
                                 uint32_t format,
                                 uint32_t mode_code,
                                 struct LcDomainSet **out,
                                 uint32_t *out_format);

// Third-party registrable domains of the external scripts in `html`, a
// page of `site_host`. `archive_url` (nullable) is the memento URL, whose
// host is excluded as archive tooling.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum LcStatus lc_page_third_parties(const struct LcSuffixTable *table,
                                    const char *site_host,
                                    const char *html,
                                    const char *archive_url,
                                    uint32_t mode_code,
                                    struct LcDomainSet **out);

// An empty domain set.
struct LcDomainSet *lc_domain_set_new(void);

// Adds `domain` verbatim. Pointers from [`lc_domain_set_get`] are
// invalidated.
//
// # Safety
// `set` must be a valid handle and `domain` NUL-terminated.
enum LcStatus lc_domain_set_insert(struct LcDomainSet *set, const char *domain);

// Number of domains; 0 for NULL.
//
// # Safety
// `set` must be a valid handle or NULL.
size_t lc_domain_set_len(const struct LcDomainSet *set);

// The `index`-th domain in ascending order, or NULL when out of range.
// Owned by the set.
//
// # Safety
// `set` must be a valid handle or NULL.
const char *lc_domain_set_get(const struct LcDomainSet *set, size_t index);

// # Safety
// `set` must be a valid handle, `domain` NUL-terminated and `out` valid.
enum LcStatus lc_domain_set_contains(const struct LcDomainSet *set, const char *domain, bool *out);

// # Safety
// `set` must come from this library and not be used afterwards. NULL is ignored.
void lc_domain_set_free(struct LcDomainSet *set);

// Jaccard similarity of two yearly sets; 0 when both are empty.
//
// # Safety
// Handles must be valid and `out` a valid pointer.
enum LcStatus lc_stability(const struct LcDomainSet *current,
                           const struct LcDomainSet *previous,
                           double *out);

// Share of `current` absent from `history`. An empty `current` gives 0
// with `out_degenerate` (nullable) set.
//
// # Safety
// Handles must be valid and `out` a valid pointer.
enum LcStatus lc_diversity(const struct LcDomainSet *current,
                           const struct LcDomainSet *history,
                           double *out,
                           bool *out_degenerate);

// Signed days from first web sighting to first listing (`YYYY-MM-DD`
// dates), with the first-snapshot rule applied. `out_censored` is nullable.
//
// # Safety
// Strings must be NUL-terminated and `out_days` a valid pointer.
enum LcStatus lc_time_difference(const char *web_first_seen,
                                 const char *list_first_seen,
                                 bool in_first_snapshot,
                                 int64_t *out_days,
                                 bool *out_censored);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LISTCHURN_H */
