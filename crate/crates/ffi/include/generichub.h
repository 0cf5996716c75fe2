#ifndef GENERICHUB_H
#define GENERICHUB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of an FFI call.
 */
typedef enum GhStatus {
  GH_STATUS_OK = 0,
  /**
   * A required pointer was null or a string was not UTF-8.
   */
  GH_STATUS_NULL_OR_INVALID_STRING = 1,
  /**
   * Bad argument, descriptor, rule, template or range (HTTP 400).
   */
  GH_STATUS_PRECONDITION = 2,
  /**
   * Unknown device, subscription, rule or blob (HTTP 404).
   */
  GH_STATUS_NOT_FOUND = 3,
  /**
   * Duplicate id or rule, or an already-existing object (HTTP 409).
   */
  GH_STATUS_CONFLICT = 4,
  /**
   * An effect adapter or store failed (HTTP 502).
   */
  GH_STATUS_UPSTREAM = 5,
  /**
   * The platform is not running (HTTP 503).
   */
  GH_STATUS_UNAVAILABLE = 6,
  /**
   * A panic was caught at the boundary.
   */
  GH_STATUS_INTERNAL = 7,
} GhStatus;

/**
 * Opaque hub handle.
 */
typedef struct GhHub GhHub;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Starts a hub from a JSON configuration (same keys as the config file).
 *
 * # Safety
 * `config_json` must be a valid NUL-terminated string; `out` must be
 * writable. On success `*out` receives a handle owned by the caller.
 */
enum GhStatus gh_hub_start(const char *config_json, struct GhHub **out);

/**
 * Stops the platform: publishes `platformStopped`, ends subscriptions and
 * snapshots the registry. Repeated calls succeed.
 *
 * # Safety
 * `hub` must be a live handle.
 */
enum GhStatus gh_hub_stop(const struct GhHub *hub);

/**
 * Stops (if needed) and releases a hub. Null is ignored.
 *
 * # Safety
 * `hub` must be null or a live handle; it is invalid afterwards.
 */
void gh_hub_free(struct GhHub *hub);

/**
 * Registers a device from a JSON descriptor `{"id","kind","name","location"}`.
 *
 * # Safety
 * `hub` must be a live handle; `descriptor_json` a valid string.
 */
enum GhStatus gh_register_device(const struct GhHub *hub, const char *descriptor_json);

/**
 * # Safety
 * `hub` must be a live handle; `device_id` a valid string.
 */
enum GhStatus gh_disconnect_device(const struct GhHub *hub, const char *device_id);

/**
 * Drives a simulated door sensor. Setting the current state publishes
 * nothing.
 *
 * # Safety
 * `hub` must be a live handle; `device_id` a valid string.
 */
enum GhStatus gh_sim_door(const struct GhHub *hub, const char *device_id, bool open);

/**
 * Emits a reading from a simulated temperature or humidity sensor.
 *
 * # Safety
 * `hub` must be a live handle; `device_id` a valid string.
 */
enum GhStatus gh_sim_sample(const struct GhHub *hub, const char *device_id, double value);

/**
 * WatchEvent. Either filter may be null to match everything.
 *
 * # Safety
 * `hub` must be a live handle; filters null or valid strings; `out_sub_id`
 * writable. Free the returned id with `gh_string_free`.
 */
enum GhStatus gh_watch(const struct GhHub *hub,
                       const char *device_id,
                       const char *event_name,
                       char **out_sub_id);

/**
 * GetNewEvent: blocks up to `timeout_ms` and writes
 * `{"events":[...],"overflowed":bool}`.
 *
 * # Safety
 * `hub` must be a live handle; `sub_id` a valid string; `out_json` writable.
 */
enum GhStatus gh_get_new_event(const struct GhHub *hub,
                               const char *sub_id,
                               uint64_t timeout_ms,
                               uint32_t max_batch,
                               char **out_json);

/**
 * GetImage: captures a PNG and writes its blob reference
 * `{"id","mime","sizeBytes","sha256"}`.
 *
 * # Safety
 * `hub` must be a live handle; `camera_id` a valid string; `out_json` writable.
 */
enum GhStatus gh_get_image(const struct GhHub *hub, const char *camera_id, char **out_json);

/**
 * Creates a rule from its JSON form and writes the new rule id.
 *
 * # Safety
 * `hub` must be a live handle; `rule_json` a valid string; `out_rule_id`
 * writable.
 */
enum GhStatus gh_create_rule(const struct GhHub *hub, const char *rule_json, char **out_rule_id);

/**
 * Writes the registered devices as a JSON array.
 *
 * # Safety
 * `hub` must be a live handle; `out_json` writable.
 */
enum GhStatus gh_list_devices(const struct GhHub *hub, char **out_json);

/**
 * Monthly aggregates for `metric` ("temperature" or "humidity") over the
 * inclusive `YYYY-MM` range, as a JSON array. Waits briefly for queued
 * samples to be ingested first.
 *
 * # Safety
 * `hub` must be a live handle; strings valid; `out_json` writable.
 */
enum GhStatus gh_monthly_averages(const struct GhHub *hub,
                                  const char *metric,
                                  const char *from,
                                  const char *to,
                                  char **out_json);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void gh_string_free(char *s);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *gh_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENERICHUB_H */
