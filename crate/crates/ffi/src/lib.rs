//! C ABI over the hub.
//!
//! Conventions:
//! - Every fallible call returns a [`GhStatus`]. On failure, the message is
//!   kept per thread and readable through [`gh_last_error_message`].
//! - Structured results are JSON strings in the HTTP API's wire form,
//!   returned through `out` pointers. Release them with [`gh_string_free`].
//! - A [`GhHub`] is an opaque handle from [`gh_hub_start`], released with
//!   [`gh_hub_free`]. It may be shared between threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use generichub::config::HubConfig;
use generichub::error::{ErrorClass, HubError};
use generichub::hub::Hub;
use generichub::kernel::SubscriptionFilter;
use generichub::model::{validate_descriptor, DescriptorDraft, DeviceId};
use generichub::rules::RuleSpec;
use generichub::telemetry::{Metric, YearMonth};
use serde::Serialize;

/// Opaque hub handle.
pub struct GhHub {
    hub: Hub,
}

/// Result of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GhStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    NullOrInvalidString = 1,
    /// Bad argument, descriptor, rule, template or range (HTTP 400).
    Precondition = 2,
    /// Unknown device, subscription, rule or blob (HTTP 404).
    NotFound = 3,
    /// Duplicate id or rule, or an already-existing object (HTTP 409).
    Conflict = 4,
    /// An effect adapter or store failed (HTTP 502).
    Upstream = 5,
    /// The platform is not running (HTTP 503).
    Unavailable = 6,
    /// A panic was caught at the boundary.
    Internal = 7,
}

impl From<&HubError> for GhStatus {
    fn from(e: &HubError) -> Self {
        match e.class() {
            ErrorClass::Precondition => GhStatus::Precondition,
            ErrorClass::NotFound => GhStatus::NotFound,
            ErrorClass::Conflict => GhStatus::Conflict,
            ErrorClass::Upstream => GhStatus::Upstream,
            ErrorClass::Unavailable => GhStatus::Unavailable,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

enum Failure {
    Arg(String),
    Hub(HubError),
}

impl From<HubError> for Failure {
    fn from(e: HubError) -> Self {
        Failure::Hub(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `f`, recording any failure (or panic) for `gh_last_error_message`.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> GhStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GhStatus::Ok,
        Ok(Err(Failure::Arg(msg))) => {
            set_last_error(msg);
            GhStatus::NullOrInvalidString
        }
        Ok(Err(Failure::Hub(e))) => {
            set_last_error(format!("{}: {e}", e.code()));
            GhStatus::from(&e)
        }
        Err(_) => {
            set_last_error("internal error".into());
            GhStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Arg(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{name} is not UTF-8")))
}

/// # Safety
/// As [`str_arg`]; null maps to `None`.
unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

fn device_id(s: &str) -> FfiResult<DeviceId> {
    s.parse()
        .map_err(|_| Failure::Hub(HubError::UnknownDevice(s.to_owned())))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> FfiResult<T> {
    serde_json::from_str(text).map_err(|e| Failure::Hub(HubError::InvalidArgument(e.to_string())))
}

/// # Safety
/// `hub` must be null or a live handle from `gh_hub_start`.
unsafe fn hub_ref<'a>(hub: *const GhHub) -> FfiResult<&'a Hub> {
    hub.as_ref()
        .map(|h| &h.hub)
        .ok_or_else(|| Failure::Arg("hub is null".into()))
}

/// # Safety
/// `out` must be null or writable.
unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Arg("out is null".into()));
    }
    let c = CString::new(s).map_err(|_| Failure::Arg("result contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// # Safety
/// `out` must be null or writable.
unsafe fn put_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> FfiResult<()> {
    put_string(
        out,
        serde_json::to_string(value).expect("wire types serialize"),
    )
}

/// Starts a hub from a JSON configuration (same keys as the config file).
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string; `out` must be
/// writable. On success `*out` receives a handle owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn gh_hub_start(
    config_json: *const c_char,
    out: *mut *mut GhHub,
) -> GhStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Arg("out is null".into()));
        }
        let config: HubConfig = parse_json(str_arg(config_json, "config_json")?)?;
        let hub = Hub::start(config)?;
        *out = Box::into_raw(Box::new(GhHub { hub }));
        Ok(())
    })
}

/// Stops the platform: publishes `platformStopped`, ends subscriptions and
/// snapshots the registry. Repeated calls succeed.
///
/// # Safety
/// `hub` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gh_hub_stop(hub: *const GhHub) -> GhStatus {
    guard(|| Ok(hub_ref(hub)?.stop()?))
}

/// Stops (if needed) and releases a hub. Null is ignored.
///
/// # Safety
/// `hub` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn gh_hub_free(hub: *mut GhHub) {
    if !hub.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(hub))));
    }
}

/// Registers a device from a JSON descriptor `{"id","kind","name","location"}`.
///
/// # Safety
/// `hub` must be a live handle; `descriptor_json` a valid string.
#[no_mangle]
pub unsafe extern "C" fn gh_register_device(
    hub: *const GhHub,
    descriptor_json: *const c_char,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        let draft: DescriptorDraft = parse_json(str_arg(descriptor_json, "descriptor_json")?)?;
        let desc = validate_descriptor(&draft).map_err(|v| {
            HubError::InvalidDescriptor(v.iter().map(ToString::to_string).collect())
        })?;
        Ok(hub.kernel().register_device(desc)?)
    })
}

/// # Safety
/// `hub` must be a live handle; `device_id` a valid string.
#[no_mangle]
pub unsafe extern "C" fn gh_disconnect_device(
    hub: *const GhHub,
    device_id: *const c_char,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        let id = self::device_id(str_arg(device_id, "device_id")?)?;
        Ok(hub.kernel().disconnect_device(&id)?)
    })
}

/// Drives a simulated door sensor. Setting the current state publishes
/// nothing.
///
/// # Safety
/// `hub` must be a live handle; `device_id` a valid string.
#[no_mangle]
pub unsafe extern "C" fn gh_sim_door(
    hub: *const GhHub,
    device_id: *const c_char,
    open: bool,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        let id = self::device_id(str_arg(device_id, "device_id")?)?;
        hub.sim().set_door(&id, open)?;
        Ok(())
    })
}

/// Emits a reading from a simulated temperature or humidity sensor.
///
/// # Safety
/// `hub` must be a live handle; `device_id` a valid string.
#[no_mangle]
pub unsafe extern "C" fn gh_sim_sample(
    hub: *const GhHub,
    device_id: *const c_char,
    value: f64,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        let id = self::device_id(str_arg(device_id, "device_id")?)?;
        hub.sim().emit_sample(&id, value)?;
        Ok(())
    })
}

/// WatchEvent. Either filter may be null to match everything.
///
/// # Safety
/// `hub` must be a live handle; filters null or valid strings; `out_sub_id`
/// writable. Free the returned id with `gh_string_free`.
#[no_mangle]
pub unsafe extern "C" fn gh_watch(
    hub: *const GhHub,
    device_id: *const c_char,
    event_name: *const c_char,
    out_sub_id: *mut *mut c_char,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        let filter = SubscriptionFilter {
            device_id: opt_str_arg(device_id, "device_id")?
                .map(self::device_id)
                .transpose()?,
            event_name: opt_str_arg(event_name, "event_name")?.map(str::to_owned),
        };
        let sub = hub.app().watch_event(filter)?;
        put_string(out_sub_id, sub)
    })
}

/// GetNewEvent: blocks up to `timeout_ms` and writes
/// `{"events":[...],"overflowed":bool}`.
///
/// # Safety
/// `hub` must be a live handle; `sub_id` a valid string; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_get_new_event(
    hub: *const GhHub,
    sub_id: *const c_char,
    timeout_ms: u64,
    max_batch: u32,
    out_json: *mut *mut c_char,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        let polled =
            hub.app()
                .get_new_event(str_arg(sub_id, "sub_id")?, timeout_ms, max_batch as usize)?;
        put_json(out_json, &polled)
    })
}

/// GetImage: captures a PNG and writes its blob reference
/// `{"id","mime","sizeBytes","sha256"}`.
///
/// # Safety
/// `hub` must be a live handle; `camera_id` a valid string; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_get_image(
    hub: *const GhHub,
    camera_id: *const c_char,
    out_json: *mut *mut c_char,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        let blob = hub
            .app()
            .get_image(&self::device_id(str_arg(camera_id, "camera_id")?)?)?;
        put_json(out_json, &blob)
    })
}

/// Creates a rule from its JSON form and writes the new rule id.
///
/// # Safety
/// `hub` must be a live handle; `rule_json` a valid string; `out_rule_id`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gh_create_rule(
    hub: *const GhHub,
    rule_json: *const c_char,
    out_rule_id: *mut *mut c_char,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        let spec: RuleSpec = parse_json(str_arg(rule_json, "rule_json")?)?;
        let id = hub.engine().create_rule(spec)?;
        put_string(out_rule_id, id)
    })
}

/// Writes the registered devices as a JSON array.
///
/// # Safety
/// `hub` must be a live handle; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_list_devices(
    hub: *const GhHub,
    out_json: *mut *mut c_char,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        put_json(out_json, &hub.app().list_devices()?)
    })
}

/// Monthly aggregates for `metric` ("temperature" or "humidity") over the
/// inclusive `YYYY-MM` range, as a JSON array. Waits briefly for queued
/// samples to be ingested first.
///
/// # Safety
/// `hub` must be a live handle; strings valid; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn gh_monthly_averages(
    hub: *const GhHub,
    metric: *const c_char,
    from: *const c_char,
    to: *const c_char,
    out_json: *mut *mut c_char,
) -> GhStatus {
    guard(|| {
        let hub = hub_ref(hub)?;
        let metric: Metric = str_arg(metric, "metric")?.parse()?;
        let from: YearMonth = str_arg(from, "from")?.parse()?;
        let to: YearMonth = str_arg(to, "to")?.parse()?;
        hub.wait_idle(Duration::from_secs(2));
        put_json(
            out_json,
            &hub.telemetry().monthly_averages(metric, from, to)?,
        )
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn gh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
