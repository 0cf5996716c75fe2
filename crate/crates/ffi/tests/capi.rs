use std::ffi::{c_char, CStr, CString};
use std::ptr;

use generichub_ffi::*;
use serde_json::{json, Value};

struct Handle(*mut GhHub);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { gh_hub_free(self.0) };
    }
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Takes ownership of a returned string.
fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { gh_string_free(p) };
    s
}

fn last_error() -> String {
    let p = gh_last_error_message();
    assert!(!p.is_null(), "no error recorded");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn start(dir: &tempfile::TempDir) -> Handle {
    let config = json!({
        "data_dir": dir.path().join("data"),
        "auth_token": "t",
        "backend": "memory",
        "devices": [
            {"id": "door1", "kind": "door-sensor", "name": "Front door"},
            {"id": "cam1", "kind": "camera"},
            {"id": "temp1", "kind": "temperature-sensor"},
        ],
    });
    let mut hub = ptr::null_mut();
    let status = unsafe { gh_hub_start(c(&config.to_string()).as_ptr(), &mut hub) };
    assert_eq!(
        status,
        GhStatus::Ok,
        "{}",
        if status == GhStatus::Ok {
            String::new()
        } else {
            last_error()
        }
    );
    Handle(hub)
}

fn json_out(f: impl FnOnce(*mut *mut c_char) -> GhStatus) -> Value {
    let mut out = ptr::null_mut();
    assert_eq!(f(&mut out), GhStatus::Ok);
    serde_json::from_str(&take(out)).unwrap()
}

#[test]
fn watch_drive_and_poll() {
    let dir = tempfile::tempdir().unwrap();
    let hub = start(&dir);
    let devices = json_out(|out| unsafe { gh_list_devices(hub.0, out) });
    assert_eq!(devices.as_array().unwrap().len(), 3);

    let mut sub = ptr::null_mut();
    let door = c("door1");
    assert_eq!(
        unsafe { gh_watch(hub.0, door.as_ptr(), ptr::null(), &mut sub) },
        GhStatus::Ok
    );
    let sub = c(&take(sub));
    assert_eq!(
        unsafe { gh_sim_door(hub.0, door.as_ptr(), true) },
        GhStatus::Ok
    );
    assert_eq!(
        unsafe { gh_sim_door(hub.0, door.as_ptr(), true) },
        GhStatus::Ok
    );
    assert_eq!(
        unsafe { gh_sim_door(hub.0, door.as_ptr(), false) },
        GhStatus::Ok
    );
    let batch = json_out(|out| unsafe { gh_get_new_event(hub.0, sub.as_ptr(), 100, 10, out) });
    let names: Vec<&str> = batch["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["eventName"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["doorOpened", "doorClosed"]);
    assert_eq!(batch["overflowed"], false);
}

#[test]
fn images_rules_and_telemetry() {
    let dir = tempfile::tempdir().unwrap();
    let hub = start(&dir);
    let blob = json_out(|out| unsafe { gh_get_image(hub.0, c("cam1").as_ptr(), out) });
    assert_eq!(blob["mime"], "image/png");
    assert_eq!(blob["sha256"].as_str().unwrap().len(), 64);

    let rule = json!({
        "trigger": {"deviceId": "door1", "eventName": "doorOpened"},
        "actions": [{"type": "captureImage", "cameraId": "cam1", "bindAs": "img"}],
    });
    let mut id = ptr::null_mut();
    assert_eq!(
        unsafe { gh_create_rule(hub.0, c(&rule.to_string()).as_ptr(), &mut id) },
        GhStatus::Ok
    );
    assert!(!take(id).is_empty());
    let mut again = ptr::null_mut();
    assert_eq!(
        unsafe { gh_create_rule(hub.0, c(&rule.to_string()).as_ptr(), &mut again) },
        GhStatus::Conflict
    );
    assert!(last_error().starts_with("duplicate-rule"));

    let temp = c("temp1");
    for v in [20.0, 22.0] {
        assert_eq!(
            unsafe { gh_sim_sample(hub.0, temp.as_ptr(), v) },
            GhStatus::Ok
        );
    }
    let rows = json_out(|out| unsafe {
        gh_monthly_averages(
            hub.0,
            c("temperature").as_ptr(),
            c("2000-01").as_ptr(),
            c("2200-12").as_ptr(),
            out,
        )
    });
    assert_eq!(rows[0]["count"], 2);
    assert_eq!(rows[0]["mean"], 21.0);
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let hub = start(&dir);
    assert_eq!(
        unsafe { gh_sim_door(hub.0, c("ghost").as_ptr(), true) },
        GhStatus::NotFound
    );
    assert!(last_error().starts_with("unknown-device"));
    assert_eq!(
        unsafe { gh_sim_door(hub.0, ptr::null(), true) },
        GhStatus::NullOrInvalidString
    );
    assert_eq!(
        unsafe { gh_sim_door(ptr::null(), c("door1").as_ptr(), true) },
        GhStatus::NullOrInvalidString
    );
    assert_eq!(
        unsafe { gh_register_device(hub.0, c("{not json").as_ptr()) },
        GhStatus::Precondition
    );
    assert_eq!(
        unsafe { gh_register_device(hub.0, c(r#"{"id":"cam1","kind":"camera"}"#).as_ptr()) },
        GhStatus::Conflict
    );
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe {
            gh_monthly_averages(
                hub.0,
                c("temperature").as_ptr(),
                c("2024-05").as_ptr(),
                c("2024-01").as_ptr(),
                &mut out,
            )
        },
        GhStatus::Precondition
    );

    // success clears the recorded message
    assert_eq!(
        unsafe { gh_disconnect_device(hub.0, c("door1").as_ptr()) },
        GhStatus::Ok
    );
    assert!(gh_last_error_message().is_null());

    assert_eq!(unsafe { gh_hub_stop(hub.0) }, GhStatus::Ok);
    assert_eq!(unsafe { gh_hub_stop(hub.0) }, GhStatus::Ok);
    assert_eq!(
        unsafe { gh_sim_sample(hub.0, c("temp1").as_ptr(), 1.0) },
        GhStatus::Unavailable
    );
}

#[test]
fn bad_config_is_rejected_without_a_handle() {
    let mut hub = ptr::null_mut();
    let status = unsafe { gh_hub_start(c(r#"{"no_such_key": 1}"#).as_ptr(), &mut hub) };
    assert_eq!(status, GhStatus::Precondition);
    assert!(hub.is_null());
    unsafe { gh_hub_free(ptr::null_mut()) };
    unsafe { gh_string_free(ptr::null_mut()) };
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/generichub.h"))
            .unwrap();
    let source =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 14, "{exports:?}");
    for name in exports {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    assert!(header.contains("typedef struct GhHub GhHub;"));
    assert!(header.contains("GH_STATUS_UNAVAILABLE = 6"));
}
