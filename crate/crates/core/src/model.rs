//! Shared vocabulary: devices, events, actions and payload values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Pseudo-device that carries platform lifecycle events.
pub const PLATFORM_DEVICE: &str = "@platform";

pub const MAX_DEVICE_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceId(String);

impl DeviceId {
    pub fn new(value: impl Into<String>) -> Result<Self, Violation> {
        let value = value.into();
        check_device_id(&value)?;
        Ok(Self(value))
    }

    /// The reserved lifecycle source. Not a valid id for a real device.
    pub fn platform() -> Self {
        Self(PLATFORM_DEVICE.to_owned())
    }

    pub fn is_platform(&self) -> bool {
        self.0 == PLATFORM_DEVICE
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn check_device_id(value: &str) -> Result<(), Violation> {
    if value.is_empty() {
        return Err(Violation::EmptyId);
    }
    if value.len() > MAX_DEVICE_ID_LEN
        || !value
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
    {
        return Err(Violation::InvalidId(value.to_owned()));
    }
    Ok(())
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DeviceId {
    type Err = Violation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == PLATFORM_DEVICE {
            return Ok(Self::platform());
        }
        Self::new(s)
    }
}

impl Serialize for DeviceId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for DeviceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceKind {
    DoorSensor,
    Camera,
    TemperatureSensor,
    HumiditySensor,
}

pub const EVENT_DOOR_OPENED: &str = "doorOpened";
pub const EVENT_DOOR_CLOSED: &str = "doorClosed";
pub const EVENT_SAMPLE: &str = "sample";
pub const ACTION_TAKE_PICTURE: &str = "takePicture";
pub const KEY_CELSIUS: &str = "celsius";
pub const KEY_PERCENT_RH: &str = "percentRH";
pub const KEY_IMAGE: &str = "image";

impl DeviceKind {
    pub const ALL: [DeviceKind; 4] = [
        DeviceKind::DoorSensor,
        DeviceKind::Camera,
        DeviceKind::TemperatureSensor,
        DeviceKind::HumiditySensor,
    ];

    pub fn event_names(self) -> &'static [&'static str] {
        match self {
            DeviceKind::DoorSensor => &[EVENT_DOOR_OPENED, EVENT_DOOR_CLOSED],
            DeviceKind::Camera => &[],
            DeviceKind::TemperatureSensor | DeviceKind::HumiditySensor => &[EVENT_SAMPLE],
        }
    }

    pub fn action_names(self) -> &'static [&'static str] {
        match self {
            DeviceKind::Camera => &[ACTION_TAKE_PICTURE],
            _ => &[],
        }
    }

    /// Payload key carried by `sample` events, for sensor kinds.
    pub fn sample_key(self) -> Option<&'static str> {
        match self {
            DeviceKind::TemperatureSensor => Some(KEY_CELSIUS),
            DeviceKind::HumiditySensor => Some(KEY_PERCENT_RH),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::DoorSensor => "door-sensor",
            DeviceKind::Camera => "camera",
            DeviceKind::TemperatureSensor => "temperature-sensor",
            DeviceKind::HumiditySensor => "humidity-sensor",
        }
    }
}

impl FromStr for DeviceKind {
    type Err = Violation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Violation::UnknownKind(s.to_owned()))
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single descriptor invariant violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    InvalidId(String),
    UnknownKind(String),
    UnknownEvent(String),
    MissingEvent(String),
    UnknownAction(String),
    MissingAction(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "empty id"),
            Violation::InvalidId(id) => write!(f, "invalid id `{id}`"),
            Violation::UnknownKind(k) => write!(f, "unknown kind `{k}`"),
            Violation::UnknownEvent(e) => write!(f, "unknown event `{e}`"),
            Violation::MissingEvent(e) => write!(f, "missing event `{e}`"),
            Violation::UnknownAction(a) => write!(f, "unknown action `{a}`"),
            Violation::MissingAction(a) => write!(f, "missing action `{a}`"),
        }
    }
}

impl std::error::Error for Violation {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DeviceDescriptor {
    pub id: DeviceId,
    pub kind: DeviceKind,
    pub name: String,
    pub location: String,
    pub connected: bool,
    pub event_names: BTreeSet<String>,
    pub action_names: BTreeSet<String>,
}

impl DeviceDescriptor {
    /// Builds a descriptor whose capabilities come straight from the table.
    pub fn new(
        id: DeviceId,
        kind: DeviceKind,
        name: impl Into<String>,
        location: impl Into<String>,
    ) -> Self {
        Self {
            id,
            kind,
            name: name.into(),
            location: location.into(),
            connected: false,
            event_names: kind.event_names().iter().map(|s| s.to_string()).collect(),
            action_names: kind.action_names().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn has_event(&self, name: &str) -> bool {
        self.event_names.contains(name)
    }

    pub fn has_action(&self, name: &str) -> bool {
        self.action_names.contains(name)
    }
}

/// Unchecked descriptor as it arrives over the wire. Capability sets may be
/// omitted, in which case they default to the kind's table entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DescriptorDraft {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub connected: bool,
    #[serde(default)]
    pub event_names: Option<BTreeSet<String>>,
    #[serde(default)]
    pub action_names: Option<BTreeSet<String>>,
}

impl From<&DeviceDescriptor> for DescriptorDraft {
    fn from(d: &DeviceDescriptor) -> Self {
        Self {
            id: d.id.as_str().to_owned(),
            kind: d.kind.as_str().to_owned(),
            name: d.name.clone(),
            location: d.location.clone(),
            connected: d.connected,
            event_names: Some(d.event_names.clone()),
            action_names: Some(d.action_names.clone()),
        }
    }
}

/// Checks every descriptor invariant and reports all violations at once.
pub fn validate_descriptor(draft: &DescriptorDraft) -> Result<DeviceDescriptor, Vec<Violation>> {
    let mut violations = Vec::new();
    let id = DeviceId::new(draft.id.clone())
        .map_err(|v| violations.push(v))
        .ok();
    let kind = draft
        .kind
        .parse::<DeviceKind>()
        .map_err(|v| violations.push(v))
        .ok();

    if let Some(kind) = kind {
        if let Some(events) = &draft.event_names {
            check_capabilities(
                events,
                kind.event_names(),
                &mut violations,
                Violation::UnknownEvent,
                Violation::MissingEvent,
            );
        }
        if let Some(actions) = &draft.action_names {
            check_capabilities(
                actions,
                kind.action_names(),
                &mut violations,
                Violation::UnknownAction,
                Violation::MissingAction,
            );
        }
    }

    match (id, kind) {
        (Some(id), Some(kind)) if violations.is_empty() => {
            let mut d = DeviceDescriptor::new(id, kind, draft.name.clone(), draft.location.clone());
            d.connected = draft.connected;
            Ok(d)
        }
        _ => Err(violations),
    }
}

fn check_capabilities(
    given: &BTreeSet<String>,
    table: &[&str],
    out: &mut Vec<Violation>,
    unknown: fn(String) -> Violation,
    missing: fn(String) -> Violation,
) {
    for name in given {
        if !table.contains(&name.as_str()) {
            out.push(unknown(name.clone()));
        }
    }
    for name in table {
        if !given.contains(*name) {
            out.push(missing(name.to_string()));
        }
    }
}

impl<'de> Deserialize<'de> for DeviceDescriptor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let draft = DescriptorDraft::deserialize(d)?;
        validate_descriptor(&draft).map_err(|vs| {
            let msg: Vec<String> = vs.iter().map(ToString::to_string).collect();
            serde::de::Error::custom(msg.join("; "))
        })
    }
}

/// Handle to an image (or other bytes) held by the hub.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlobRef {
    pub id: String,
    pub mime: String,
    pub size_bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayloadValue {
    Text(String),
    Number(f64),
    Flag(bool),
    BlobRef(BlobRef),
}

impl PayloadValue {
    /// Rejects NaN and infinities.
    pub fn number(value: f64) -> Option<Self> {
        value.is_finite().then_some(Self::Number(value))
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            PayloadValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_blob(&self) -> Option<&BlobRef> {
        match self {
            PayloadValue::BlobRef(b) => Some(b),
            _ => None,
        }
    }
}

impl fmt::Display for PayloadValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PayloadValue::Text(s) => f.write_str(s),
            PayloadValue::Number(n) => write!(f, "{n}"),
            PayloadValue::Flag(b) => write!(f, "{b}"),
            PayloadValue::BlobRef(b) => f.write_str(&b.id),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "camelCase")]
enum WirePayload {
    Text(String),
    Number(f64),
    Flag(bool),
    BlobRef(BlobRef),
}

impl Serialize for PayloadValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let wire = match self.clone() {
            PayloadValue::Text(v) => WirePayload::Text(v),
            PayloadValue::Number(v) => WirePayload::Number(v),
            PayloadValue::Flag(v) => WirePayload::Flag(v),
            PayloadValue::BlobRef(v) => WirePayload::BlobRef(v),
        };
        wire.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PayloadValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match WirePayload::deserialize(d)? {
            WirePayload::Text(v) => PayloadValue::Text(v),
            WirePayload::Number(v) => PayloadValue::number(v)
                .ok_or_else(|| serde::de::Error::custom("number must be finite"))?,
            WirePayload::Flag(v) => PayloadValue::Flag(v),
            WirePayload::BlobRef(v) => PayloadValue::BlobRef(v),
        })
    }
}

pub type Payload = BTreeMap<String, PayloadValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventRecord {
    pub device_id: DeviceId,
    pub seq: u64,
    pub event_name: String,
    pub payload: Payload,
    pub timestamp_utc_ms: i64,
    /// How many rule-driven hops produced this event. Not part of the wire form.
    #[serde(skip)]
    pub chain_depth: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionDescriptor {
    pub device_id: DeviceId,
    pub action_name: String,
    #[serde(default)]
    pub params: Payload,
}

/// The reserved lifecycle event names carried by [`PLATFORM_DEVICE`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LifecycleEvent {
    PlatformStarted,
    PlatformStopped,
    DeviceRegistered,
    DeviceDisconnected,
}

impl LifecycleEvent {
    pub const ALL: [LifecycleEvent; 4] = [
        LifecycleEvent::PlatformStarted,
        LifecycleEvent::PlatformStopped,
        LifecycleEvent::DeviceRegistered,
        LifecycleEvent::DeviceDisconnected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LifecycleEvent::PlatformStarted => "platformStarted",
            LifecycleEvent::PlatformStopped => "platformStopped",
            LifecycleEvent::DeviceRegistered => "deviceRegistered",
            LifecycleEvent::DeviceDisconnected => "deviceDisconnected",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn draft(id: &str, kind: &str) -> DescriptorDraft {
        DescriptorDraft {
            id: id.into(),
            kind: kind.into(),
            ..Default::default()
        }
    }

    #[test]
    fn door_sensor_with_table_capabilities_is_ok() {
        let mut d = draft("door1", "door-sensor");
        d.event_names = Some(["doorOpened", "doorClosed"].map(String::from).into());
        d.action_names = Some(BTreeSet::new());
        let desc = validate_descriptor(&d).unwrap();
        assert_eq!(desc.kind, DeviceKind::DoorSensor);
        assert!(desc.has_event("doorClosed"));
    }

    #[test]
    fn camera_with_extra_action_is_rejected() {
        let mut d = draft("cam1", "camera");
        d.action_names = Some(["takePicture", "selfDestruct"].map(String::from).into());
        let errs = validate_descriptor(&d).unwrap_err();
        assert_eq!(errs, vec![Violation::UnknownAction("selfDestruct".into())]);
        assert_eq!(errs[0].to_string(), "unknown action `selfDestruct`");
    }

    #[test]
    fn empty_id_and_unknown_kind_are_both_reported() {
        let errs = validate_descriptor(&draft("", "toaster")).unwrap_err();
        assert_eq!(
            errs,
            vec![Violation::EmptyId, Violation::UnknownKind("toaster".into())]
        );
        assert_eq!(errs[0].to_string(), "empty id");
    }

    #[test]
    fn id_charset_and_length() {
        assert!(DeviceId::new("a.b_c-9").is_ok());
        assert!(DeviceId::new("has space").is_err());
        assert!(DeviceId::new("x".repeat(65)).is_err());
        assert!(DeviceId::new("x".repeat(64)).is_ok());
        assert!(DeviceId::new("@platform").is_err());
        assert!("@platform".parse::<DeviceId>().unwrap().is_platform());
    }

    #[test]
    fn payload_wire_form() {
        let v = serde_json::to_value(PayloadValue::Number(21.5)).unwrap();
        assert_eq!(v, serde_json::json!({"t": "number", "v": 21.5}));
        let b: PayloadValue = serde_json::from_value(serde_json::json!({
            "t": "blobRef",
            "v": {"id": "x", "mime": "image/png", "sizeBytes": 3, "sha256": "00"}
        }))
        .unwrap();
        assert_eq!(b.as_blob().unwrap().size_bytes, 3);
        assert!(PayloadValue::number(f64::NAN).is_none());
        assert!(PayloadValue::number(f64::INFINITY).is_none());
    }

    fn arb_payload_value() -> impl Strategy<Value = PayloadValue> {
        prop_oneof![
            "[ -~]{0,12}".prop_map(PayloadValue::Text),
            (-1e12f64..1e12).prop_map(PayloadValue::Number),
            any::<bool>().prop_map(PayloadValue::Flag),
            ("[a-f0-9]{8}", 0u64..10_000, "[a-f0-9]{64}").prop_map(|(id, size, sha)| {
                PayloadValue::BlobRef(BlobRef {
                    id,
                    mime: "image/png".into(),
                    size_bytes: size,
                    sha256: sha,
                })
            }),
        ]
    }

    fn arb_record() -> impl Strategy<Value = EventRecord> {
        (
            "[A-Za-z0-9._-]{1,64}",
            1u64..u64::MAX,
            "[a-zA-Z]{1,16}",
            proptest::collection::btree_map("[a-zA-Z]{1,8}", arb_payload_value(), 0..4),
            any::<i64>(),
        )
            .prop_map(|(id, seq, name, payload, ts)| EventRecord {
                device_id: DeviceId::new(id).unwrap(),
                seq,
                event_name: name,
                payload,
                timestamp_utc_ms: ts,
                chain_depth: 0,
            })
    }

    fn arb_descriptor() -> impl Strategy<Value = DeviceDescriptor> {
        (
            "[A-Za-z0-9._-]{1,64}",
            prop::sample::select(DeviceKind::ALL.to_vec()),
            "[ -~]{0,20}",
            "[ -~]{0,20}",
            any::<bool>(),
        )
            .prop_map(|(id, kind, name, loc, connected)| {
                let mut d = DeviceDescriptor::new(DeviceId::new(id).unwrap(), kind, name, loc);
                d.connected = connected;
                d
            })
    }

    proptest! {
        #[test]
        fn event_record_json_round_trip(rec in arb_record()) {
            let json = serde_json::to_string(&rec).unwrap();
            let back: EventRecord = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(&back, &rec);
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), json);
        }

        #[test]
        fn descriptor_json_round_trip(d in arb_descriptor()) {
            let json = serde_json::to_string(&d).unwrap();
            let back: DeviceDescriptor = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn action_json_round_trip(
            id in "[A-Za-z0-9]{1,10}",
            params in proptest::collection::btree_map("[a-z]{1,6}", arb_payload_value(), 0..3),
        ) {
            let a = ActionDescriptor { device_id: DeviceId::new(id).unwrap(), action_name: "takePicture".into(), params };
            let back: ActionDescriptor = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
            prop_assert_eq!(back, a);
        }
    }
}
