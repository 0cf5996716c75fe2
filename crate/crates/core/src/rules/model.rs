use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::template::Template;
use crate::adapters::check_path_component;
use crate::app::check_address;
use crate::error::{HubError, Result};
use crate::model::{DeviceDescriptor, DeviceId, DeviceKind, LifecycleEvent, Payload};

pub const MAX_RULE_ACTIONS: usize = 8;

/// Names every template can use without a binding.
pub const BUILTIN_VARS: [&str; 4] = ["device", "event", "timestamp", "seq"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trigger {
    pub device_id: DeviceId,
    pub event_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "type",
    rename_all = "camelCase",
    rename_all_fields = "camelCase"
)]
pub enum RuleAction {
    DeviceAction {
        device_id: DeviceId,
        action_name: String,
        #[serde(default)]
        params: Payload,
    },
    CaptureImage {
        camera_id: DeviceId,
        bind_as: String,
    },
    SendEmail {
        to: String,
        subject: String,
        body_template: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attach: Option<String>,
    },
    UploadPicture {
        container: String,
        name_template: String,
        source: String,
    },
    AppendStream {
        stream_name: String,
        text_template: String,
    },
}

impl RuleAction {
    pub fn kind(&self) -> &'static str {
        match self {
            RuleAction::DeviceAction { .. } => "deviceAction",
            RuleAction::CaptureImage { .. } => "captureImage",
            RuleAction::SendEmail { .. } => "sendEmail",
            RuleAction::UploadPicture { .. } => "uploadPicture",
            RuleAction::AppendStream { .. } => "appendStream",
        }
    }
}

/// What a client submits to create a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleSpec {
    pub trigger: Trigger,
    pub actions: Vec<RuleAction>,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Rule {
    pub rule_id: String,
    pub trigger: Trigger,
    pub actions: Vec<RuleAction>,
    pub enabled: bool,
    pub created_at_utc_ms: i64,
    #[serde(default)]
    pub fire_count: u64,
}

impl Rule {
    /// Same trigger and same action list.
    pub fn same_behavior(&self, spec: &RuleSpec) -> bool {
        self.trigger == spec.trigger && self.actions == spec.actions
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventRef {
    pub device_id: DeviceId,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum ActionOutcome {
    Ok {
        action: String,
    },
    Error {
        action: String,
        code: String,
        message: String,
    },
}

impl ActionOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, ActionOutcome::Ok { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FireLogEntry {
    pub rule_id: String,
    pub triggering: EventRef,
    pub outcomes: Vec<ActionOutcome>,
    pub started_utc_ms: i64,
    pub duration_ms: u64,
}

/// Checks a rule against the registry: devices exist and expose the named
/// events and actions, templates parse, and every binding is introduced by
/// an earlier `captureImage`.
pub fn validate_spec(
    spec: &RuleSpec,
    lookup: impl Fn(&DeviceId) -> Result<DeviceDescriptor>,
) -> Result<()> {
    if spec.actions.is_empty() || spec.actions.len() > MAX_RULE_ACTIONS {
        return Err(HubError::InvalidArgument(format!(
            "a rule needs 1..={MAX_RULE_ACTIONS} actions"
        )));
    }
    let trig = &spec.trigger;
    if trig.device_id.is_platform() {
        LifecycleEvent::from_name(&trig.event_name)
            .ok_or_else(|| HubError::UnknownEventName(trig.event_name.clone()))?;
    } else if !lookup(&trig.device_id)?.has_event(&trig.event_name) {
        return Err(HubError::UnknownEventName(trig.event_name.clone()));
    }

    let mut bound = BTreeSet::new();
    let require_bound = |bound: &BTreeSet<String>, name: &str| {
        if bound.contains(name) {
            Ok(())
        } else {
            Err(HubError::BadTemplate(format!(
                "binding `{name}` is not introduced by an earlier captureImage"
            )))
        }
    };
    for action in &spec.actions {
        match action {
            RuleAction::DeviceAction {
                device_id,
                action_name,
                ..
            } => {
                if !lookup(device_id)?.has_action(action_name) {
                    return Err(HubError::UnknownAction(action_name.clone()));
                }
            }
            RuleAction::CaptureImage { camera_id, bind_as } => {
                if lookup(camera_id)?.kind != DeviceKind::Camera {
                    return Err(HubError::WrongKind(camera_id.to_string()));
                }
                let valid_name = !bind_as.is_empty()
                    && bind_as
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_');
                if !valid_name
                    || BUILTIN_VARS.contains(&bind_as.as_str())
                    || !bound.insert(bind_as.clone())
                {
                    return Err(HubError::BadTemplate(format!(
                        "invalid or duplicate binding `{bind_as}`"
                    )));
                }
            }
            RuleAction::SendEmail {
                to,
                subject,
                body_template,
                attach,
            } => {
                check_address(to)?;
                Template::parse(subject)?;
                Template::parse(body_template)?;
                if let Some(name) = attach {
                    require_bound(&bound, name)?;
                }
            }
            RuleAction::UploadPicture {
                container,
                name_template,
                source,
            } => {
                check_path_component(container)?;
                Template::parse(name_template)?;
                require_bound(&bound, source)?;
            }
            RuleAction::AppendStream {
                stream_name,
                text_template,
            } => {
                check_path_component(stream_name)
                    .map_err(|_| HubError::InvalidName(stream_name.clone()))?;
                Template::parse(text_template)?;
            }
        }
    }
    Ok(())
}

/// The four-step pipeline that turns a door opening into a photo, an email,
/// an upload and an alert line.
pub fn alerts_pipeline(
    door: DeviceId,
    camera: DeviceId,
    to: &str,
    container: &str,
    stream: &str,
) -> RuleSpec {
    RuleSpec {
        trigger: Trigger {
            device_id: door,
            event_name: crate::model::EVENT_DOOR_OPENED.into(),
        },
        actions: vec![
            RuleAction::CaptureImage {
                camera_id: camera,
                bind_as: "img".into(),
            },
            RuleAction::SendEmail {
                to: to.into(),
                subject: "Door opened".into(),
                body_template: "The door {device} opened at {timestamp}.".into(),
                attach: Some("img".into()),
            },
            RuleAction::UploadPicture {
                container: container.into(),
                name_template: "alert-{timestamp}-{seq}.png".into(),
                source: "img".into(),
            },
            RuleAction::AppendStream {
                stream_name: stream.into(),
                text_template: "door opened at {timestamp} image={img}".into(),
            },
        ],
        enabled: true,
    }
}
