use std::io;

use thiserror::Error;

/// Coarse classification shared by the HTTP status mapping and the C ABI
/// status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorClass {
    Precondition,
    NotFound,
    Conflict,
    Upstream,
    Unavailable,
}

#[derive(Debug, Error)]
pub enum HubError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("device `{0}` is of the wrong kind for this operation")]
    WrongKind(String),
    #[error("device `{0}` is disconnected")]
    DeviceDisconnected(String),
    #[error("device `{0}` is already disconnected")]
    AlreadyDisconnected(String),
    #[error("device `{0}` is already registered and connected")]
    DuplicateId(String),
    #[error("invalid descriptor: {}", .0.join("; "))]
    InvalidDescriptor(Vec<String>),
    #[error("unknown event name `{0}`")]
    UnknownEventName(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("value is not finite")]
    NonFiniteValue,
    #[error("driver failure: {0}")]
    DriverFailure(String),
    #[error("platform already started")]
    AlreadyStarted,
    #[error("platform not started")]
    NotStarted,
    #[error("platform stopped")]
    PlatformStopped,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("unknown subscription `{0}`")]
    UnknownSubscription(String),
    #[error("too many subscriptions (limit {0})")]
    TooManySubscriptions(usize),
    #[error("invalid address `{0}`")]
    InvalidAddress(String),
    #[error("unknown blob `{0}`")]
    UnknownBlob(String),
    #[error("`{0}` already exists")]
    AlreadyExists(String),
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("path escapes the store root: `{0}`")]
    PathEscape(String),
    #[error("invalid text: {0}")]
    InvalidText(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mail sink failure: {0}")]
    SinkFailure(String),
    #[error("store failure: {0}")]
    StoreFailure(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("bad template: {0}")]
    BadTemplate(String),
    #[error("duplicate rule (same as `{0}`)")]
    DuplicateRule(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("chain depth exceeded")]
    ChainDepthExceeded,
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

impl HubError {
    /// Stable machine-readable error code, used on the wire and in rule logs.
    pub fn code(&self) -> &'static str {
        use HubError::*;
        match self {
            UnknownDevice(_) => "unknown-device",
            WrongKind(_) => "wrong-kind",
            DeviceDisconnected(_) => "device-disconnected",
            AlreadyDisconnected(_) => "already-disconnected",
            DuplicateId(_) => "duplicate-id",
            InvalidDescriptor(_) => "invalid-descriptor",
            UnknownEventName(_) => "unknown-event-name",
            UnknownAction(_) => "unknown-action",
            NonFiniteValue => "non-finite-value",
            DriverFailure(_) => "driver-failure",
            AlreadyStarted => "already-started",
            NotStarted => "not-started",
            PlatformStopped => "platform-stopped",
            ConfigInvalid(_) => "config-invalid",
            UnknownSubscription(_) => "unknown-subscription",
            TooManySubscriptions(_) => "too-many-subscriptions",
            InvalidAddress(_) => "invalid-address",
            UnknownBlob(_) => "unknown-blob",
            AlreadyExists(_) => "already-exists",
            InvalidName(_) => "invalid-name",
            PathEscape(_) => "path-escape",
            InvalidText(_) => "invalid-text",
            InvalidArgument(_) => "invalid-argument",
            SinkFailure(_) => "sink-failure",
            StoreFailure(_) => "store-failure",
            UnknownRule(_) => "unknown-rule",
            BadTemplate(_) => "bad-template",
            DuplicateRule(_) => "duplicate-rule",
            InvalidRange(_) => "invalid-range",
            MalformedPayload(_) => "malformed-payload",
            ChainDepthExceeded => "chain-depth-exceeded",
            Io(_) => "io-failure",
        }
    }

    pub fn class(&self) -> ErrorClass {
        use HubError::*;
        match self {
            UnknownDevice(_) | UnknownSubscription(_) | UnknownBlob(_) | UnknownRule(_) => {
                ErrorClass::NotFound
            }
            DuplicateId(_)
            | AlreadyDisconnected(_)
            | AlreadyExists(_)
            | AlreadyStarted
            | DuplicateRule(_) => ErrorClass::Conflict,
            DriverFailure(_) | SinkFailure(_) | StoreFailure(_) | Io(_) => ErrorClass::Upstream,
            PlatformStopped | NotStarted => ErrorClass::Unavailable,
            _ => ErrorClass::Precondition,
        }
    }
}

pub type Result<T, E = HubError> = std::result::Result<T, E>;
