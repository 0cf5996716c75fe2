//! Blocking HTTP client for the hub API.

mod alerts;

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use ureq::Agent;

pub use alerts::{count_api_statements, run_alerts_app, AlertsConfig, AlertsStats};

use crate::adapters::StreamLine;
use crate::app::Capabilities;
use crate::config::ClientConfig;
use crate::kernel::MAX_POLL_TIMEOUT_MS;
use crate::model::{BlobRef, DescriptorDraft, DeviceDescriptor, DeviceId, EventRecord};
use crate::rules::{FireLogEntry, Rule, RuleSpec};
use crate::telemetry::{Metric, MonthlyAggregate, YearMonth};

/// Source of the alerts loop, for statement counting.
pub const ALERTS_APP_SOURCE: &str = include_str!("alerts.rs");

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach hub: {0}")]
    Connection(String),
    #[error("hub answered {status} {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
    },
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    /// Hub error code for API errors.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }

    /// Process exit status for the CLI: 2 for API errors, 3 when unreachable.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Connection(_) => 3,
            ClientError::Api { .. } | ClientError::Decode(_) => 2,
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBatch {
    pub events: Vec<EventRecord>,
    pub overflowed: bool,
}

pub struct HubClient {
    base: String,
    auth: String,
    agent: Agent,
    default_timeout_ms: u64,
}

impl HubClient {
    pub fn new(config: &ClientConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(5)))
            // long polls may legitimately take up to the maximum poll timeout
            .timeout_global(Some(Duration::from_millis(MAX_POLL_TIMEOUT_MS + 30_000)))
            .build()
            .into();
        Self {
            base: config.base_url.trim_end_matches('/').to_owned(),
            auth: format!("Bearer {}", config.auth_token),
            agent,
            default_timeout_ms: config.default_timeout_ms.min(MAX_POLL_TIMEOUT_MS),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn default_timeout_ms(&self) -> u64 {
        self.default_timeout_ms
    }

    fn url(&self, segments: &[&str]) -> String {
        let mut url = self.base.clone();
        for s in segments {
            url.push('/');
            url.push_str(&encode_segment(s));
        }
        url
    }

    fn finish(
        resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> ClientResult<ureq::http::Response<ureq::Body>> {
        let mut resp = resp.map_err(|e| ClientError::Connection(e.to_string()))?;
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            return Ok(resp);
        }
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        let parsed: Option<Value> = serde_json::from_str(&text).ok();
        let field = |k: &str| {
            parsed
                .as_ref()
                .and_then(|v| v[k].as_str())
                .map(str::to_owned)
        };
        Err(ClientError::Api {
            status,
            code: field("error").unwrap_or_else(|| format!("http-{status}")),
            message: field("message").unwrap_or(text),
        })
    }

    fn decode<T: DeserializeOwned>(resp: ureq::http::Response<ureq::Body>) -> ClientResult<T> {
        resp.into_body()
            .read_json()
            .map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn get_json<T: DeserializeOwned>(
        &self,
        segments: &[&str],
        query: &[(&str, String)],
    ) -> ClientResult<T> {
        let mut req = self
            .agent
            .get(self.url(segments))
            .header("Authorization", &self.auth);
        for (k, v) in query {
            req = req.query(*k, v);
        }
        Self::decode(Self::finish(req.call())?)
    }

    fn get_text(&self, segments: &[&str], query: &[(&str, String)]) -> ClientResult<String> {
        let mut req = self
            .agent
            .get(self.url(segments))
            .header("Authorization", &self.auth);
        for (k, v) in query {
            req = req.query(*k, v);
        }
        Self::finish(req.call())?
            .into_body()
            .read_to_string()
            .map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn send<T: DeserializeOwned>(
        &self,
        method: &str,
        segments: &[&str],
        body: &impl Serialize,
    ) -> ClientResult<T> {
        let url = self.url(segments);
        let resp = match method {
            "POST" => self
                .agent
                .post(url)
                .header("Authorization", &self.auth)
                .send_json(body),
            "PATCH" => self
                .agent
                .patch(url)
                .header("Authorization", &self.auth)
                .send_json(body),
            other => unreachable!("no body for {other}"),
        };
        Self::decode(Self::finish(resp)?)
    }

    fn delete(&self, segments: &[&str]) -> ClientResult<()> {
        Self::finish(
            self.agent
                .delete(self.url(segments))
                .header("Authorization", &self.auth)
                .call(),
        )?;
        Ok(())
    }

    pub fn health(&self) -> ClientResult<()> {
        Self::finish(self.agent.get(self.url(&["healthz"])).call())?;
        Ok(())
    }

    /// WatchEvent.
    pub fn watch(
        &self,
        device_id: Option<&DeviceId>,
        event_name: Option<&str>,
    ) -> ClientResult<String> {
        let mut body = json!({});
        if let Some(d) = device_id {
            body["deviceId"] = json!(d);
        }
        if let Some(e) = event_name {
            body["eventName"] = json!(e);
        }
        let v: Value = self.send("POST", &["watch"], &body)?;
        string_field(&v, "subscriptionId")
    }

    /// GetNewEvent.
    pub fn get_new_event(
        &self,
        sub: &str,
        timeout_ms: u64,
        max: usize,
    ) -> ClientResult<EventBatch> {
        self.get_json(
            &["events"],
            &[
                ("sub", sub.to_owned()),
                ("timeoutMs", timeout_ms.to_string()),
                ("max", max.to_string()),
            ],
        )
    }

    /// GetImage.
    pub fn get_image(&self, camera: &DeviceId) -> ClientResult<BlobRef> {
        self.send("POST", &["devices", camera.as_str(), "image"], &json!({}))
    }

    pub fn blob(&self, id: &str) -> ClientResult<Vec<u8>> {
        let resp = Self::finish(
            self.agent
                .get(self.url(&["blobs", id]))
                .header("Authorization", &self.auth)
                .call(),
        )?;
        resp.into_body()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// SendEmailWithImage.
    pub fn send_email_with_image(
        &self,
        to: &str,
        subject: &str,
        body: &str,
        image_id: &str,
    ) -> ClientResult<String> {
        let v: Value = self.send(
            "POST",
            &["email"],
            &json!({"to": to, "subject": subject, "body": body, "imageId": image_id}),
        )?;
        string_field(&v, "messageId")
    }

    /// UploadPicture.
    pub fn upload_picture(
        &self,
        image_id: &str,
        container: &str,
        name: &str,
    ) -> ClientResult<String> {
        let v: Value = self.send(
            "POST",
            &["upload"],
            &json!({"imageId": image_id, "container": container, "name": name}),
        )?;
        string_field(&v, "url")
    }

    /// AddFileDataStream.
    pub fn add_file_data_stream(&self, stream: &str, text: &str) -> ClientResult<u64> {
        let v: Value = self.send("POST", &["streams", stream], &json!({ "text": text }))?;
        v["offset"]
            .as_u64()
            .ok_or_else(|| ClientError::Decode("missing `offset`".into()))
    }

    pub fn read_stream(&self, stream: &str, from: u64) -> ClientResult<Vec<StreamLine>> {
        let text = self.get_text(&["streams", stream], &[("from", from.to_string())])?;
        text.lines()
            .map(|l| {
                StreamLine::parse(l)
                    .ok_or_else(|| ClientError::Decode(format!("bad stream line `{l}`")))
            })
            .collect()
    }

    pub fn devices(&self) -> ClientResult<Vec<DeviceDescriptor>> {
        self.get_json(&["devices"], &[])
    }

    pub fn capabilities(&self, id: &DeviceId) -> ClientResult<Capabilities> {
        self.get_json(&["devices", id.as_str(), "capabilities"], &[])
    }

    pub fn register_device(&self, draft: &DescriptorDraft) -> ClientResult<DeviceDescriptor> {
        self.send("POST", &["devices"], draft)
    }

    pub fn disconnect_device(&self, id: &DeviceId) -> ClientResult<()> {
        self.delete(&["devices", id.as_str()])
    }

    pub fn create_rule(&self, spec: &RuleSpec) -> ClientResult<String> {
        let v: Value = self.send("POST", &["rules"], spec)?;
        string_field(&v, "ruleId")
    }

    pub fn rules(&self) -> ClientResult<Vec<Rule>> {
        self.get_json(&["rules"], &[])
    }

    pub fn delete_rule(&self, id: &str) -> ClientResult<()> {
        self.delete(&["rules", id])
    }

    pub fn set_rule_enabled(&self, id: &str, enabled: bool) -> ClientResult<Rule> {
        self.send("PATCH", &["rules", id], &json!({ "enabled": enabled }))
    }

    pub fn rule_log(&self, id: &str, limit: usize) -> ClientResult<Vec<FireLogEntry>> {
        self.get_json(&["rules", id, "log"], &[("limit", limit.to_string())])
    }

    pub fn monthly(
        &self,
        metric: Metric,
        from: YearMonth,
        to: YearMonth,
    ) -> ClientResult<Vec<MonthlyAggregate>> {
        self.get_json(
            &["telemetry", metric.as_str(), "monthly"],
            &[("from", from.to_string()), ("to", to.to_string())],
        )
    }

    pub fn monthly_csv(
        &self,
        metric: Metric,
        from: YearMonth,
        to: YearMonth,
    ) -> ClientResult<String> {
        self.get_text(
            &["telemetry", metric.as_str(), "monthly"],
            &[
                ("from", from.to_string()),
                ("to", to.to_string()),
                ("format", "csv".into()),
            ],
        )
    }

    /// Opens or closes a simulated door; `None` when it was already there.
    pub fn sim_door(&self, id: &DeviceId, open: bool) -> ClientResult<Option<EventRecord>> {
        let v: Value = self.send(
            "POST",
            &["sim", "door"],
            &json!({"deviceId": id, "open": open}),
        )?;
        serde_json::from_value(v["event"].clone()).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn sim_sample(&self, id: &DeviceId, value: f64) -> ClientResult<EventRecord> {
        let v: Value = self.send(
            "POST",
            &["sim", "sample"],
            &json!({"deviceId": id, "value": value}),
        )?;
        serde_json::from_value(v["event"].clone()).map_err(|e| ClientError::Decode(e.to_string()))
    }
}

fn string_field(v: &Value, key: &str) -> ClientResult<String> {
    v[key]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| ClientError::Decode(format!("missing `{key}`")))
}

/// Percent-encodes everything outside RFC 3986 `unreserved`.
fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_are_encoded() {
        assert_eq!(encode_segment("door1"), "door1");
        assert_eq!(encode_segment("a/b c"), "a%2Fb%20c");
    }

    #[test]
    fn unreachable_hub_is_a_connection_error() {
        let client = HubClient::new(&ClientConfig {
            base_url: "http://127.0.0.1:9".into(),
            auth_token: "t".into(),
            default_timeout_ms: 100,
        });
        let err = client.devices().unwrap_err();
        assert!(matches!(err, ClientError::Connection(_)), "{err:?}");
        assert_eq!(err.exit_code(), 3);
    }
}
