use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::{DateTime, TimeZone, Utc};
use parking_lot::Mutex;
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::error::{HubError, Result};

const MAIL_DOMAIN: &str = "generichub.local";
const B64_LINE: usize = 76;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub filename: String,
    pub mime: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutgoingMail {
    pub to: String,
    pub subject: String,
    pub body: String,
    pub attachment: Option<Attachment>,
}

pub trait MailSink: Send + Sync {
    /// Hands the message over and returns its message id.
    fn send(&self, mail: &OutgoingMail) -> Result<String>;
}

/// Renders an RFC 5322 message with CRLF line endings. With an attachment
/// the message is `multipart/mixed` (text part + base64 part wrapped at 76
/// columns); without one it is a single `text/plain` part.
pub fn render_message(
    mail: &OutgoingMail,
    date: DateTime<Utc>,
    message_id: &str,
) -> Result<String> {
    for (field, value) in [("to", &mail.to), ("subject", &mail.subject)] {
        if value.contains(['\r', '\n']) {
            return Err(HubError::InvalidArgument(format!(
                "{field} contains a line break"
            )));
        }
    }
    let mut out = String::new();
    let mut header = |name: &str, value: &str| {
        out.push_str(name);
        out.push_str(": ");
        out.push_str(value);
        out.push_str("\r\n");
    };
    header("To", &mail.to);
    header("Subject", &encode_header_text(&mail.subject));
    header("Date", &date.to_rfc2822());
    header("Message-ID", &format!("<{message_id}@{MAIL_DOMAIN}>"));
    header("MIME-Version", "1.0");

    let body = normalize_newlines(&mail.body);
    match &mail.attachment {
        None => {
            out.push_str("Content-Type: text/plain; charset=utf-8\r\n");
            out.push_str("Content-Transfer-Encoding: 8bit\r\n\r\n");
            out.push_str(&body);
            out.push_str("\r\n");
        }
        Some(att) => {
            if att.filename.contains(['"', '\r', '\n']) || att.mime.contains(['\r', '\n']) {
                return Err(HubError::InvalidArgument("bad attachment metadata".into()));
            }
            let boundary = boundary_for(message_id);
            out.push_str(&format!(
                "Content-Type: multipart/mixed; boundary=\"{boundary}\"\r\n\r\n"
            ));
            out.push_str(&format!("--{boundary}\r\n"));
            out.push_str("Content-Type: text/plain; charset=utf-8\r\n");
            out.push_str("Content-Transfer-Encoding: 8bit\r\n\r\n");
            out.push_str(&body);
            out.push_str("\r\n");
            out.push_str(&format!("--{boundary}\r\n"));
            out.push_str(&format!(
                "Content-Type: {}; name=\"{}\"\r\n",
                att.mime, att.filename
            ));
            out.push_str(&format!(
                "Content-Disposition: attachment; filename=\"{}\"\r\n",
                att.filename
            ));
            out.push_str("Content-Transfer-Encoding: base64\r\n\r\n");
            let encoded = B64.encode(&att.bytes);
            for chunk in encoded.as_bytes().chunks(B64_LINE) {
                // base64 output is ASCII
                out.push_str(std::str::from_utf8(chunk).unwrap());
                out.push_str("\r\n");
            }
            out.push_str(&format!("--{boundary}--\r\n"));
        }
    }
    Ok(out)
}

fn boundary_for(message_id: &str) -> String {
    let digest = Sha256::digest(message_id.as_bytes());
    format!("=_part_{}", hex::encode(&digest[..12]))
}

fn encode_header_text(text: &str) -> String {
    if text.is_ascii() {
        text.to_owned()
    } else {
        format!("=?utf-8?B?{}?=", B64.encode(text.as_bytes()))
    }
}

fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\n', "\r\n")
}

/// Writes each message to `outbox/{messageId}.eml`.
pub struct FsMailSink {
    outbox: PathBuf,
    clock: Arc<dyn Clock>,
    run_tag: String,
    counter: AtomicU64,
}

impl FsMailSink {
    pub fn new(outbox: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Self {
        let mut raw = [0u8; 4];
        rand::rng().fill_bytes(&mut raw);
        Self {
            outbox: outbox.into(),
            clock,
            run_tag: hex::encode(raw),
            counter: AtomicU64::new(0),
        }
    }

    pub fn outbox(&self) -> &PathBuf {
        &self.outbox
    }
}

impl MailSink for FsMailSink {
    fn send(&self, mail: &OutgoingMail) -> Result<String> {
        let now = self.clock.now_ms();
        let n = self.counter.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("{now}.{n:06}.{}", self.run_tag);
        let date = Utc.timestamp_millis_opt(now).single().unwrap_or_default();
        let text = render_message(mail, date, &id)?;
        fs::create_dir_all(&self.outbox)?;
        super::write_new_atomic(&self.outbox.join(format!("{id}.eml")), text.as_bytes())?;
        Ok(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentMail {
    pub message_id: String,
    pub mail: OutgoingMail,
}

/// Keeps messages in memory. Recipients registered with
/// [`MemoryMailSink::fail_for`] make `send` fail.
#[derive(Debug, Default)]
pub struct MemoryMailSink {
    sent: Mutex<Vec<SentMail>>,
    failing: Mutex<HashSet<String>>,
}

impl MemoryMailSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fail_for(&self, recipient: impl Into<String>) {
        self.failing.lock().insert(recipient.into());
    }

    pub fn sent(&self) -> Vec<SentMail> {
        self.sent.lock().clone()
    }
}

impl MailSink for MemoryMailSink {
    fn send(&self, mail: &OutgoingMail) -> Result<String> {
        if self.failing.lock().contains(&mail.to) {
            return Err(HubError::SinkFailure(format!(
                "injected failure for {}",
                mail.to
            )));
        }
        let mut sent = self.sent.lock();
        let id = format!("mem-{}", sent.len() + 1);
        sent.push(SentMail {
            message_id: id.clone(),
            mail: mail.clone(),
        });
        Ok(id)
    }
}
