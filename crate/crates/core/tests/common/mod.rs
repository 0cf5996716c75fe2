//! Shared fixtures: hubs over either backend family, plus backend-agnostic
//! inspection of the mail, blob and stream effects.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use generichub::adapters::{BlobStore, MemoryBlobStore, MemoryMailSink, MemoryStreamStore};
use generichub::app::Backends;
use generichub::client::HubClient;
use generichub::clock::Clock;
use generichub::config::{BackendKind, ClientConfig, HubConfig};
use generichub::hub::Hub;
use generichub::model::{DescriptorDraft, DeviceId};
use generichub::server::ServerHandle;
use tempfile::TempDir;

pub const TOKEN: &str = "test-token";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Fs,
    Memory,
}

impl Backend {
    pub const ALL: [Backend; 2] = [Backend::Fs, Backend::Memory];

    pub fn label(self) -> &'static str {
        match self {
            Backend::Fs => "fs",
            Backend::Memory => "memory",
        }
    }
}

pub fn id(s: &str) -> DeviceId {
    DeviceId::new(s).unwrap()
}

pub fn draft(id: &str, kind: &str) -> DescriptorDraft {
    DescriptorDraft {
        id: id.into(),
        kind: kind.into(),
        name: id.into(),
        ..Default::default()
    }
}

/// The standard desk setup: a door, a camera, and both climate sensors.
pub const HOUSE: [(&str, &str); 4] = [
    ("door1", "door-sensor"),
    ("cam1", "camera"),
    ("temp1", "temperature-sensor"),
    ("hum1", "humidity-sensor"),
];

/// A captured outgoing message, independent of the sink that stored it.
#[derive(Debug, Clone)]
pub struct CapturedMail {
    pub to: String,
    pub subject: String,
    pub attachments: Vec<(String, Vec<u8>)>,
}

pub enum Effects {
    Fs {
        outbox: PathBuf,
        blob_root: PathBuf,
    },
    Memory {
        mail: Arc<MemoryMailSink>,
        blobs: Arc<MemoryBlobStore>,
        streams: Arc<MemoryStreamStore>,
    },
}

impl Effects {
    pub fn mails(&self) -> Vec<CapturedMail> {
        match self {
            Effects::Fs { outbox, .. } => {
                let Ok(dir) = std::fs::read_dir(outbox) else {
                    return Vec::new();
                };
                let mut paths: Vec<PathBuf> = dir
                    .map(|e| e.unwrap().path())
                    .filter(|p| p.extension().is_some_and(|e| e == "eml"))
                    .collect();
                paths.sort();
                paths
                    .iter()
                    .map(|p| parse_eml(&std::fs::read(p).unwrap()))
                    .collect()
            }
            Effects::Memory { mail, .. } => mail
                .sent()
                .into_iter()
                .map(|s| CapturedMail {
                    to: s.mail.to,
                    subject: s.mail.subject,
                    attachments: s
                        .mail
                        .attachment
                        .into_iter()
                        .map(|a| (a.mime, a.bytes))
                        .collect(),
                })
                .collect(),
        }
    }

    /// `(name, bytes)` of every object in `container`, sorted by name.
    pub fn uploads(&self, container: &str) -> Vec<(String, Vec<u8>)> {
        match self {
            Effects::Fs { blob_root, .. } => {
                let Ok(dir) = std::fs::read_dir(blob_root.join(container)) else {
                    return Vec::new();
                };
                let mut out: Vec<(String, Vec<u8>)> = dir
                    .map(|e| e.unwrap().path())
                    .filter(|p| p.is_file())
                    .map(|p| {
                        (
                            p.file_name().unwrap().to_string_lossy().into_owned(),
                            std::fs::read(&p).unwrap(),
                        )
                    })
                    .collect();
                out.sort();
                out
            }
            Effects::Memory { blobs, .. } => {
                let mut names = blobs.names(container);
                names.sort();
                names
                    .into_iter()
                    .map(|n| {
                        let bytes = blobs.get(container, &n).unwrap();
                        (n, bytes)
                    })
                    .collect()
            }
        }
    }
}

pub fn parse_eml(raw: &[u8]) -> CapturedMail {
    use mailparse::MailHeaderMap;
    let msg = mailparse::parse_mail(raw).expect("message parses");
    let header = |k: &str| msg.headers.get_first_value(k).unwrap_or_default();
    let attachments = msg
        .subparts
        .iter()
        .filter(|p| {
            p.get_content_disposition().disposition == mailparse::DispositionType::Attachment
        })
        .map(|p| (p.ctype.mimetype.clone(), p.get_body_raw().unwrap()))
        .collect();
    CapturedMail {
        to: header("To"),
        subject: header("Subject"),
        attachments,
    }
}

pub struct TestHub {
    pub hub: Arc<Hub>,
    pub effects: Effects,
    pub config: HubConfig,
    pub dir: TempDir,
}

pub fn config_in(dir: &TempDir, backend: Backend, devices: &[(&str, &str)]) -> HubConfig {
    let mut cfg = HubConfig::in_dir(dir.path().join("data"), TOKEN);
    cfg.listen = "127.0.0.1:0".into();
    cfg.backend = match backend {
        Backend::Fs => BackendKind::Fs,
        Backend::Memory => BackendKind::Memory,
    };
    cfg.devices = devices.iter().map(|(i, k)| draft(i, k)).collect();
    cfg
}

pub fn start_hub(backend: Backend, devices: &[(&str, &str)]) -> TestHub {
    let dir = tempfile::tempdir().unwrap();
    let config = config_in(&dir, backend, devices);
    start_with(dir, config)
}

/// Starts a hub from `config`; fs hubs reuse whatever is already on disk.
pub fn start_with(dir: TempDir, config: HubConfig) -> TestHub {
    start_custom(dir, config, None, None)
}

/// Starts a hub with an optional clock and, for memory hubs, optionally the
/// adapters of a previous run.
pub fn start_custom(
    dir: TempDir,
    config: HubConfig,
    clock: Option<Arc<dyn Clock>>,
    reuse: Option<Effects>,
) -> TestHub {
    let mut builder = Hub::builder(config.clone());
    if let Some(clock) = clock {
        builder = builder.clock(clock);
    }
    let (hub, effects) = match config.backend {
        BackendKind::Fs => {
            let effects = Effects::Fs {
                outbox: config.outbox_dir(),
                blob_root: config.blob_root(),
            };
            (builder.start().unwrap(), effects)
        }
        BackendKind::Memory => {
            let (mail, blobs, streams) = match reuse {
                Some(Effects::Memory {
                    mail,
                    blobs,
                    streams,
                }) => (mail, blobs, streams),
                _ => Default::default(),
            };
            let hub = builder
                .backends(Backends {
                    mail: mail.clone(),
                    blobs: blobs.clone(),
                    streams: streams.clone(),
                })
                .start()
                .unwrap();
            (
                hub,
                Effects::Memory {
                    mail,
                    blobs,
                    streams,
                },
            )
        }
    };
    TestHub {
        hub: Arc::new(hub),
        effects,
        config,
        dir,
    }
}

/// Stops `t` and starts a fresh hub over the same data directory and adapters.
pub fn restart(t: TestHub) -> TestHub {
    t.hub.stop().unwrap();
    let TestHub {
        hub,
        effects,
        config,
        dir,
    } = t;
    drop(hub);
    start_custom(dir, config, None, Some(effects))
}

/// Every regular file under `root`, keyed by relative path.
pub fn snapshot_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let Ok(entries) = std::fs::read_dir(dir) else {
            return;
        };
        for entry in entries {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn client_for(server: &ServerHandle, token: &str) -> HubClient {
    HubClient::new(&ClientConfig {
        base_url: server.base_url(),
        auth_token: token.into(),
        default_timeout_ms: 2_000,
    })
}

pub fn serve(hub: &Arc<Hub>) -> (ServerHandle, HubClient) {
    let server = ServerHandle::spawn(hub.clone(), "127.0.0.1:0").unwrap();
    let client = client_for(&server, TOKEN);
    (server, client)
}

/// Polls `cond` every few milliseconds until it holds or `timeout` passes.
pub fn wait_until(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if cond() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Decodes a PNG and returns its dimensions.
pub fn png_dims(bytes: &[u8]) -> (u32, u32) {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let reader = decoder.read_info().expect("valid PNG");
    let info = reader.info();
    (info.width, info.height)
}
