//! The Generic App operations, independent of transport. The HTTP server,
//! the rule engine and the C ABI all call through here.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::adapters::{
    check_path_component, Attachment, BlobStore, DataStreamStore, MailSink, OutgoingMail,
    StreamLine,
};
use crate::clock::Clock;
use crate::error::{HubError, Result};
use crate::images::ImageStore;
use crate::kernel::{Kernel, Polled, SubscriptionFilter, MAX_POLL_BATCH, MAX_POLL_TIMEOUT_MS};
use crate::model::{
    ActionDescriptor, BlobRef, DeviceDescriptor, DeviceId, DeviceKind, Payload, PayloadValue,
    ACTION_TAKE_PICTURE, KEY_IMAGE,
};

/// Event and action names a device exposes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub events: Vec<String>,
    pub actions: Vec<String>,
}

/// The three external effect backends.
#[derive(Clone)]
pub struct Backends {
    pub mail: Arc<dyn MailSink>,
    pub blobs: Arc<dyn BlobStore>,
    pub streams: Arc<dyn DataStreamStore>,
}

pub struct GenericApp {
    kernel: Arc<Kernel>,
    images: Arc<ImageStore>,
    backends: Backends,
}

impl GenericApp {
    pub fn new(kernel: Arc<Kernel>, images: Arc<ImageStore>, backends: Backends) -> Self {
        Self {
            kernel,
            images,
            backends,
        }
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        self.kernel.clock()
    }

    pub fn images(&self) -> &Arc<ImageStore> {
        &self.images
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    /// WatchEvent.
    pub fn watch_event(&self, filter: SubscriptionFilter) -> Result<String> {
        Ok(self.kernel.watch(filter)?.id().to_owned())
    }

    /// GetNewEvent.
    pub fn get_new_event(&self, sub_id: &str, timeout_ms: u64, max_batch: usize) -> Result<Polled> {
        if timeout_ms > MAX_POLL_TIMEOUT_MS {
            return Err(HubError::InvalidArgument(format!(
                "timeoutMs must be <= {MAX_POLL_TIMEOUT_MS}"
            )));
        }
        if max_batch == 0 || max_batch > MAX_POLL_BATCH {
            return Err(HubError::InvalidArgument(format!(
                "max must be in 1..={MAX_POLL_BATCH}"
            )));
        }
        self.kernel
            .poll(sub_id, Duration::from_millis(timeout_ms), max_batch)
    }

    /// GetImage: a fresh capture from the camera.
    pub fn get_image(&self, camera: &DeviceId) -> Result<BlobRef> {
        let dev = self.kernel.device(camera)?;
        if dev.kind != DeviceKind::Camera {
            return Err(HubError::WrongKind(camera.to_string()));
        }
        let out = self.kernel.invoke_action(&ActionDescriptor {
            device_id: camera.clone(),
            action_name: ACTION_TAKE_PICTURE.into(),
            params: Payload::new(),
        })?;
        out.get(KEY_IMAGE)
            .and_then(PayloadValue::as_blob)
            .cloned()
            .ok_or_else(|| HubError::DriverFailure("camera returned no image".into()))
    }

    pub fn blob(&self, id: &str) -> Result<(BlobRef, Vec<u8>)> {
        self.images.resolve(id)
    }

    /// SendEmailWithImage.
    pub fn send_email_with_image(
        &self,
        to: &str,
        subject: &str,
        body: &str,
        image_id: &str,
    ) -> Result<String> {
        check_address(to)?;
        let (blob, bytes) = self.images.resolve(image_id)?;
        let mail = OutgoingMail {
            to: to.to_owned(),
            subject: subject.to_owned(),
            body: body.to_owned(),
            attachment: Some(Attachment {
                filename: attachment_name(&blob),
                mime: blob.mime.clone(),
                bytes,
            }),
        };
        self.send_mail(&mail)
    }

    pub fn send_mail(&self, mail: &OutgoingMail) -> Result<String> {
        check_address(&mail.to)?;
        self.backends.mail.send(mail).map_err(|e| match e {
            HubError::Io(io) => HubError::SinkFailure(io.to_string()),
            other => other,
        })
    }

    /// UploadPicture: copies a capture into the blob backend.
    pub fn upload_picture(&self, image_id: &str, container: &str, name: &str) -> Result<String> {
        let (blob, bytes) = self.images.resolve(image_id)?;
        check_path_component(container)?;
        check_path_component(name)?;
        self.backends
            .blobs
            .put(container, name, &blob.mime, &bytes)
            .map_err(|e| match e {
                HubError::Io(io) => HubError::StoreFailure(io.to_string()),
                other => other,
            })
    }

    /// AddFileDataStream.
    pub fn add_file_data_stream(&self, stream: &str, text: &str) -> Result<u64> {
        self.backends
            .streams
            .append(stream, self.clock().now_ms(), text)
            .map_err(|e| match e {
                HubError::Io(io) => HubError::StoreFailure(io.to_string()),
                other => other,
            })
    }

    pub fn read_stream(&self, stream: &str, from: u64) -> Result<Vec<StreamLine>> {
        self.backends.streams.read(stream, from)
    }

    pub fn list_devices(&self) -> Result<Vec<DeviceDescriptor>> {
        self.kernel.list_devices()
    }

    pub fn capabilities(&self, id: &DeviceId) -> Result<Capabilities> {
        let dev = self.kernel.device(id)?;
        Ok(Capabilities {
            events: dev
                .kind
                .event_names()
                .iter()
                .map(|s| s.to_string())
                .collect(),
            actions: dev
                .kind
                .action_names()
                .iter()
                .map(|s| s.to_string())
                .collect(),
        })
    }
}

fn attachment_name(blob: &BlobRef) -> String {
    let ext = if blob.mime == "image/png" {
        "png"
    } else {
        "bin"
    };
    format!("image-{}.{ext}", &blob.id[..12.min(blob.id.len())])
}

/// addr-spec shape: exactly one `@` with non-empty sides, no whitespace.
pub fn check_address(to: &str) -> Result<()> {
    let ok = match to.split_once('@') {
        Some((local, domain)) => {
            !local.is_empty()
                && !domain.is_empty()
                && !domain.contains('@')
                && !to.chars().any(char::is_whitespace)
        }
        None => false,
    };
    if ok {
        Ok(())
    } else {
        Err(HubError::InvalidAddress(to.to_owned()))
    }
}
