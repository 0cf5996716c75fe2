//! Backends for the hub's external effects: mail, blob storage and append-only
//! text streams. Each ships a filesystem implementation and an in-memory fake.

mod blob;
mod mail;
mod stream;

use std::fs;
use std::io::Write;
use std::path::Path;

use tempfile::NamedTempFile;

pub use blob::{BlobStore, DirBlobStore, MemoryBlobStore};
pub use mail::{
    render_message, Attachment, FsMailSink, MailSink, MemoryMailSink, OutgoingMail, SentMail,
};
pub use stream::{DataStreamStore, FileStreamStore, MemoryStreamStore, StreamLine};

use crate::error::{HubError, Result};

/// Container, blob and stream names: one path component from `[A-Za-z0-9._-]`.
pub fn check_path_component(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(HubError::InvalidName(name.to_owned()));
    }
    if name == "." || name == ".." || name.contains('/') || name.contains('\\') {
        return Err(HubError::PathEscape(name.to_owned()));
    }
    if !name
        .bytes()
        .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
    {
        return Err(HubError::InvalidName(name.to_owned()));
    }
    Ok(())
}

/// Writes `bytes` to a temp file next to `dest`, syncs it, and moves it into
/// place. Fails with `AlreadyExists` rather than replacing an existing file.
pub(crate) fn write_new_atomic(dest: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = synced_temp(dest, bytes)?;
    tmp.persist_noclobber(dest).map_err(|e| {
        if e.error.kind() == std::io::ErrorKind::AlreadyExists {
            HubError::AlreadyExists(dest.display().to_string())
        } else {
            e.error.into()
        }
    })?;
    Ok(())
}

/// Replaces `dest` atomically via rename.
pub(crate) fn write_replace_atomic(dest: &Path, bytes: &[u8]) -> Result<()> {
    synced_temp(dest, bytes)?
        .persist(dest)
        .map_err(|e| e.error)?;
    Ok(())
}

fn synced_temp(dest: &Path, bytes: &[u8]) -> Result<NamedTempFile> {
    let dir = dest.parent().expect("destination has a parent");
    fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    Ok(tmp)
}
