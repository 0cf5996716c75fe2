//! Content-addressed store for captured images, layered on a [`BlobStore`].
//! A capture's id is the hex SHA-256 of its bytes.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::adapters::BlobStore;
use crate::error::{HubError, Result};
use crate::model::BlobRef;

pub const CAPTURE_CONTAINER: &str = "captures";
pub const PNG_MIME: &str = "image/png";

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

pub struct ImageStore {
    blobs: Arc<dyn BlobStore>,
}

impl ImageStore {
    pub fn new(blobs: Arc<dyn BlobStore>) -> Self {
        Self { blobs }
    }

    pub fn blobs(&self) -> &Arc<dyn BlobStore> {
        &self.blobs
    }

    pub fn put(&self, mime: &str, bytes: &[u8]) -> Result<BlobRef> {
        let sha = hex::encode(Sha256::digest(bytes));
        match self.blobs.put(CAPTURE_CONTAINER, &sha, mime, bytes) {
            Ok(_) | Err(HubError::AlreadyExists(_)) => {}
            Err(e) => return Err(e),
        }
        Ok(BlobRef {
            id: sha.clone(),
            mime: mime.to_owned(),
            size_bytes: bytes.len() as u64,
            sha256: sha,
        })
    }

    /// Loads a capture by id and re-verifies its digest.
    pub fn resolve(&self, id: &str) -> Result<(BlobRef, Vec<u8>)> {
        if id.len() != 64 || !id.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(HubError::UnknownBlob(id.to_owned()));
        }
        let bytes = self.blobs.get(CAPTURE_CONTAINER, id).map_err(|e| match e {
            HubError::UnknownBlob(_) => HubError::UnknownBlob(id.to_owned()),
            other => other,
        })?;
        let sha = hex::encode(Sha256::digest(&bytes));
        if sha != id {
            return Err(HubError::StoreFailure(format!(
                "blob {id} failed its integrity check"
            )));
        }
        let mime = if bytes.starts_with(PNG_MAGIC) {
            PNG_MIME
        } else {
            "application/octet-stream"
        };
        Ok((
            BlobRef {
                id: sha.clone(),
                mime: mime.to_owned(),
                size_bytes: bytes.len() as u64,
                sha256: sha,
            },
            bytes,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::MemoryBlobStore;

    #[test]
    fn put_resolve_and_reject_unknown() {
        let store = ImageStore::new(Arc::new(MemoryBlobStore::new()));
        let r = store.put(PNG_MIME, b"\x89PNG\r\n\x1a\nrest").unwrap();
        assert_eq!(r.id, r.sha256);
        assert_eq!(r.size_bytes, 12);
        let (back, bytes) = store.resolve(&r.id).unwrap();
        assert_eq!(back, r);
        assert_eq!(bytes.len(), 12);
        // same bytes twice is fine
        assert_eq!(store.put(PNG_MIME, b"\x89PNG\r\n\x1a\nrest").unwrap(), r);
        assert!(matches!(
            store.resolve("nope"),
            Err(HubError::UnknownBlob(_))
        ));
        assert!(matches!(
            store.resolve(&"0".repeat(64)),
            Err(HubError::UnknownBlob(_))
        ));
    }

    #[test]
    fn tampered_bytes_fail_integrity() {
        let blobs = Arc::new(MemoryBlobStore::new());
        let fake_id = "a".repeat(64);
        blobs
            .put(CAPTURE_CONTAINER, &fake_id, PNG_MIME, b"whatever")
            .unwrap();
        let store = ImageStore::new(blobs);
        assert_eq!(store.resolve(&fake_id).unwrap_err().code(), "store-failure");
    }
}
