use std::collections::HashMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;

use super::{check_path_component, write_new_atomic};
use crate::error::{HubError, Result};

/// Write-once object storage addressed by `(container, name)`.
pub trait BlobStore: Send + Sync {
    /// Stores the bytes and returns a URL for them. Refuses to overwrite.
    fn put(&self, container: &str, name: &str, mime: &str, bytes: &[u8]) -> Result<String>;
    fn get(&self, container: &str, name: &str) -> Result<Vec<u8>>;
    fn exists(&self, container: &str, name: &str) -> Result<bool>;
}

/// Stores blobs as files under `root/container/name`.
#[derive(Debug, Clone)]
pub struct DirBlobStore {
    root: PathBuf,
}

impl DirBlobStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root: fs::canonicalize(&root)?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, container: &str, name: &str) -> Result<PathBuf> {
        check_path_component(container)?;
        check_path_component(name)?;
        Ok(self.root.join(container).join(name))
    }
}

impl BlobStore for DirBlobStore {
    fn put(&self, container: &str, name: &str, _mime: &str, bytes: &[u8]) -> Result<String> {
        let path = self.path(container, name)?;
        write_new_atomic(&path, bytes).map_err(|e| match e {
            HubError::AlreadyExists(_) => HubError::AlreadyExists(format!("{container}/{name}")),
            HubError::Io(io) => HubError::StoreFailure(io.to_string()),
            other => other,
        })?;
        Ok(format!("file://{}", path.display()))
    }

    fn get(&self, container: &str, name: &str) -> Result<Vec<u8>> {
        let path = self.path(container, name)?;
        fs::read(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => HubError::UnknownBlob(format!("{container}/{name}")),
            _ => HubError::StoreFailure(e.to_string()),
        })
    }

    fn exists(&self, container: &str, name: &str) -> Result<bool> {
        Ok(self.path(container, name)?.is_file())
    }
}

#[derive(Debug, Default)]
pub struct MemoryBlobStore {
    objects: Mutex<HashMap<(String, String), Vec<u8>>>,
}

impl MemoryBlobStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Names stored in `container`, sorted.
    pub fn names(&self, container: &str) -> Vec<String> {
        let mut names: Vec<String> = self
            .objects
            .lock()
            .keys()
            .filter(|(c, _)| c == container)
            .map(|(_, n)| n.clone())
            .collect();
        names.sort();
        names
    }
}

impl BlobStore for MemoryBlobStore {
    fn put(&self, container: &str, name: &str, _mime: &str, bytes: &[u8]) -> Result<String> {
        check_path_component(container)?;
        check_path_component(name)?;
        let mut objects = self.objects.lock();
        let key = (container.to_owned(), name.to_owned());
        if objects.contains_key(&key) {
            return Err(HubError::AlreadyExists(format!("{container}/{name}")));
        }
        objects.insert(key, bytes.to_vec());
        Ok(format!("mem://{container}/{name}"))
    }

    fn get(&self, container: &str, name: &str) -> Result<Vec<u8>> {
        check_path_component(container)?;
        check_path_component(name)?;
        self.objects
            .lock()
            .get(&(container.to_owned(), name.to_owned()))
            .cloned()
            .ok_or_else(|| HubError::UnknownBlob(format!("{container}/{name}")))
    }

    fn exists(&self, container: &str, name: &str) -> Result<bool> {
        check_path_component(container)?;
        check_path_component(name)?;
        Ok(self
            .objects
            .lock()
            .contains_key(&(container.to_owned(), name.to_owned())))
    }
}
