use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{sha256_hex, Request, Role};

/// Identity of a cached response.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub role: Role,
    pub model_name: String,
    /// SHA-256 of the canonical request body, hex encoded.
    pub request_digest: String,
}

impl CacheKey {
    pub fn for_request(request: &Request) -> Self {
        Self {
            role: request.role(),
            model_name: request.model().to_string(),
            request_digest: sha256_hex(&request.canonical_bytes()),
        }
    }
}

/// Content-addressed response store laid out as `<root>/<role>/<digest>`.
///
/// Entries never expire. Reads go straight to the file system; writes are
/// serialized and land through a rename, so a reader sees either nothing or
/// a complete entry.
#[derive(Debug)]
pub struct DiskCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskCache {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, write_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(key.role.as_str()).join(&key.request_digest)
    }

    pub fn get(&self, key: &CacheKey) -> io::Result<Option<String>> {
        match fs::read_to_string(self.path_for(key)) {
            Ok(body) => Ok(Some(body)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, key: &CacheKey, body: &str) -> io::Result<()> {
        let path = self.path_for(key);
        let _guard = self.write_lock.lock().expect("cache write lock");
        fs::create_dir_all(path.parent().expect("entry has a parent"))?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(body.as_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, path)
    }
}
