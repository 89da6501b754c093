use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ServiceError;

/// Artifact kinds, one subdirectory each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Corpora,
    Enrichments,
    Topics,
    Samples,
    Reports,
    Chats,
    Evals,
    Jobs,
}

impl Kind {
    pub const ALL: [Kind; 8] =
        [Kind::Corpora, Kind::Enrichments, Kind::Topics, Kind::Samples, Kind::Reports, Kind::Chats, Kind::Evals, Kind::Jobs];

    pub fn dir(self) -> &'static str {
        match self {
            Kind::Corpora => "corpora",
            Kind::Enrichments => "enrichments",
            Kind::Topics => "topics",
            Kind::Samples => "samples",
            Kind::Reports => "reports",
            Kind::Chats => "chats",
            Kind::Evals => "evals",
            Kind::Jobs => "jobs",
        }
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Ids become file names, so only a conservative alphabet is allowed.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// JSON files under `root/<kind>/<id>.json`, written by temp file and
/// rename so a record is either complete or absent.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        for kind in Kind::ALL {
            fs::create_dir_all(root.join(kind.dir()))?;
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, kind: Kind, id: &str) -> PathBuf {
        self.root.join(kind.dir()).join(format!("{id}.json"))
    }

    pub fn exists(&self, kind: Kind, id: &str) -> bool {
        valid_id(id) && self.path(kind, id).is_file()
    }

    pub fn put<T: Serialize>(&self, kind: Kind, id: &str, value: &T) -> Result<PathBuf, ServiceError> {
        if !valid_id(id) {
            return Err(ServiceError::BadRequest(format!("invalid id `{id}`")));
        }
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let target = self.path(kind, id);
        let dir = target.parent().expect("record paths have a parent");
        let tmp = dir.join(format!(
            ".{id}.{}.{}.tmp",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let result = (|| {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(&bytes)?;
            file.sync_all()?;
            fs::rename(&tmp, &target)
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result?;
        Ok(target)
    }

    pub fn get<T: DeserializeOwned>(&self, kind: Kind, id: &str) -> Result<T, ServiceError> {
        if !valid_id(id) {
            return Err(ServiceError::NotFound(format!("{} `{id}`", kind.dir())));
        }
        let bytes = match fs::read(self.path(kind, id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::NotFound(format!("{} `{id}`", kind.dir())))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes)
            .map_err(|e| ServiceError::Internal(format!("corrupt record {}/{id}: {e}", kind.dir())))
    }

    /// Ids of every record of `kind`, sorted.
    pub fn list(&self, kind: Kind) -> Result<Vec<String>, ServiceError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join(kind.dir()))? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".json") {
                if !name.starts_with('.') {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn all<T: DeserializeOwned>(&self, kind: Kind) -> Result<Vec<T>, ServiceError> {
        self.list(kind)?.iter().map(|id| self.get(kind, id)).collect()
    }
}
