use std::path::{Path, PathBuf};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::{remote::decode, DetectorBackend, DetectorTag, GatewayError, PointResponse, Result};
use crate::render::RenderedView;

/// Hex SHA-256 of `png ∥ 0x00 ∥ prompt`.
pub fn replay_key(png: &[u8], prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(png);
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

pub enum ReplayMode {
    /// Forward to the inner backend and persist each response.
    Record(Box<dyn DetectorBackend>),
    /// Serve from the store only.
    Replay,
}

/// Content-addressed directory of detector responses, one `<key>.json` per
/// (image, prompt). Replay readers are lock-free. Record mode answers from an
/// existing entry when there is one, so identical images (symmetric views)
/// get the same answer in the recording run and in every replay; queries
/// for the same key are serialized so only one reaches the inner backend.
pub struct ReplayStore {
    dir: PathBuf,
    mode: ReplayMode,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ReplayStore {
    pub fn record(dir: &Path, inner: Box<dyn DetectorBackend>) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            mode: ReplayMode::Record(inner),
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn replay(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(GatewayError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("replay store {} does not exist", dir.display()),
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            mode: ReplayMode::Replay,
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn entry_count(&self) -> Result<usize> {
        Ok(std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count())
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(key.to_string()).or_default().clone()
    }

    fn read(&self, key: &str, prompt: &str) -> Result<PointResponse> {
        match std::fs::read_to_string(self.entry_path(key)) {
            Ok(text) => decode(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(GatewayError::CacheMiss {
                key: key.to_string(),
                prompt: prompt.to_string(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn store(&self, key: &str, body: &[u8]) -> Result<()> {
        let path = self.entry_path(key);
        if path.exists() {
            return Ok(());
        }
        let tmp = self.dir.join(format!(".{key}.tmp"));
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}

impl DetectorBackend for ReplayStore {
    fn point(&self, view: &RenderedView, prompt: &str) -> Result<PointResponse> {
        let key = replay_key(view.png_bytes(), prompt);
        match &self.mode {
            ReplayMode::Record(inner) => {
                let lock = self.key_lock(&key);
                let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
                match self.read(&key, prompt) {
                    Err(GatewayError::CacheMiss { .. }) => {}
                    hit => return hit,
                }
                let resp = inner.point(view, prompt)?;
                let body = serde_json::to_vec(&resp).expect("response serializes");
                self.store(&key, &body)?;
                Ok(resp)
            }
            ReplayMode::Replay => self.read(&key, prompt),
        }
    }

    fn tag(&self) -> DetectorTag {
        match &self.mode {
            ReplayMode::Record(inner) => inner.tag(),
            ReplayMode::Replay => DetectorTag::Replay,
        }
    }
}
