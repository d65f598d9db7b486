//! Content-addressed response cache: one file per request digest.
//!
//! Layout: `{cache_dir}/{first 2 hex of digest}/{digest}.json`, each file
//! holding `{"request", "response", "timestamp"}`. Writes go to a temp file
//! that is hard-linked into place, so a fully-written entry appears
//! atomically and the first writer wins; losers adopt the winner's bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::GatewayError;
use convqa_core::chat::ChatRequest;

/// Serialize a JSON value with object keys sorted and no insignificant
/// whitespace. Equal values always produce equal bytes.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("string serializes"));
                out.push(':');
                write_canonical(&map[*key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&serde_json::to_string(other).expect("scalar serializes")),
    }
}

/// 256-bit digest of the canonical request plus the provider base URL.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    hex: String,
}

impl CacheKey {
    fn from_canonical(payload: &Value) -> CacheKey {
        let bytes = canonical_json(payload);
        let digest = Sha256::digest(bytes.as_bytes());
        CacheKey {
            hex: hex::encode(digest),
        }
    }

    pub fn for_chat(base_url: &str, req: &ChatRequest) -> CacheKey {
        let payload = serde_json::json!({
            "base_url": base_url,
            "endpoint": "chat.completions",
            "request": serde_json::to_value(req).expect("request serializes"),
        });
        CacheKey::from_canonical(&payload)
    }

    pub fn for_embedding(base_url: &str, model: &str, text: &str) -> CacheKey {
        let payload = serde_json::json!({
            "base_url": base_url,
            "endpoint": "embeddings",
            "request": { "model": model, "input": [text] },
        });
        CacheKey::from_canonical(&payload)
    }

    pub fn hex(&self) -> &str {
        &self.hex
    }
}

pub struct Cache {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

impl Cache {
    pub fn new(root: impl AsRef<Path>) -> Result<Cache, GatewayError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|source| GatewayError::CacheIo {
            path: root.display().to_string(),
            source,
        })?;
        Ok(Cache {
            root,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.root.join(&key.hex()[..2]).join(format!("{}.json", key.hex()))
    }

    /// Read the response stored for `key`, if any.
    pub fn read(&self, key: &CacheKey) -> Result<Option<Value>, GatewayError> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(GatewayError::CacheIo {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let entry: Value =
            serde_json::from_slice(&bytes).map_err(|e| GatewayError::CacheCorrupt {
                key: key.hex().to_string(),
                reason: e.to_string(),
            })?;
        let response = entry
            .get("response")
            .cloned()
            .ok_or_else(|| GatewayError::CacheCorrupt {
                key: key.hex().to_string(),
                reason: "missing `response` field".into(),
            })?;
        Ok(Some(response))
    }

    /// Persist a response for `key` unless one already exists, then return
    /// whatever response ended up persisted (the winner under races).
    pub fn write_once(
        &self,
        key: &CacheKey,
        request: &Value,
        response: &Value,
    ) -> Result<Value, GatewayError> {
        let path = self.entry_path(key);
        let dir = path.parent().expect("entry path has parent");
        fs::create_dir_all(dir).map_err(|source| GatewayError::CacheIo {
            path: dir.display().to_string(),
            source,
        })?;

        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let entry = serde_json::json!({
            "request": request,
            "response": response,
            "timestamp": timestamp,
        });
        let tmp = dir.join(format!(
            "{}.{}.{}.tmp",
            key.hex(),
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed),
        ));
        {
            let mut file = fs::File::create(&tmp).map_err(|source| GatewayError::CacheIo {
                path: tmp.display().to_string(),
                source,
            })?;
            file.write_all(serde_json::to_string_pretty(&entry).expect("entry serializes").as_bytes())
                .map_err(|source| GatewayError::CacheIo {
                    path: tmp.display().to_string(),
                    source,
                })?;
            file.sync_all().ok();
        }
        // First writer wins; AlreadyExists means someone else beat us.
        match fs::hard_link(&tmp, &path) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {}
            Err(source) => {
                let _ = fs::remove_file(&tmp);
                return Err(GatewayError::CacheIo {
                    path: path.display().to_string(),
                    source,
                });
            }
        }
        let _ = fs::remove_file(&tmp);

        self.read(key)?.ok_or_else(|| GatewayError::CacheCorrupt {
            key: key.hex().to_string(),
            reason: "entry vanished after write".into(),
        })
    }

    /// Number of persisted entries (for tests and status output).
    pub fn entry_count(&self) -> usize {
        let mut count = 0;
        if let Ok(shards) = fs::read_dir(&self.root) {
            for shard in shards.flatten() {
                if let Ok(entries) = fs::read_dir(shard.path()) {
                    count += entries
                        .flatten()
                        .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                        .count();
                }
            }
        }
        count
    }
}
