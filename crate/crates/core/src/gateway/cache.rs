//! Append-only response cache keyed by (prompt id, sample index, profile hash).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

#[derive(serde::Serialize, serde::Deserialize)]
struct CacheLine {
    key: String,
    completion: String,
}

/// Concurrent readers, single writer per key. Entries survive process restarts
/// via a JSONL backing file, which makes probing runs resumable.
pub struct ResponseCache {
    inner: Mutex<CacheInner>,
}

struct CacheInner {
    map: HashMap<String, String>,
    file: File,
}

impl ResponseCache {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut map = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                    map.insert(entry.key, entry.completion);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ResponseCache {
            inner: Mutex::new(CacheInner { map, file }),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.inner.lock().unwrap().map.get(key).cloned()
    }

    pub fn put(&self, key: &str, completion: &str) {
        let mut inner = self.inner.lock().unwrap();
        if inner.map.contains_key(key) {
            return;
        }
        let line = serde_json::to_string(&CacheLine {
            key: key.to_string(),
            completion: completion.to_string(),
        })
        .expect("cache line serializes");
        let _ = writeln!(inner.file, "{line}");
        inner.map.insert(key.to_string(), completion.to_string());
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.put("a|0|ffff", "first");
            cache.put("a|1|ffff", "second");
        }
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.get("a|0|ffff").as_deref(), Some("first"));
        assert_eq!(cache.len(), 2);
    }
}
