//! Result persistence: envelopes, atomic writes and the content-addressed cache.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::commands::{execute, Output};
use crate::config::ExperimentConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub config_hash: String,
    pub tool_version: String,
    pub wall_time_s: f64,
    pub cache_hit: bool,
    pub payload: Json,
}

/// Cached run; `digest` covers the payload text and every file so corruption is detected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    config_hash: String,
    payload: String,
    files: Vec<(String, String)>,
    suite_failed: bool,
    digest: String,
}

fn digest(payload: &str, files: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    h.update(payload.as_bytes());
    for (name, body) in files {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((body.len() as u64).to_le_bytes());
        h.update(body.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{command}: {source}")]
    Compute { command: String, source: szego_core::Error },
    #[error("cannot write results: {0}")]
    Io(#[from] std::io::Error),
}

pub struct RunOutcome {
    pub envelope: ResultEnvelope,
    pub run_dir: PathBuf,
    pub suite_failed: bool,
    /// Set when a cache entry existed but could not be used.
    pub cache_warning: Option<String>,
}

fn load_cache(path: &Path, hash: &str) -> Result<Option<CacheEntry>, String> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(format!("unreadable cache entry {}: {e}", path.display())),
    };
    let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| format!("corrupt cache entry {}: {e}", path.display()))?;
    if entry.config_hash != hash || entry.digest != digest(&entry.payload, &entry.files) {
        return Err(format!("corrupt cache entry {}: digest mismatch", path.display()));
    }
    Ok(Some(entry))
}

/// Runs a validated config under `out`, replaying the cache on a hit.
/// Layout: `out/<hash>/{payload.json, envelope.json, data files}` and `out/cache/<hash>.json`.
pub fn run(cfg: &ExperimentConfig, out: &Path, use_cache: bool) -> Result<RunOutcome, RunError> {
    let start = Instant::now();
    let hash = cfg.hash();
    let cache_path = out.join("cache").join(format!("{hash}.json"));
    let mut cache_warning = None;
    let cached = if use_cache {
        match load_cache(&cache_path, &hash) {
            Ok(c) => c,
            Err(w) => {
                cache_warning = Some(w);
                None
            }
        }
    } else {
        None
    };
    let cache_hit = cached.is_some();
    let entry = match cached {
        Some(e) => e,
        None => {
            let Output { payload, files, suite_failed } =
                execute(cfg).map_err(|source| RunError::Compute { command: cfg.command.to_string(), source })?;
            let payload = format!("{}\n", serde_json::to_string_pretty(&payload).expect("payload serializes"));
            let digest = digest(&payload, &files);
            let e = CacheEntry { config_hash: hash.clone(), payload, files, suite_failed, digest };
            if use_cache {
                write_atomic(&cache_path, serde_json::to_string(&e).expect("cache entry serializes").as_bytes())?;
            }
            e
        }
    };
    let run_dir = out.join(&hash);
    write_atomic(&run_dir.join("config.txt"), cfg.canonical_text().as_bytes())?;
    write_atomic(&run_dir.join("payload.json"), entry.payload.as_bytes())?;
    for (name, body) in &entry.files {
        write_atomic(&run_dir.join(name), body.as_bytes())?;
    }
    let envelope = ResultEnvelope {
        config_hash: hash,
        tool_version: TOOL_VERSION.into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        cache_hit,
        payload: serde_json::from_str(&entry.payload).expect("stored payload is JSON"),
    };
    let env_text = format!("{}\n", serde_json::to_string_pretty(&envelope).expect("envelope serializes"));
    write_atomic(&run_dir.join("envelope.json"), env_text.as_bytes())?;
    Ok(RunOutcome { envelope, run_dir, suite_failed: entry.suite_failed, cache_warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_separates_file_boundaries() {
        let a = digest("p", &[("ab".into(), "c".into())]);
        let b = digest("p", &[("a".into(), "bc".into())]);
        assert_ne!(a, b);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x/y.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
