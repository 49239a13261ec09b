use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub id: String,
    pub category: String,
    /// EVT1 file, relative to the manifest directory.
    pub events: String,
    /// VOX1 file, relative to the manifest directory.
    pub label: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub entries: Vec<Entry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    /// Parses and checks the manifest; every referenced file must exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = HashSet::new();
        for e in &m.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(CliError::Data(format!("{}: duplicate sample id {}", path.display(), e.id)));
            }
            for f in [&e.events, &e.label] {
                let p = m.root.join(f);
                if !p.is_file() {
                    return Err(CliError::Data(format!(
                        "{}: sample {} references missing file {}",
                        path.display(),
                        e.id,
                        p.display()
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn path_of(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Entries in `split`, or all of them for `None`.
    pub fn select(&self, split: Option<Split>) -> Vec<&Entry> {
        self.entries.iter().filter(|e| split.map_or(true, |s| e.split == s)).collect()
    }
}

/// First eight bytes of SHA-256 over the parts, as a little-endian integer.
pub fn hash_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Ranks ids by a seeded per-id hash and cuts the ranking by `ratio`.
/// A sample's rank key never depends on list order.
pub fn assign_splits(ids: &[String], seed: u64, ratio: [u32; 3]) -> Vec<Split> {
    let n = ids.len();
    let total: u32 = ratio.iter().sum();
    let quota = |r: u32| ((n as f64) * r as f64 / total as f64).round() as usize;
    let n_train = quota(ratio[0]).min(n);
    let n_val = quota(ratio[1]).min(n - n_train);
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by_key(|&i| (hash_u64(&[b"split", &seed.to_le_bytes(), ids[i].as_bytes()]), i));
    let mut out = vec![Split::Test; n];
    for (rank, &i) in ranked.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}
