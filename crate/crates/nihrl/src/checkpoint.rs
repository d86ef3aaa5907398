//! Checkpoint files.
//!
//! A checkpoint is one magic line, one line of JSON manifest, then the raw
//! parameters as little-endian `f32`:
//!
//! ```text
//! NIHRL-CHECKPOINT
//! {"version":1,"kind":"low","entries":[{"group":"low_policy","name":"l0.w","shape":[9,256],"offset":0,"len":2304},...],"sha256":"..."}
//! <blob>
//! ```
//!
//! `offset` is in bytes from the start of the blob, `len` in elements, and
//! `sha256` is the digest of the blob.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use nihrl_core::sac::SacAgent;
use nihrl_core::train::{HighLevel, LowLevel};
use nihrl_core::{Persist, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &str = "NIHRL-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("checkpoint blob does not match its digest")]
    Digest,
    #[error("expected a {expected} checkpoint, found {found}")]
    Kind { expected: Kind, found: Kind },
    #[error("`{group}/{name}` has shape {found:?} in the checkpoint, the model needs {expected:?}")]
    Shape { group: String, name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint has no entry `{group}/{name}`")]
    Missing { group: String, name: String },
    #[error("checkpoint entry `{group}/{name}` has no place in the model")]
    Unexpected { group: String, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// Pre-trained low level.
    Low,
    /// Task-trained high level.
    High,
    /// Flat SAC baseline.
    Flat,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Low => "low",
            Kind::High => "high",
            Kind::Flat => "flat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: Kind,
    pub entries: Vec<Entry>,
    pub sha256: String,
}

pub type Groups<'a> = Vec<(&'static str, Vec<(String, &'a Tensor<f32>)>)>;
pub type GroupsMut<'a> = Vec<(&'static str, Vec<(String, &'a mut Tensor<f32>)>)>;

pub fn encode(kind: Kind, groups: &Groups<'_>) -> Vec<u8> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (group, tensors) in groups {
        for (name, t) in tensors {
            entries.push(Entry {
                group: group.to_string(),
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
                len: t.len() as u64,
            });
            for x in t.data() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let manifest = Manifest { version: VERSION, kind, entries, sha256: sha256_hex(&blob) };
    let mut out = format!("{MAGIC}\n{}\n", serde_json::to_string(&manifest).expect("manifest serializes")).into_bytes();
    out.extend_from_slice(&blob);
    out
}

/// Splits a checkpoint into its manifest and verified blob.
pub fn decode(bytes: &[u8]) -> Result<(Manifest, &[u8]), CheckpointError> {
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    if lines.next() != Some(MAGIC.as_bytes()) {
        return Err(CheckpointError::Format("missing magic line".into()));
    }
    let head = lines.next().ok_or_else(|| CheckpointError::Format("missing manifest".into()))?;
    let blob = lines.next().ok_or_else(|| CheckpointError::Format("missing parameter blob".into()))?;
    let manifest: Manifest = serde_json::from_slice(head).map_err(|e| CheckpointError::Format(format!("bad manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {}", manifest.version)));
    }
    if sha256_hex(blob) != manifest.sha256 {
        return Err(CheckpointError::Digest);
    }
    Ok((manifest, blob))
}

/// Copies every entry of a decoded checkpoint into `groups`. Every model
/// tensor must be present with the same shape, and nothing may be left over.
pub fn restore(bytes: &[u8], kind: Kind, groups: GroupsMut<'_>) -> Result<(), CheckpointError> {
    let (manifest, blob) = decode(bytes)?;
    if manifest.kind != kind {
        return Err(CheckpointError::Kind { expected: kind, found: manifest.kind });
    }
    let mut by_name: HashMap<(String, String), &Entry> =
        manifest.entries.iter().map(|e| ((e.group.clone(), e.name.clone()), e)).collect();
    for (group, tensors) in groups {
        for (name, t) in tensors {
            let e = by_name
                .remove(&(group.to_string(), name.clone()))
                .ok_or_else(|| CheckpointError::Missing { group: group.into(), name: name.clone() })?;
            if e.shape != t.shape() {
                return Err(CheckpointError::Shape {
                    group: group.into(),
                    name,
                    expected: t.shape().to_vec(),
                    found: e.shape.clone(),
                });
            }
            let (start, end) = (e.offset as usize, e.offset as usize + 4 * e.len as usize);
            if e.len as usize != t.len() || end > blob.len() {
                return Err(CheckpointError::Format(format!("entry `{group}/{name}` overruns the blob")));
            }
            for (x, b) in t.data_mut().iter_mut().zip(blob[start..end].chunks_exact(4)) {
                *x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
    }
    if let Some(((group, name), _)) = by_name.into_iter().next() {
        return Err(CheckpointError::Unexpected { group, name });
    }
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    fs::write(path, bytes).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a whole file.
pub fn file_digest(path: &Path) -> Result<String, CheckpointError> {
    Ok(sha256_hex(&read(path)?))
}

pub fn flat_groups(agent: &SacAgent<f32>) -> Groups<'_> {
    vec![("policy", agent.policy.tensors()), ("critic", agent.critic.tensors()), ("temperature", agent.temperature.tensors())]
}

pub fn flat_groups_mut(agent: &mut SacAgent<f32>) -> GroupsMut<'_> {
    vec![
        ("policy", agent.policy.tensors_mut()),
        ("critic", agent.critic.tensors_mut()),
        ("temperature", agent.temperature.tensors_mut()),
    ]
}

pub fn save_low(path: &Path, low: &LowLevel) -> Result<(), CheckpointError> {
    write(path, &encode(Kind::Low, &low.groups()))
}

pub fn load_low(path: &Path, low: &mut LowLevel) -> Result<(), CheckpointError> {
    restore(&read(path)?, Kind::Low, low.groups_mut())
}

pub fn save_high(path: &Path, high: &HighLevel) -> Result<(), CheckpointError> {
    write(path, &encode(Kind::High, &high.groups()))
}

pub fn load_high(path: &Path, high: &mut HighLevel) -> Result<(), CheckpointError> {
    restore(&read(path)?, Kind::High, high.groups_mut())
}

pub fn save_flat(path: &Path, agent: &SacAgent<f32>) -> Result<(), CheckpointError> {
    write(path, &encode(Kind::Flat, &flat_groups(agent)))
}

pub fn load_flat(path: &Path, agent: &mut SacAgent<f32>) -> Result<(), CheckpointError> {
    restore(&read(path)?, Kind::Flat, flat_groups_mut(agent))
}

/// Kind recorded in a checkpoint file.
pub fn kind_of(path: &Path) -> Result<Kind, CheckpointError> {
    let bytes = read(path)?;
    Ok(decode(&bytes)?.0.kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nihrl_core::train::RunConfig;
    use nihrl_core::Rng;
    use rand::SeedableRng;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.network.hidden = vec![8, 8];
        c
    }

    fn values(groups: &Groups<'_>) -> Vec<u32> {
        groups.iter().flat_map(|(_, ts)| ts.iter().flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits()))).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = small();
        let a = LowLevel::new(&c, &mut Rng::seed_from_u64(1)).unwrap();
        let mut b = LowLevel::new(&c, &mut Rng::seed_from_u64(2)).unwrap();
        assert_ne!(values(&a.groups()), values(&b.groups()));
        let bytes = encode(Kind::Low, &a.groups());
        restore(&bytes, Kind::Low, b.groups_mut()).unwrap();
        assert_eq!(values(&a.groups()), values(&b.groups()));
        assert_eq!(encode(Kind::Low, &b.groups()), bytes);
    }

    #[test]
    fn manifest_offsets_tile_the_blob() {
        let c = small();
        let h = HighLevel::new(&c, &mut Rng::seed_from_u64(0)).unwrap();
        let bytes = encode(Kind::High, &h.groups());
        let (m, blob) = decode(&bytes).unwrap();
        let mut at = 0;
        for e in &m.entries {
            assert_eq!(e.offset, at);
            assert_eq!(e.len as usize, e.shape.iter().product::<usize>());
            at += 4 * e.len;
        }
        assert_eq!(at as usize, blob.len());
        assert!(m.entries.iter().any(|e| e.group == "high_critic" && e.name.starts_with("target")));
    }

    #[test]
    fn shape_mismatch_is_a_load_error() {
        let c = small();
        let a = LowLevel::new(&c, &mut Rng::seed_from_u64(1)).unwrap();
        let mut wide = c.clone();
        wide.skill.dim = 5;
        let mut b = LowLevel::new(&wide, &mut Rng::seed_from_u64(1)).unwrap();
        let err = restore(&encode(Kind::Low, &a.groups()), Kind::Low, b.groups_mut()).unwrap_err();
        assert!(matches!(err, CheckpointError::Shape { .. }), "{err}");
    }

    #[test]
    fn corrupted_and_foreign_files_are_rejected() {
        let c = small();
        let mut a = LowLevel::new(&c, &mut Rng::seed_from_u64(1)).unwrap();
        let mut bytes = encode(Kind::Low, &a.groups());
        assert!(matches!(restore(&bytes, Kind::High, a.groups_mut()), Err(CheckpointError::Kind { .. })));
        *bytes.last_mut().unwrap() ^= 1;
        assert!(matches!(restore(&bytes, Kind::Low, a.groups_mut()), Err(CheckpointError::Digest)));
        assert!(matches!(decode(b"hello\n{}\n"), Err(CheckpointError::Format(_))));
    }

    #[test]
    fn extra_entries_are_rejected() {
        let c = small();
        let a = LowLevel::new(&c, &mut Rng::seed_from_u64(1)).unwrap();
        let mut h = HighLevel::new(&c, &mut Rng::seed_from_u64(1)).unwrap();
        let mut groups = a.groups();
        groups.push(("extra", a.agent.temperature.tensors()));
        let bytes = encode(Kind::High, &groups);
        assert!(restore(&bytes, Kind::High, h.groups_mut()).is_err());
    }
}
