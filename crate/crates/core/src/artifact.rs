//! Binary container for trained components.
//!
//! Layout: 8-byte magic, `u32` format version, `u8` kind, `u64` payload
//! length (all little-endian), the JSON payload, then a SHA-256 digest of
//! every preceding byte.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{AnyClassifier, ClassifierConfig};
use crate::data::TabularSchema;
use crate::error::{Error, Result};
use crate::lgmvae::{CentroidCheck, LgmvaeModel, TrainReport};

pub const MAGIC: [u8; 8] = *b"LPCEART\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 1 + 8;
const DIGEST: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ArtifactKind {
    Classifier = 1,
    Lgmvae = 2,
}

impl ArtifactKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Self::Classifier),
            2 => Ok(Self::Lgmvae),
            other => Err(Error::Artifact(format!("unknown component kind {other}"))),
        }
    }
}

pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: ArtifactKind;
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ClassifierArtifact {
    pub schema: TabularSchema,
    pub config: ClassifierConfig,
    pub classifier: AnyClassifier,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

impl Artifact for ClassifierArtifact {
    const KIND: ArtifactKind = ArtifactKind::Classifier;
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LgmvaeArtifact {
    pub model: LgmvaeModel,
    pub training: TrainReport,
    pub centroid_check: CentroidCheck,
}

impl Artifact for LgmvaeArtifact {
    const KIND: ArtifactKind = ArtifactKind::Lgmvae;
}

pub fn to_bytes<A: Artifact>(artifact: &A) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(artifact)?;
    let mut out = Vec::with_capacity(HEADER + payload.len() + DIGEST);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(A::KIND as u8);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn from_bytes<A: Artifact>(bytes: &[u8]) -> Result<A> {
    if bytes.len() < HEADER + DIGEST || bytes[..8] != MAGIC {
        return Err(Error::Artifact("not an artifact file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Artifact("checksum mismatch".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let kind = ArtifactKind::from_byte(body[12])?;
    if kind != A::KIND {
        return Err(Error::Artifact(format!("expected a {:?} artifact, found {kind:?}", A::KIND)));
    }
    let len = u64::from_le_bytes(body[13..21].try_into().expect("8 bytes"));
    let payload = &body[HEADER..];
    if payload.len() as u64 != len {
        return Err(Error::Artifact("payload length mismatch".into()));
    }
    serde_json::from_slice(payload).map_err(|e| Error::Artifact(format!("payload: {e}")))
}

pub fn save<A: Artifact>(artifact: &A, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(artifact)?).map_err(|e| Error::io(path, e))
}

pub fn load<A: Artifact>(path: &Path) -> Result<A> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
}

/// Lowercase hex SHA-256 of a file.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
