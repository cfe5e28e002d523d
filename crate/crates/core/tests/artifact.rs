mod common;

use common::{fixture, small_config};
use lapace_core::artifact::*;
use lapace_core::classifiers::{ClassifierConfig, ForestConfig};
use lapace_core::pipeline::{prepare_data, train_classifier};
use lapace_core::Error;
use sha2::{Digest, Sha256};

fn round_trip<A: Artifact + PartialEq + std::fmt::Debug>(artifact: &A) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.bin");
    save(artifact, &path).unwrap();
    let loaded: A = load(&path).unwrap();
    assert_eq!(&loaded, artifact);
    let again = dir.path().join("b.bin");
    save(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(file_digest(&path).unwrap(), file_digest(&again).unwrap());
}

#[test]
fn classifier_round_trip_is_byte_identical() {
    round_trip(&fixture().classifier);
    let mut cfg = small_config(3);
    cfg.classifier = ClassifierConfig::Forest(ForestConfig::default());
    let data = prepare_data(&cfg).unwrap();
    round_trip(&train_classifier(&cfg, &data).unwrap());
}

#[test]
fn lgmvae_round_trip_is_byte_identical() {
    let a = &fixture().lgmvae;
    round_trip(a);
    let bytes = to_bytes(a).unwrap();
    let back: LgmvaeArtifact = from_bytes(&bytes).unwrap();
    assert_eq!(back.model.recourse_ready, a.model.recourse_ready);
    assert_eq!(back.model.centroids(1).unwrap(), a.model.centroids(1).unwrap());
}

fn reseal(mut body: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    body
}

#[test]
fn damaged_files_are_rejected() {
    let bytes = to_bytes(&fixture().classifier).unwrap();
    let body = bytes[..bytes.len() - 32].to_vec();
    assert_eq!(&bytes[..8], &MAGIC);

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x01;
    let err = from_bytes::<ClassifierArtifact>(&flipped).unwrap_err();
    assert!(matches!(&err, Error::Artifact(m) if m.contains("checksum")), "{err}");

    let mut digest_broken = bytes.clone();
    *digest_broken.last_mut().unwrap() ^= 0xff;
    assert!(from_bytes::<ClassifierArtifact>(&digest_broken).is_err());

    assert!(from_bytes::<ClassifierArtifact>(&bytes[..bytes.len() - 1]).is_err());
    assert!(from_bytes::<ClassifierArtifact>(&bytes[..10]).is_err());
    assert!(from_bytes::<ClassifierArtifact>(b"").is_err());

    let mut newer = body.clone();
    newer[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let err = from_bytes::<ClassifierArtifact>(&reseal(newer)).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");

    let err = from_bytes::<LgmvaeArtifact>(&bytes).unwrap_err();
    assert!(err.to_string().contains("expected"), "{err}");

    let mut unknown = body.clone();
    unknown[12] = 9;
    assert!(from_bytes::<ClassifierArtifact>(&reseal(unknown)).is_err());

    let mut long = body.clone();
    long[13..21].copy_from_slice(&((body.len() as u64) * 2).to_le_bytes());
    assert!(from_bytes::<ClassifierArtifact>(&reseal(long)).is_err());

    let mut magic = body;
    magic[0] = b'X';
    assert!(from_bytes::<ClassifierArtifact>(&reseal(magic)).is_err());
}

#[test]
fn load_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    std::fs::write(&path, b"not an artifact at all, clearly not one").unwrap();
    let err = load::<ClassifierArtifact>(&path).unwrap_err();
    assert!(err.to_string().contains("bad.bin"));
    assert!(matches!(load::<ClassifierArtifact>(&dir.path().join("missing")), Err(Error::Io { .. })));
}
