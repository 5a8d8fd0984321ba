//! Shared fixtures for the integration suites: a deterministic toy project,
//! a simulated vendor, and a fully built honest world.

#![allow(dead_code)]

use abuild::crypto::{keygen, Digest, KeyPair};
use abuild::enclave::VendorIdentity;
use abuild::log_service::{LogService, SharedLog};
use abuild::measurement::{
    file_tree_hash, measure_image, CommitRecord, EnclaveImage, FileEntry, RepoSnapshot,
};
use abuild::pipeline::{run_build, BuildRequest, Certificate, ProcessSandbox};
use abuild::verifier::TrustPolicy;

pub fn seeded_key(n: u8) -> KeyPair {
    keygen(Some(&[n; 32])).expect("seeded keygen")
}

pub fn vendor(name: &str, seed: u8, firmware: &str) -> VendorIdentity {
    VendorIdentity::new(name, seeded_key(seed), firmware).expect("vendor")
}

pub fn toy_image() -> EnclaveImage {
    EnclaveImage::new(
        "builder-image",
        vec![FileEntry::new("conf/runner.conf", b"sandbox=process\n".to_vec())],
        b"toy kernel v1\n".to_vec(),
        b"toy build runner v1\n".to_vec(),
    )
    .expect("image")
}

pub fn toy_snapshot(author: &KeyPair) -> RepoSnapshot {
    let files = vec![
        FileEntry::new(
            "abuild.toml",
            b"artifact = \"out.bin\"\nsteps = [\"cat src/greeting.txt src/release.txt > out.bin\"]\n"
                .to_vec(),
        ),
        FileEntry::new("src/greeting.txt", b"hello from an attested build\n".to_vec()),
        FileEntry::new("src/release.txt", b"release 1.0.0\n".to_vec()),
    ];
    let tree = file_tree_hash(&files);
    let commit = CommitRecord::signed(Digest::zero(), "initial import", tree, author);
    RepoSnapshot::new(files, vec![commit]).expect("snapshot")
}

pub fn policy_for(vendors: &[&VendorIdentity], image: &EnclaveImage, log: &SharedLog) -> TrustPolicy {
    TrustPolicy {
        trusted_roots: vendors
            .iter()
            .map(|v| (v.vendor_name.clone(), v.root_key.verifying_key()))
            .collect(),
        allowed_pcr0: [measure_image(image).expect("measure").pcr0]
            .into_iter()
            .collect(),
        min_firmware: Default::default(),
        log_key: log.lock().log_key(),
        witness_confirmations_required: 1,
        anytrust_k: 1,
        revocation_key: None,
    }
}

pub fn fresh_log(seed: u8) -> SharedLog {
    SharedLog::new(LogService::ephemeral(seeded_key(seed)))
}

pub fn build_once(
    log: &SharedLog,
    vendor: &VendorIdentity,
    image: &EnclaveImage,
    snapshot: &RepoSnapshot,
) -> (Certificate, Vec<u8>) {
    let request = BuildRequest::from_snapshot(
        snapshot.clone(),
        vendor.clone(),
        image.clone(),
        [7u8; 16],
    )
    .expect("request");
    let output = run_build(&request, &ProcessSandbox::default(), log).expect("build");
    (output.certificate, output.artifact)
}

pub struct HonestWorld {
    pub log: SharedLog,
    pub policy: TrustPolicy,
    pub author: KeyPair,
    pub vendor: VendorIdentity,
    pub image: EnclaveImage,
    pub snapshot: RepoSnapshot,
    pub certificate: Certificate,
    pub artifact: Vec<u8>,
}

/// One honest end-to-end build against an ephemeral log, plus the policy
/// that trusts exactly its vendor, image, and log.
pub fn honest_world() -> HonestWorld {
    let author = seeded_key(0xa1);
    let vendor = vendor("vendor-a", 0x11, "2.0");
    let image = toy_image();
    let snapshot = toy_snapshot(&author);
    let log = fresh_log(0x44);
    let policy = policy_for(&[&vendor], &image, &log);
    let (certificate, artifact) = build_once(&log, &vendor, &image, &snapshot);
    HonestWorld {
        log,
        policy,
        author,
        vendor,
        image,
        snapshot,
        certificate,
        artifact,
    }
}
