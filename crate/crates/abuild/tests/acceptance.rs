//! Acceptance suite: one test per criterion, each printing a PASS line.
//! Oracles are deliberately independent reimplementations (raw sha2 calls,
//! a promote-last tree construction, a transition-table model) rather than
//! calls back into the code paths they check.

mod common;

use std::collections::BTreeSet;
use std::io::{BufRead as _, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng as _, RngCore as _, SeedableRng as _};
use sha2::{Digest as _, Sha256};

use abuild::crypto::{hash, keygen, CanonicalBytes, Digest, Signature};
use abuild::enclave::{boot, AttestationDocument};
use abuild::log_service::{
    LogApi, LogClient, LogError, LogService, Observation, SharedLog, WitnessState,
};
use abuild::measurement::{measure_image, FileEntry, PcrSet, RepoSnapshot};
use abuild::merkle::{
    entry_leaf_hash, verify_consistency, verify_inclusion, ConsistencyProof, InclusionProof,
    LogEntry, SignedTreeHead, TreeState,
};
use abuild::pipeline::{Certificate, Phase, StateError};
use abuild::verifier::{
    checks, compose_verify, verify_certificate, verify_source_binding, CheckFailure,
    RevocationNotice, RevocationScope, TrustPolicy, Verdict,
};

fn pass(n: u32, name: &str) {
    println!("acceptance criterion {n} ({name}): PASS");
}

// ===========================================================================
// Criterion 1: honest end-to-end via the CLI, with independent hash oracles
// ===========================================================================

struct ServeGuard(Child);

impl Drop for ServeGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn abuild_bin() -> &'static str {
    env!("CARGO_BIN_EXE_abuild")
}

fn testdata(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata").join(rel)
}

fn start_log_service(storage: &Path) -> (ServeGuard, String) {
    let mut child = Command::new(abuild_bin())
        .args(["serve-log", "--listen", "127.0.0.1:0", "--json"])
        .arg("--storage")
        .arg(storage)
        .arg("--key-seed")
        .arg(testdata("keys/log.seed"))
        .stdout(Stdio::piped())
        .spawn()
        .expect("spawn serve-log");
    let stdout = child.stdout.take().expect("piped stdout");
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).expect("read banner");
    let banner: serde_json::Value = serde_json::from_str(&line).expect("banner json");
    let addr = banner["listening"].as_str().expect("listening field").to_string();
    (ServeGuard(child), addr)
}

/// Independent snapshot-hash oracle: walks the directory with std::fs and
/// recomputes CT with raw sha2 calls and hand-rolled length prefixes.
fn oracle_snapshot_hash(dir: &Path) -> [u8; 32] {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).expect("read_dir") {
            let path = entry.expect("dirent").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .replace('\\', "/");
                out.push((rel, std::fs::read(&path).expect("read file")));
            }
        }
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files);
    files.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    let commits_text = String::from_utf8(
        files
            .iter()
            .find(|(p, _)| p == "commits.jsonl")
            .expect("commits.jsonl")
            .1
            .clone(),
    )
    .expect("utf8 commits");
    files.retain(|(p, _)| p != "commits.jsonl");

    let prefixed = |b: &[u8]| -> Vec<u8> {
        let mut v = (b.len() as u32).to_be_bytes().to_vec();
        v.extend_from_slice(b);
        v
    };

    let mut ct = Sha256::new();
    ct.update([0x04]);
    for (path, content) in &files {
        let mut h = Sha256::new();
        h.update([0x00]);
        h.update(path.as_bytes());
        h.update(content);
        ct.update(h.finalize());
    }
    for line in commits_text.lines().filter(|l| !l.trim().is_empty()) {
        let c: serde_json::Value = serde_json::from_str(line).expect("commit json");
        let field = |k: &str| hex::decode(c[k].as_str().unwrap()).expect("hex");
        let opt_field = |k: &str| -> Vec<u8> {
            c[k].as_str().map(|s| hex::decode(s).unwrap()).unwrap_or_default()
        };
        ct.update(prefixed(&field("parent")));
        ct.update(prefixed(c["message"].as_str().unwrap().as_bytes()));
        ct.update(prefixed(&opt_field("author_key")));
        ct.update(prefixed(&opt_field("author_sig")));
        ct.update(prefixed(&field("tree_hash")));
    }
    ct.finalize().into()
}

#[test]
fn criterion_1_honest_end_to_end() {
    let scratch = tempfile::tempdir().unwrap();
    let (_guard, addr) = start_log_service(&scratch.path().join("log.bin"));

    // Assemble the policy from CLI outputs, the way an operator would.
    let measure_out = Command::new(abuild_bin())
        .args(["measure", "--json"])
        .arg(testdata("toy-image"))
        .output()
        .unwrap();
    assert!(measure_out.status.success());
    let pcrs: PcrSet = serde_json::from_slice(&measure_out.stdout).unwrap();

    let vendor_seed = std::fs::read_to_string(testdata("keys/vendor-a.seed")).unwrap();
    let vendor_key = abuild::crypto::KeyPair::from_seed_hex(vendor_seed.trim()).unwrap();
    let log_seed = std::fs::read_to_string(testdata("keys/log.seed")).unwrap();
    let log_key = abuild::crypto::KeyPair::from_seed_hex(log_seed.trim()).unwrap();
    let policy_path = scratch.path().join("policy.json");
    std::fs::write(
        &policy_path,
        serde_json::json!({
            "trusted_roots": { "vendor-a": vendor_key.verifying_key().to_hex() },
            "allowed_pcr0": [pcrs.pcr0.to_hex()],
            "min_firmware": { "vendor-a": "1.0" },
            "log_key": log_key.verifying_key().to_hex(),
        })
        .to_string(),
    )
    .unwrap();

    let artifact_path = scratch.path().join("out.bin");
    let started = Instant::now();

    let build = Command::new(abuild_bin())
        .arg("build")
        .arg(testdata("toy-repo"))
        .arg("--out")
        .arg(&artifact_path)
        .arg("--image")
        .arg(testdata("toy-image"))
        .args(["--log", &addr, "--vendor-name", "vendor-a", "--firmware", "1.0"])
        .arg("--vendor-key")
        .arg(testdata("keys/vendor-a.seed"))
        .output()
        .unwrap();
    assert!(
        build.status.success(),
        "build failed: {}",
        String::from_utf8_lossy(&build.stderr)
    );

    let cert_path = scratch.path().join("out.bin.cert.json");
    let verify = Command::new(abuild_bin())
        .arg("verify")
        .arg(&artifact_path)
        .arg("--cert")
        .arg(&cert_path)
        .arg("--policy")
        .arg(&policy_path)
        .args(["--log", &addr])
        .arg("--snapshot")
        .arg(testdata("toy-repo"))
        .output()
        .unwrap();
    assert!(
        verify.status.success(),
        "verify rejected: {}{}",
        String::from_utf8_lossy(&verify.stdout),
        String::from_utf8_lossy(&verify.stderr)
    );

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "build+verify took {elapsed:?}, budget is 10 s"
    );

    // Certificate values match fully independent recomputations.
    let cert = Certificate::from_json(&std::fs::read_to_string(&cert_path).unwrap()).unwrap();
    let oracle_ct = oracle_snapshot_hash(&testdata("toy-repo"));
    assert_eq!(cert.attestation.commit_hash.as_bytes(), &oracle_ct);

    let artifact_bytes = std::fs::read(&artifact_path).unwrap();
    let oracle_a: [u8; 32] = Sha256::digest(&artifact_bytes).into();
    assert_eq!(cert.attestation.artifact_hash.as_bytes(), &oracle_a);

    pass(1, "honest end-to-end");
}

// ===========================================================================
// Criterion 2: Merkle proofs against a brute-force oracle, with tampering
// ===========================================================================

/// Independent tree oracle built level by level, promoting the unpaired
/// rightmost node. Produces roots and inclusion paths without touching the
/// recursive split implementation.
mod oracle {
    use super::*;

    fn node(l: &[u8; 32], r: &[u8; 32]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([0x01]);
        h.update(l);
        h.update(r);
        h.finalize().into()
    }

    pub fn root(leaves: &[Digest]) -> [u8; 32] {
        if leaves.is_empty() {
            return Sha256::digest([]).into();
        }
        let mut level: Vec<[u8; 32]> = leaves.iter().map(|d| *d.as_bytes()).collect();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len() / 2 + 1);
            let mut i = 0;
            while i + 1 < level.len() {
                next.push(node(&level[i], &level[i + 1]));
                i += 2;
            }
            if i < level.len() {
                next.push(level[i]);
            }
            level = next;
        }
        level[0]
    }

    pub fn inclusion_path(leaves: &[Digest], index: usize) -> Vec<[u8; 32]> {
        let mut level: Vec<[u8; 32]> = leaves.iter().map(|d| *d.as_bytes()).collect();
        let mut idx = index;
        let mut path = Vec::new();
        while level.len() > 1 {
            let sibling = idx ^ 1;
            if sibling < level.len() {
                path.push(level[sibling]);
            }
            let mut next = Vec::with_capacity(level.len() / 2 + 1);
            let mut i = 0;
            while i + 1 < level.len() {
                next.push(node(&level[i], &level[i + 1]));
                i += 2;
            }
            if i < level.len() {
                next.push(level[i]);
            }
            idx /= 2;
            level = next;
        }
        path
    }
}

fn random_leaves(rng: &mut StdRng, n: usize) -> Vec<Digest> {
    (0..n)
        .map(|_| {
            let mut b = [0u8; 32];
            rng.fill_bytes(&mut b);
            Digest::from_bytes(b)
        })
        .collect()
}

fn flip_digest(d: &Digest) -> Digest {
    let mut b = *d.as_bytes();
    b[0] ^= 1;
    Digest::from_bytes(b)
}

#[test]
fn criterion_2_merkle_oracle_equivalence() {
    let mut rng = StdRng::seed_from_u64(0x6d65726b);

    for n in 1..=64usize {
        let leaves = random_leaves(&mut rng, n);
        let tree = TreeState::from_leaves(leaves.clone());
        let root = tree.root();
        assert_eq!(root.as_bytes(), &oracle::root(&leaves), "root mismatch n={n}");

        for i in 0..n {
            let proof = tree.prove_inclusion(i as u64).unwrap();
            let oracle_path = oracle::inclusion_path(&leaves, i);
            let got: Vec<[u8; 32]> = proof.path.iter().map(|d| *d.as_bytes()).collect();
            assert_eq!(got, oracle_path, "path mismatch n={n} i={i}");
            assert!(verify_inclusion(&leaves[i], &proof, &root));
        }
        for m in 1..=n {
            let proof = tree.prove_consistency(m as u64).unwrap();
            let old_root = Digest::from_bytes(oracle::root(&leaves[..m]));
            assert!(
                verify_consistency(&old_root, &root, &proof),
                "consistency mismatch n={n} m={m}"
            );
        }
    }

    // Exhaustive single-element tampering for n <= 16.
    let mut exhaustive_cases = 0usize;
    for n in 1..=16usize {
        let leaves = random_leaves(&mut rng, n);
        let tree = TreeState::from_leaves(leaves.clone());
        let root = tree.root();
        for i in 0..n {
            let proof = tree.prove_inclusion(i as u64).unwrap();

            assert!(!verify_inclusion(&flip_digest(&leaves[i]), &proof, &root));
            exhaustive_cases += 1;

            for k in 0..proof.path.len() {
                let mut bad = proof.clone();
                bad.path[k] = flip_digest(&bad.path[k]);
                assert!(!verify_inclusion(&leaves[i], &bad, &root));
                exhaustive_cases += 1;
            }

            if n > 1 {
                let mut bad = proof.clone();
                bad.index = (bad.index + 1) % n as u64;
                assert!(!verify_inclusion(&leaves[i], &bad, &root));
                exhaustive_cases += 1;
            }

            assert!(!verify_inclusion(&leaves[i], &proof, &flip_digest(&root)));
            exhaustive_cases += 1;
        }
        for m in 1..=n {
            let proof = tree.prove_consistency(m as u64).unwrap();
            let old_root = Digest::from_bytes(oracle::root(&leaves[..m]));
            for k in 0..proof.path.len() {
                let mut bad = proof.clone();
                bad.path[k] = flip_digest(&bad.path[k]);
                assert!(!verify_consistency(&old_root, &root, &bad));
                exhaustive_cases += 1;
            }
            assert!(!verify_consistency(&flip_digest(&old_root), &root, &proof));
            assert!(!verify_consistency(&old_root, &flip_digest(&root), &proof));
            exhaustive_cases += 2;
        }
    }
    assert!(exhaustive_cases > 500, "exhaustive sweep ran {exhaustive_cases} cases");

    // Sampled tampering for 16 < n <= 64.
    let mut sampled = 0usize;
    while sampled < 1200 {
        let n = rng.gen_range(17..=64usize);
        let leaves = random_leaves(&mut rng, n);
        let tree = TreeState::from_leaves(leaves.clone());
        let root = tree.root();
        let i = rng.gen_range(0..n);
        let proof = tree.prove_inclusion(i as u64).unwrap();
        match rng.gen_range(0..4) {
            0 => assert!(!verify_inclusion(&flip_digest(&leaves[i]), &proof, &root)),
            1 => {
                let mut bad = proof.clone();
                let k = rng.gen_range(0..bad.path.len());
                bad.path[k] = flip_digest(&bad.path[k]);
                assert!(!verify_inclusion(&leaves[i], &bad, &root));
            }
            2 => {
                let mut bad = proof.clone();
                bad.index = (bad.index + 1 + rng.gen_range(0..n as u64 - 1)) % n as u64;
                assert!(!verify_inclusion(&leaves[i], &bad, &root));
            }
            _ => {
                let m = rng.gen_range(1..n);
                let cons = tree.prove_consistency(m as u64).unwrap();
                let old_root = Digest::from_bytes(oracle::root(&leaves[..m]));
                let mut bad = cons.clone();
                if bad.path.is_empty() {
                    assert!(!verify_consistency(&flip_digest(&old_root), &root, &bad));
                } else {
                    let k = rng.gen_range(0..bad.path.len());
                    bad.path[k] = flip_digest(&bad.path[k]);
                    assert!(!verify_consistency(&old_root, &root, &bad));
                }
            }
        }
        sampled += 1;
    }

    pass(2, "merkle oracle equivalence");
}

// ===========================================================================
// Criterion 3: ratchet lemma over enumerated and randomized call sequences
// ===========================================================================

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Commit(u8),
    Begin,
    Report(u8),
    Attest,
}

/// Independent transition-table model of the client state machine.
fn model_step(phase: Phase, op: Op) -> Result<Phase, &'static str> {
    match (op, phase) {
        (Op::Commit(_), Phase::Booted) => Ok(Phase::SourceCommitted),
        (Op::Commit(_), _) => Err("ratchet"),
        (Op::Begin, Phase::SourceCommitted) => Ok(Phase::Building),
        (Op::Begin, _) => Err("state"),
        (Op::Report(_), Phase::Building) => Ok(Phase::ArtifactReported),
        (Op::Report(_), _) => Err("state"),
        (Op::Attest, Phase::ArtifactReported) => Ok(Phase::Attested),
        (Op::Attest, _) => Err("state"),
    }
}

fn run_sequence(ops: &[Op]) -> (Vec<AttestationDocument>, Option<Digest>) {
    let vendor = common::vendor("vendor-x", 0x77, "1.0");
    let mut handle = boot(&vendor, &common::toy_image()).unwrap();
    let mut first_ct: Option<Digest> = None;
    let mut docs = Vec::new();
    for op in ops {
        let phase = handle.state().phase();
        let expected = model_step(phase, *op);
        let outcome: Result<Option<AttestationDocument>, StateError> = match *op {
            Op::Commit(x) => handle.commit_snapshot(hash(&[x])).map(|_| None),
            Op::Begin => handle.begin_build().map(|_| None),
            Op::Report(x) => handle.report_artifact(hash(&[0xf0, x])).map(|_| None),
            Op::Attest => handle.attest([3u8; 16]).map(Some),
        };
        match (expected, outcome) {
            (Ok(next), Ok(doc)) => {
                assert_eq!(handle.state().phase(), next, "phase after {op:?}");
                if let Op::Commit(x) = op {
                    if first_ct.is_none() {
                        first_ct = Some(hash(&[*x]));
                    }
                }
                if let Some(doc) = doc {
                    docs.push(doc);
                }
            }
            (Err("ratchet"), Err(StateError::RatchetViolation { .. })) => {}
            (Err("state"), Err(StateError::StateViolation { .. })) => {}
            (expected, outcome) => panic!(
                "divergence at {op:?} in {ops:?}: model {expected:?}, implementation {}",
                match outcome {
                    Ok(_) => "accepted".to_string(),
                    Err(e) => format!("rejected with {e:?}"),
                }
            ),
        }
    }
    (docs, first_ct)
}

fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

#[test]
fn criterion_3_ratchet_lemma() {
    // Exhaustive: all orderings of the four phase transitions.
    let canonical = [Op::Commit(1), Op::Begin, Op::Report(1), Op::Attest];
    let mut full_success = 0;
    for perm in permutations(&canonical) {
        let (docs, first_ct) = run_sequence(&perm);
        if perm == canonical {
            assert_eq!(docs.len(), 1);
            full_success += 1;
        }
        for doc in &docs {
            assert_eq!(Some(doc.commit_hash), first_ct);
        }
    }
    assert_eq!(full_success, 1, "exactly the in-order permutation attests");

    // Randomized sequences with duplicate and conflicting operations.
    let mut rng = StdRng::seed_from_u64(0x72617463);
    let alphabet = [
        Op::Commit(1),
        Op::Commit(2),
        Op::Begin,
        Op::Report(1),
        Op::Report(2),
        Op::Attest,
    ];
    for _ in 0..1000 {
        let len = rng.gen_range(1..=8);
        let ops: Vec<Op> = (0..len)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
            .collect();
        let (docs, first_ct) = run_sequence(&ops);
        // Never more than one attestation per handle, and its commit hash
        // is always the first committed value.
        assert!(docs.len() <= 1);
        for doc in &docs {
            assert_eq!(Some(doc.commit_hash), first_ct, "ops: {ops:?}");
        }
    }

    pass(3, "ratchet lemma");
}

// ===========================================================================
// Criterion 4: attack scenarios match the predicted outcomes (via the CLI)
// ===========================================================================

#[test]
fn criterion_4_tamarin_correspondence() {
    let kinds = [
        ("code-manipulation", "commit-verify"),
        ("build-asset-manipulation", "log-verify"),
        ("infrastructure-manipulation", "at-verify"),
        ("repository-spoofing", "repository-verify"),
    ];
    let all = ["commit-verify", "log-verify", "at-verify", "repository-verify"];

    for (kind, governing) in kinds {
        for enabled in [true, false] {
            let protections = if enabled {
                all.join(",")
            } else {
                all.iter()
                    .filter(|p| **p != governing)
                    .copied()
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let output = Command::new(abuild_bin())
                .args(["attack", "--kind", kind, "--protections", &protections])
                .output()
                .unwrap();
            assert!(
                output.status.success(),
                "attack {kind} (protections {protections}) exited {:?}: {}",
                output.status.code(),
                String::from_utf8_lossy(&output.stderr)
            );
            let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
            let expected = if enabled { "detected" } else { "undetected" };
            assert_eq!(report["result"], expected, "{kind} with {protections}");
            assert_eq!(report["matches_prediction"], true);
        }
    }

    pass(4, "attack scenarios match the verified outcomes");
}

// ===========================================================================
// Criterion 5: anytrust composition across three vendors with revocations
// ===========================================================================

#[test]
fn criterion_5_anytrust_composition() {
    let author = common::seeded_key(0xa1);
    let snapshot = common::toy_snapshot(&author);
    let image = common::toy_image();
    let vendors = [
        common::vendor("vendor-a", 0x11, "3.0"),
        common::vendor("vendor-b", 0x22, "3.1"),
        common::vendor("vendor-c", 0x33, "3.2"),
    ];
    let log = common::fresh_log(0x44);
    let revoker = common::seeded_key(0x55);

    let mut policy = common::policy_for(
        &[&vendors[0], &vendors[1], &vendors[2]],
        &image,
        &log,
    );
    policy.anytrust_k = 1;
    policy.revocation_key = Some(revoker.verifying_key());

    let built: Vec<(Certificate, Vec<u8>)> = vendors
        .iter()
        .map(|v| common::build_once(&log, v, &image, &snapshot))
        .collect();
    let certs: Vec<Certificate> = built.iter().map(|(c, _)| c.clone()).collect();
    let artifact = built[0].1.clone();

    // Deterministic toy project: identical CT and A across vendors.
    for (cert, bytes) in &built {
        assert_eq!(cert.attestation.commit_hash, certs[0].attestation.commit_hash);
        assert_eq!(cert.attestation.artifact_hash, certs[0].attestation.artifact_hash);
        assert_eq!(bytes, &artifact);
    }

    let verdict = compose_verify(&certs, &artifact, &policy, &log);
    assert!(verdict.accepted, "honest anytrust: {:?}", verdict.failures);

    // Revoking any two vendors' firmware leaves the third to satisfy k=1.
    let revoke = |vendor: &abuild::enclave::VendorIdentity| {
        let notice = RevocationNotice::create(
            RevocationScope::ByVendorFirmware {
                vendor: vendor.vendor_name.clone(),
                version: vendor.firmware_version.clone(),
            },
            "firmware vulnerability",
            &revoker,
        );
        log.append(LogEntry::revocation_notice(&notice)).unwrap();
    };
    revoke(&vendors[0]);
    revoke(&vendors[1]);

    let verdict = compose_verify(&certs, &artifact, &policy, &log);
    assert!(
        verdict.accepted,
        "two revocations should leave one valid vendor: {:?}",
        verdict.failures
    );
    // The individually revoked certificates do fail on their own.
    let single = verify_certificate(&certs[0], &artifact, &policy, &log);
    assert!(single.has_failure(checks::REVOCATION));

    // Revoking the third vendor empties the quorum.
    revoke(&vendors[2]);
    let verdict = compose_verify(&certs, &artifact, &policy, &log);
    assert!(!verdict.accepted);
    assert!(verdict.has_failure(checks::ANYTRUST_QUORUM), "{:?}", verdict.failures);

    // Distinctness: two certificates from one vendor cannot meet k=2.
    let mut policy_k2 = policy.clone();
    policy_k2.anytrust_k = 2;
    let log2 = common::fresh_log(0x45);
    policy_k2.log_key = log2.lock().log_key();
    policy_k2.revocation_key = None;
    let (dup1, bytes) = common::build_once(&log2, &vendors[0], &image, &snapshot);
    let (dup2, _) = common::build_once(&log2, &vendors[0], &image, &snapshot);
    let verdict = compose_verify(&[dup1, dup2.clone()], &bytes, &policy_k2, &log2);
    assert!(!verdict.accepted);
    assert!(verdict.has_failure(checks::ANYTRUST_QUORUM));

    // Certificates for a different artifact never count toward the quorum.
    let verdict = compose_verify(&[dup2], b"some other artifact", &policy_k2, &log2);
    assert!(!verdict.accepted);

    pass(5, "anytrust composition");
}

// ===========================================================================
// Criterion 6: split-view detection over randomized equivocation points
// ===========================================================================

#[test]
fn criterion_6_split_view_detection() {
    let mut rng = StdRng::seed_from_u64(0x73706c69);
    let mut detected = 0usize;

    for round in 0..120 {
        let log_key = common::seeded_key((round % 251) as u8);
        let n = rng.gen_range(2..=32usize);
        let leaves = random_leaves(&mut rng, n);
        let honest = TreeState::from_leaves(leaves.clone());

        // The witness sees an honest head at some earlier size m.
        let m = rng.gen_range(1..=n);
        let mut witness = WitnessState::new(log_key.verifying_key());
        let honest_sth = SignedTreeHead::create(
            &log_key,
            m as u64,
            honest.root_at(m as u64).unwrap(),
            1_700_000_000,
        );
        let bootstrap = honest.prove_consistency_at(m as u64, m as u64).unwrap();
        assert_eq!(
            witness.observe(&honest_sth, &bootstrap).unwrap(),
            Observation::Consistent
        );

        // The log mutates one already-covered leaf and reissues a head at
        // some size >= m, with a consistency proof from its forged tree.
        let mutated_index = rng.gen_range(0..m);
        let new_size = rng.gen_range(m..=n);
        let mut forged_leaves = leaves[..new_size].to_vec();
        forged_leaves[mutated_index] = flip_digest(&forged_leaves[mutated_index]);
        let forged = TreeState::from_leaves(forged_leaves);
        let forged_sth = SignedTreeHead::create(
            &log_key,
            new_size as u64,
            forged.root(),
            1_700_000_100,
        );
        let forged_proof = forged
            .prove_consistency_at(m as u64, new_size as u64)
            .unwrap();

        let observation = witness.observe(&forged_sth, &forged_proof).unwrap();
        assert_eq!(
            observation,
            Observation::SplitView,
            "round {round}: n={n} m={m} mutated={mutated_index} new={new_size}"
        );
        detected += 1;

        // The honest continuation still checks out afterwards.
        let honest_next = SignedTreeHead::create(
            &log_key,
            n as u64,
            honest.root(),
            1_700_000_200,
        );
        let honest_proof = honest.prove_consistency_at(m as u64, n as u64).unwrap();
        assert_eq!(
            witness.observe(&honest_next, &honest_proof).unwrap(),
            Observation::Consistent
        );
    }

    assert!(detected >= 100, "only {detected} equivocation rounds ran");
    pass(6, "split-view detection");
}

// ===========================================================================
// Criterion 7: durability across randomized crash points
// ===========================================================================

/// Entries whose validation is pure decoding, to keep replay cheap.
fn fast_entry(rng: &mut StdRng) -> LogEntry {
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);
    let doc = AttestationDocument {
        vendor_name: "vendor-d".into(),
        firmware_version: "1.0".into(),
        pcrs: PcrSet {
            pcr0: hash(&nonce),
            pcr1: hash(b"k"),
            pcr2: hash(b"a"),
        },
        commit_hash: hash(&nonce[..8]),
        artifact_hash: hash(&nonce[8..]),
        nonce,
        timestamp: 1,
        sig: Signature::from_bytes([0u8; 64]),
    };
    LogEntry::build_attestation(&doc)
}

#[test]
fn criterion_7_durability_across_crashes() {
    let mut rng = StdRng::seed_from_u64(0x63726173);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.bin");
    let key = common::seeded_key(0x66);

    let mut last_acked: Option<SignedTreeHead> = None;
    for round in 0..50 {
        let mut service = LogService::open(&path, key.clone()).unwrap();
        if let Some(prev) = &last_acked {
            let recovered = service.latest_sth();
            assert_eq!(recovered.size, prev.size, "round {round}");
            assert_eq!(recovered.root, prev.root, "round {round}");
        }
        for _ in 0..rng.gen_range(1..=3) {
            let (_, sth) = service.append(fast_entry(&mut rng)).unwrap();
            last_acked = Some(sth);
        }
        // Crash: drop the service with no shutdown handshake. Some rounds
        // additionally tear the tail the way an interrupted write would.
        drop(service);
        if rng.gen_bool(0.5) {
            use std::io::Write as _;
            let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
            let torn_len = rng.gen_range(1..=5);
            f.write_all(&vec![0xEE; torn_len][..]).unwrap();
        }
    }
    let service = LogService::open(&path, key).unwrap();
    let final_sth = service.latest_sth();
    let prev = last_acked.unwrap();
    assert_eq!(final_sth.size, prev.size);
    assert_eq!(final_sth.root, prev.root);

    // One hard-kill round through the real process and wire.
    let dir2 = tempfile::tempdir().unwrap();
    let storage = dir2.path().join("log.bin");
    let (guard, addr) = start_log_service(&storage);
    let client = LogClient::new(addr);
    let mut acked = None;
    for _ in 0..5 {
        let (_, sth) = client.append(fast_entry(&mut rng)).unwrap();
        acked = Some(sth);
    }
    drop(guard); // SIGKILL, no graceful shutdown

    let (guard2, addr2) = start_log_service(&storage);
    let client2 = LogClient::new(addr2);
    let recovered = client2.latest_sth().unwrap();
    let acked = acked.unwrap();
    assert_eq!(recovered.size, acked.size);
    assert_eq!(recovered.root, acked.root);
    drop(guard2);

    pass(7, "durability across crashes");
}

// ===========================================================================
// Criterion 8: each single-point tampering trips its named check
// ===========================================================================

/// A log operator presenting a retroactively mutated tree.
struct EvilLogView {
    tree: TreeState,
    entries: Vec<LogEntry>,
    key: abuild::crypto::KeyPair,
}

impl LogApi for EvilLogView {
    fn append(&self, _entry: LogEntry) -> Result<(u64, SignedTreeHead), LogError> {
        Err(LogError::Protocol("read-only view".into()))
    }

    fn latest_sth(&self) -> Result<SignedTreeHead, LogError> {
        Ok(SignedTreeHead::create(
            &self.key,
            self.tree.size(),
            self.tree.root(),
            1_700_000_000,
        ))
    }

    fn inclusion_proof(&self, index: u64, size: u64) -> Result<InclusionProof, LogError> {
        Ok(self.tree.prove_inclusion_at(index, size)?)
    }

    fn consistency_proof(
        &self,
        old_size: u64,
        new_size: u64,
    ) -> Result<ConsistencyProof, LogError> {
        Ok(self.tree.prove_consistency_at(old_size, new_size)?)
    }

    fn entry(&self, index: u64) -> Result<LogEntry, LogError> {
        self.entries
            .get(index as usize)
            .cloned()
            .ok_or(LogError::Protocol("out of range".into()))
    }
}

/// The combined verdict a verifier with the published snapshot in hand
/// produces: certificate checks plus the source binding.
fn full_verdict(
    cert: &Certificate,
    artifact: &[u8],
    snapshot: &RepoSnapshot,
    policy: &TrustPolicy,
    log: &dyn LogApi,
) -> Verdict {
    let mut verdict = verify_certificate(cert, artifact, policy, log);
    if !verify_source_binding(cert, snapshot) {
        verdict.failures.push(CheckFailure {
            check: checks::SOURCE_BINDING.to_string(),
            detail: "snapshot hash does not match the attested commit hash".into(),
        });
        verdict.accepted = false;
    }
    verdict
}

#[test]
fn criterion_8_single_point_tampering_soundness() {
    let mut trip_log: Vec<(&str, BTreeSet<String>)> = Vec::new();

    // Baseline: the honest world passes the full verdict.
    {
        let w = common::honest_world();
        let verdict = full_verdict(&w.certificate, &w.artifact, &w.snapshot, &w.policy, &w.log);
        assert!(verdict.accepted, "honest baseline: {:?}", verdict.failures);
    }

    let expect = |name: &'static str, check: &str, verdict: Verdict| -> (&'static str, BTreeSet<String>) {
        assert!(!verdict.accepted, "{name}: unexpectedly accepted");
        assert!(
            verdict.has_failure(check),
            "{name}: expected {check} among {:?}",
            verdict.failed_checks()
        );
        (
            name,
            verdict.failures.into_iter().map(|f| f.check).collect(),
        )
    };

    // 1. A snapshot file byte changes between publication and build.
    {
        let w = common::honest_world();
        let mut files: Vec<FileEntry> = w.snapshot.files().to_vec();
        files
            .iter_mut()
            .find(|f| f.path == "src/greeting.txt")
            .unwrap()
            .content[0] ^= 1;
        let tampered = RepoSnapshot::new(files, w.snapshot.commits.clone()).unwrap();
        let (cert, artifact) = common::build_once(&w.log, &w.vendor, &w.image, &tampered);
        let verdict = full_verdict(&cert, &artifact, &w.snapshot, &w.policy, &w.log);
        trip_log.push(expect("snapshot byte", checks::SOURCE_BINDING, verdict));
    }

    // 2. A commit record is altered before the build ingests the history.
    {
        let w = common::honest_world();
        let mut tampered = w.snapshot.clone();
        tampered.commits[0].message = "initial import (rewritten)".into();
        tampered.commits[0].author_key = None;
        tampered.commits[0].author_sig = None;
        let (cert, artifact) = common::build_once(&w.log, &w.vendor, &w.image, &tampered);
        let verdict = full_verdict(&cert, &artifact, &w.snapshot, &w.policy, &w.log);
        trip_log.push(expect("commit record", checks::SOURCE_BINDING, verdict));
    }

    // 3. The booted image differs from the allowlisted one.
    {
        let w = common::honest_world();
        let mut image = w.image.clone();
        image.app_blob.push(0x42);
        let (cert, artifact) = common::build_once(&w.log, &w.vendor, &image, &w.snapshot);
        let verdict = full_verdict(&cert, &artifact, &w.snapshot, &w.policy, &w.log);
        trip_log.push(expect("image byte", checks::PCR0_ALLOWLIST, verdict));
    }

    // 4. The published artifact bytes are swapped after the build.
    {
        let w = common::honest_world();
        let mut artifact = w.artifact.clone();
        artifact[0] ^= 1;
        let verdict = full_verdict(&w.certificate, &artifact, &w.snapshot, &w.policy, &w.log);
        trip_log.push(expect("artifact byte", checks::ARTIFACT_HASH, verdict));
    }

    // 5. An attestation field is rewritten after signing.
    {
        let w = common::honest_world();
        let mut cert = w.certificate.clone();
        cert.attestation.commit_hash = flip_digest(&cert.attestation.commit_hash);
        let verdict = verify_certificate(&cert, &w.artifact, &w.policy, &w.log);
        trip_log.push(expect(
            "attestation field",
            checks::ATTESTATION_SIGNATURE,
            verdict,
        ));
    }

    // 6. The log mutates an already-logged leaf after issuing the head.
    {
        let w = common::honest_world();
        let (leaves, entries, key) = {
            let service = w.log.lock();
            (
                service.tree().leaves().to_vec(),
                vec![service.entry(0).unwrap()],
                common::seeded_key(0x44),
            )
        };
        let mut forged_leaves = leaves;
        forged_leaves[0] = flip_digest(&forged_leaves[0]);
        let mut forged_entries = entries;
        forged_entries[0].body = CanonicalBytes::from_vec(b"rewritten".to_vec());
        let evil = EvilLogView {
            tree: TreeState::from_leaves(forged_leaves),
            entries: forged_entries,
            key,
        };
        let verdict = verify_certificate(&w.certificate, &w.artifact, &w.policy, &evil);
        trip_log.push(expect("leaf content", checks::LOG_CONSISTENCY, verdict));
    }

    // 7. An inclusion-proof path element is corrupted.
    {
        let w = common::honest_world();
        // Second build so the certificate's proof has a non-empty path.
        let (cert2, artifact2) = common::build_once(&w.log, &w.vendor, &w.image, &w.snapshot);
        assert!(!cert2.inclusion.path.is_empty());
        let mut cert = cert2;
        cert.inclusion.path[0] = flip_digest(&cert.inclusion.path[0]);
        let verdict = verify_certificate(&cert, &artifact2, &w.policy, &w.log);
        trip_log.push(expect("proof path element", checks::INCLUSION_PROOF, verdict));
    }

    // 8. The certificate's tree head is rewritten.
    {
        let w = common::honest_world();
        let mut cert = w.certificate.clone();
        cert.tree_head.root = flip_digest(&cert.tree_head.root);
        let verdict = verify_certificate(&cert, &w.artifact, &w.policy, &w.log);
        trip_log.push(expect("tree head", checks::TREE_HEAD_SIGNATURE, verdict));
    }

    assert_eq!(trip_log.len(), 8);
    for (name, failed) in &trip_log {
        println!("  tampering {name:<20} -> {failed:?}");
    }
    pass(8, "single-point tampering soundness");
}

// ===========================================================================
// Monotone revocation: extra property from the verifier contract
// ===========================================================================

#[test]
fn revocation_is_monotone() {
    let w = common::honest_world();
    let mut policy = w.policy.clone();
    let revoker = common::seeded_key(0x99);
    policy.revocation_key = Some(revoker.verifying_key());

    // Reject by breaking the artifact; adding revocations must never flip
    // the verdict back to accepted.
    let mut bad_artifact = w.artifact.clone();
    bad_artifact[0] ^= 1;
    let before = verify_certificate(&w.certificate, &bad_artifact, &policy, &w.log);
    assert!(!before.accepted);

    for i in 0..3u64 {
        let notice = RevocationNotice::create(
            RevocationScope::ByLogIndex(i),
            "sweep",
            &revoker,
        );
        w.log.append(LogEntry::revocation_notice(&notice)).unwrap();
        let after = verify_certificate(&w.certificate, &bad_artifact, &policy, &w.log);
        assert!(!after.accepted, "revocation #{i} flipped a rejection");
    }

    // An audit entry in the same log coexists with build attestations.
    let auditor = common::seeded_key(0x9a);
    let audit = abuild::merkle::SourceAudit {
        commit_hash: w.certificate.attestation.commit_hash,
        standard: "internal-baseline".into(),
        comment: "reviewed".into(),
    };
    w.log.append(LogEntry::source_audit(&audit, &auditor)).unwrap();
    let leaf = entry_leaf_hash(&w.log.entry(w.log.lock().size() - 1).unwrap());
    assert_ne!(leaf, w.certificate.leaf_hash());
}
