//! Adversary harness: runs the pipeline with one injected tampering per
//! attack kind and a configurable set of enabled verifications, then reports
//! whether the tampering was detected.
//!
//! Each attack kind has exactly one governing verification: code
//! manipulation is caught by the source-binding check, build asset
//! manipulation by the log checks, infrastructure manipulation by the
//! attestation checks, and repository spoofing by the reference comparison.
//! With the governing check enabled the outcome is Detected; with it
//! disabled the remaining checks all pass and the outcome is Undetected.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::RngCore as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{keygen, Digest, KeyPair};
use crate::enclave::{EnclaveError, VendorIdentity, NONCE_LEN};
use crate::log_service::{LogError, LogService, SharedLog};
use crate::measurement::{
    file_tree_hash, measure_image, CommitRecord, EnclaveImage, FileEntry, MeasurementError,
    RepoSnapshot,
};
use crate::pipeline::{run_build, BuildRequest, Certificate, PipelineError, ProcessSandbox};
use crate::verifier::{
    checks, verify_certificate, verify_repository_claim, verify_source_binding, CertificateRef,
    TrustPolicy,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Enclave(#[from] EnclaveError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("bad scenario parameter: {0}")]
    BadParameter(String),
}

// ---------------------------------------------------------------------------
// Scenario vocabulary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    CodeManipulation,
    BuildAssetManipulation,
    InfrastructureManipulation,
    RepositorySpoofing,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::CodeManipulation,
        ScenarioKind::BuildAssetManipulation,
        ScenarioKind::InfrastructureManipulation,
        ScenarioKind::RepositorySpoofing,
    ];

    /// The single verification that governs detection of this kind.
    pub fn governing_protection(self) -> Protection {
        match self {
            ScenarioKind::CodeManipulation => Protection::CommitVerify,
            ScenarioKind::BuildAssetManipulation => Protection::LogVerify,
            ScenarioKind::InfrastructureManipulation => Protection::AtVerify,
            ScenarioKind::RepositorySpoofing => Protection::RepositoryVerify,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioKind::CodeManipulation => "code-manipulation",
            ScenarioKind::BuildAssetManipulation => "build-asset-manipulation",
            ScenarioKind::InfrastructureManipulation => "infrastructure-manipulation",
            ScenarioKind::RepositorySpoofing => "repository-spoofing",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "code-manipulation" => Ok(ScenarioKind::CodeManipulation),
            "build-asset-manipulation" => Ok(ScenarioKind::BuildAssetManipulation),
            "infrastructure-manipulation" => Ok(ScenarioKind::InfrastructureManipulation),
            "repository-spoofing" => Ok(ScenarioKind::RepositorySpoofing),
            other => Err(format!(
                "unknown attack kind {other:?} (expected one of: code-manipulation, \
                 build-asset-manipulation, infrastructure-manipulation, repository-spoofing)"
            )),
        }
    }
}

/// The verification controls a verifier may enable, named after their role
/// in the protocol analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protection {
    CommitVerify,
    LogVerify,
    AtVerify,
    RepositoryVerify,
}

impl Protection {
    pub const ALL: [Protection; 4] = [
        Protection::CommitVerify,
        Protection::LogVerify,
        Protection::AtVerify,
        Protection::RepositoryVerify,
    ];

    /// Which certificate checks report through this protection.
    fn covers_check(self, check: &str) -> bool {
        match self {
            Protection::CommitVerify => check == checks::SOURCE_BINDING,
            Protection::LogVerify => matches!(
                check,
                checks::ARTIFACT_HASH
                    | checks::INCLUSION_PROOF
                    | checks::TREE_HEAD_SIGNATURE
                    | checks::LOG_CONSISTENCY
            ),
            Protection::AtVerify => matches!(
                check,
                checks::ATTESTATION_SIGNATURE | checks::PCR0_ALLOWLIST | checks::FIRMWARE_MIN
            ),
            Protection::RepositoryVerify => check == checks::REPOSITORY_CLAIM,
        }
    }
}

impl fmt::Display for Protection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Protection::CommitVerify => "commit-verify",
            Protection::LogVerify => "log-verify",
            Protection::AtVerify => "at-verify",
            Protection::RepositoryVerify => "repository-verify",
        };
        f.write_str(s)
    }
}

impl FromStr for Protection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "commit-verify" => Ok(Protection::CommitVerify),
            "log-verify" => Ok(Protection::LogVerify),
            "at-verify" => Ok(Protection::AtVerify),
            "repository-verify" => Ok(Protection::RepositoryVerify),
            other => Err(format!(
                "unknown protection {other:?} (expected one of: commit-verify, log-verify, \
                 at-verify, repository-verify)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub protections: BTreeSet<Protection>,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, protections: impl IntoIterator<Item = Protection>) -> Self {
        Scenario {
            kind,
            protections: protections.into_iter().collect(),
        }
    }

    /// The outcome the protocol analysis predicts for this configuration.
    pub fn predicted(&self) -> Detection {
        if self.protections.contains(&self.kind.governing_protection()) {
            Detection::Detected
        } else {
            Detection::Undetected
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detection {
    Detected,
    Undetected,
}

/// Result of running one scenario: whether any enabled verification caught
/// the injected tampering, and which checks fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub result: Detection,
    pub evidence: Vec<String>,
}

/// Outcome plus the analysis prediction, as printed by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub kind: ScenarioKind,
    pub protections: Vec<Protection>,
    pub result: Detection,
    pub evidence: Vec<String>,
    pub predicted: Detection,
    pub matches_prediction: bool,
}

// ---------------------------------------------------------------------------
// World construction
// ---------------------------------------------------------------------------

/// Everything the verifier gets to see after the (possibly tampered) build.
struct World {
    log: SharedLog,
    policy: TrustPolicy,
    /// The repository as the verifier audits it.
    published_snapshot: RepoSnapshot,
    /// The author's out-of-band published log coordinates.
    reference: CertificateRef,
    presented_cert: Certificate,
    presented_artifact: Vec<u8>,
}

fn fresh_nonce() -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    rand::thread_rng().fill_bytes(&mut nonce);
    nonce
}

fn toy_snapshot(author: &KeyPair, greeting: &[u8]) -> Result<RepoSnapshot, MeasurementError> {
    let files = vec![
        FileEntry::new(
            "abuild.toml",
            b"artifact = \"out.bin\"\nsteps = [\"cat src/greeting.txt src/version.txt > out.bin\"]\n"
                .to_vec(),
        ),
        FileEntry::new("src/greeting.txt", greeting.to_vec()),
        FileEntry::new("src/version.txt", b"v1\n".to_vec()),
    ];
    let tree = file_tree_hash(&files);
    let commit = CommitRecord::signed(Digest::zero(), "initial import", tree, author);
    RepoSnapshot::new(files, vec![commit])
}

fn toy_image(app_suffix: &[u8]) -> Result<EnclaveImage, MeasurementError> {
    let mut app = b"build-runner-v1".to_vec();
    app.extend_from_slice(app_suffix);
    EnclaveImage::new(
        "builder-image",
        vec![FileEntry::new("init.rc", b"start runner\n".to_vec())],
        b"toy-kernel".to_vec(),
        app,
    )
}

fn build_on(
    log: &SharedLog,
    vendor: &VendorIdentity,
    image: &EnclaveImage,
    snapshot: &RepoSnapshot,
) -> Result<(Certificate, Vec<u8>), HarnessError> {
    let request = BuildRequest::from_snapshot(
        snapshot.clone(),
        vendor.clone(),
        image.clone(),
        fresh_nonce(),
    )?;
    let output = run_build(&request, &ProcessSandbox::default(), log)?;
    Ok((output.certificate, output.artifact))
}

fn make_world(kind: ScenarioKind) -> Result<World, HarnessError> {
    let author = keygen(None).expect("entropy keygen");
    let vendor = VendorIdentity::new("vendor-a", keygen(None).expect("entropy keygen"), "2.1")?;
    let log_key = keygen(None).expect("entropy keygen");
    let log = SharedLog::new(LogService::ephemeral(log_key));

    let honest_image = toy_image(b"")?;
    let honest_pcr0 = measure_image(&honest_image)?.pcr0;
    let policy = TrustPolicy {
        trusted_roots: [(vendor.vendor_name.clone(), vendor.root_key.verifying_key())]
            .into_iter()
            .collect(),
        allowed_pcr0: [honest_pcr0].into_iter().collect(),
        min_firmware: [(vendor.vendor_name.clone(), "2.0".to_string())]
            .into_iter()
            .collect(),
        log_key: log.lock().log_key(),
        witness_confirmations_required: 1,
        anytrust_k: 1,
        revocation_key: None,
    };

    let honest_snapshot = toy_snapshot(&author, b"hello attested world\n")?;

    let world = match kind {
        ScenarioKind::CodeManipulation => {
            // The adversary swaps source bytes between the author's
            // publication and build ingestion; the build itself is honest.
            let mut files: Vec<FileEntry> = honest_snapshot.files().to_vec();
            let target = files
                .iter_mut()
                .find(|f| f.path == "src/greeting.txt")
                .expect("greeting file present");
            target.content = b"hello backdoored world\n".to_vec();
            let tampered =
                RepoSnapshot::new(files, honest_snapshot.commits.clone())?;
            let (cert, artifact) = build_on(&log, &vendor, &honest_image, &tampered)?;
            let reference = CertificateRef::of(&cert);
            World {
                log,
                policy,
                published_snapshot: honest_snapshot,
                reference,
                presented_cert: cert,
                presented_artifact: artifact,
            }
        }
        ScenarioKind::BuildAssetManipulation => {
            // The build and its certificate are honest; the adversary swaps
            // the published artifact bytes afterwards.
            let (cert, artifact) = build_on(&log, &vendor, &honest_image, &honest_snapshot)?;
            let mut swapped = artifact;
            swapped.extend_from_slice(b"\n#backdoor\n");
            let reference = CertificateRef::of(&cert);
            World {
                log,
                policy,
                published_snapshot: honest_snapshot,
                reference,
                presented_cert: cert,
                presented_artifact: swapped,
            }
        }
        ScenarioKind::InfrastructureManipulation => {
            // The adversary boots a modified build image; measurements
            // faithfully report it, so pcr0 leaves the allowlist.
            let bad_image = toy_image(b"+implant")?;
            let (cert, artifact) = build_on(&log, &vendor, &bad_image, &honest_snapshot)?;
            let reference = CertificateRef::of(&cert);
            World {
                log,
                policy,
                published_snapshot: honest_snapshot,
                reference,
                presented_cert: cert,
                presented_artifact: artifact,
            }
        }
        ScenarioKind::RepositorySpoofing => {
            // The genuine project publishes its build reference; the
            // adversary clones the repository, adds a commit, and runs a
            // fully honest build of the clone against the same log.
            let (genuine_cert, _genuine_artifact) =
                build_on(&log, &vendor, &honest_image, &honest_snapshot)?;
            let reference = CertificateRef::of(&genuine_cert);

            let attacker = keygen(None).expect("entropy keygen");
            let mut files: Vec<FileEntry> = honest_snapshot.files().to_vec();
            files
                .iter_mut()
                .find(|f| f.path == "src/greeting.txt")
                .expect("greeting file present")
                .content = b"hello spoofed world\n".to_vec();
            let tree = file_tree_hash(&files);
            let mut commits = honest_snapshot.commits.clone();
            let parent = crate::crypto::hash(commits[0].canonical_bytes().as_bytes());
            commits.push(CommitRecord::signed(parent, "innocent cleanup", tree, &attacker));
            let clone = RepoSnapshot::new(files, commits)?;

            let (spoof_cert, spoof_artifact) = build_on(&log, &vendor, &honest_image, &clone)?;
            World {
                log,
                policy,
                published_snapshot: clone,
                reference,
                presented_cert: spoof_cert,
                presented_artifact: spoof_artifact,
            }
        }
    };
    Ok(world)
}

// ---------------------------------------------------------------------------
// Scenario execution
// ---------------------------------------------------------------------------

/// Build the scenario's world, run every verification the scenario enables,
/// and report whether the injected tampering surfaced.
pub fn run_scenario(scenario: &Scenario) -> Result<Outcome, HarnessError> {
    let world = make_world(scenario.kind)?;
    let mut evidence: Vec<String> = Vec::new();

    if scenario.protections.contains(&Protection::CommitVerify)
        && !verify_source_binding(&world.presented_cert, &world.published_snapshot)
    {
        evidence.push(checks::SOURCE_BINDING.to_string());
    }

    if scenario.protections.contains(&Protection::RepositoryVerify)
        && !verify_repository_claim(&world.reference, &world.presented_cert)
    {
        evidence.push(checks::REPOSITORY_CLAIM.to_string());
    }

    let verdict = verify_certificate(
        &world.presented_cert,
        &world.presented_artifact,
        &world.policy,
        &world.log,
    );
    for failed in verdict.failures {
        let covered = scenario
            .protections
            .iter()
            .any(|p| p.covers_check(&failed.check));
        if covered && !evidence.contains(&failed.check) {
            evidence.push(failed.check);
        }
    }

    let result = if evidence.is_empty() {
        Detection::Undetected
    } else {
        Detection::Detected
    };
    Ok(Outcome { result, evidence })
}

/// Run a scenario and bundle the outcome with the predicted result.
pub fn run_and_report(scenario: &Scenario) -> Result<ScenarioReport, HarnessError> {
    let outcome = run_scenario(scenario)?;
    let predicted = scenario.predicted();
    Ok(ScenarioReport {
        kind: scenario.kind,
        protections: scenario.protections.iter().copied().collect(),
        matches_prediction: outcome.result == predicted,
        result: outcome.result,
        evidence: outcome.evidence,
        predicted,
    })
}
