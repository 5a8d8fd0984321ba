//! Build orchestration: boot a fresh enclave, ratchet in the snapshot hash,
//! run the untrusted build steps in a sandboxed workspace, obtain the
//! attestation, and publish it to the transparency log.
//!
//! The snapshot hash is computed on the trusted side and committed to the
//! enclave client exactly once, before any untrusted instruction runs. The
//! artifact hash may come from the untrusted build; verifiers compare it
//! against the artifact bytes they actually received.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::RngCore as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Digest;
use crate::enclave::{self, AttestationDocument, EnclaveError, VendorIdentity, NONCE_LEN};
use crate::log_service::{LogApi, LogError};
use crate::measurement::{
    artifact_hash, check_path, snapshot_hash, EnclaveImage, MeasurementError, RepoSnapshot,
};
use crate::merkle::{InclusionProof, LogEntry, SignedTreeHead};

/// Name of the build instructions file inside a snapshot.
pub const BUILD_FILE: &str = "abuild.toml";

/// Default wall-clock budget for the whole instruction sequence.
pub const DEFAULT_BUILD_TIMEOUT: Duration = Duration::from_secs(300);

/// PATH handed to build steps; nothing else leaks in from the host.
const SANDBOX_PATH: &str = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";

/// Environment variable names injected into the sandbox.
pub const ENV_AUTH_TOKEN: &str = "ABUILD_AUTH_TOKEN";
pub const ENV_ARTIFACT: &str = "ABUILD_ARTIFACT";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("snapshot has no {BUILD_FILE}")]
    MissingBuildFile,
    #[error(transparent)]
    BuildFile(#[from] BuildFileError),
    #[error("request instructions do not match the snapshot's {BUILD_FILE}")]
    HermeticityViolation,
    #[error("commit {index} carries an invalid author signature")]
    CommitSignatureInvalid { index: usize },
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Enclave(#[from] EnclaveError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("build step {step:?} exited with status {exit_code}")]
    SandboxFailure { step: String, exit_code: i32 },
    #[error("declared artifact {0:?} missing after build")]
    ArtifactMissing(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("workspace io error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Enclave client state machine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Booted,
    SourceCommitted,
    Building,
    ArtifactReported,
    Attested,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("ratchet violation: snapshot hash can only be committed once, in Booted (was {phase})")]
    RatchetViolation { phase: Phase },
    #[error("state violation: {operation} requires {expected}, state is {actual}")]
    StateViolation {
        operation: &'static str,
        expected: Phase,
        actual: Phase,
    },
}

/// The integrity-protected observer inside the enclave. Phases only move
/// forward, and the committed snapshot hash is written once and never
/// mutated afterwards.
#[derive(Debug, Clone)]
pub struct EnclaveClientState {
    phase: Phase,
    committed_ct: Option<Digest>,
    reported_a: Option<Digest>,
    auth_token: String,
}

impl Default for EnclaveClientState {
    fn default() -> Self {
        Self::new()
    }
}

impl EnclaveClientState {
    pub fn new() -> Self {
        let mut token = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut token);
        EnclaveClientState {
            phase: Phase::Booted,
            committed_ct: None,
            reported_a: None,
            auth_token: hex::encode(token),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn committed_ct(&self) -> Option<Digest> {
        self.committed_ct
    }

    pub fn reported_a(&self) -> Option<Digest> {
        self.reported_a
    }

    /// Short-lived token the build runner uses to authenticate fetches.
    pub fn auth_token(&self) -> &str {
        &self.auth_token
    }

    pub fn commit_snapshot(&mut self, ct: Digest) -> Result<(), StateError> {
        if self.phase != Phase::Booted {
            return Err(StateError::RatchetViolation { phase: self.phase });
        }
        self.committed_ct = Some(ct);
        self.phase = Phase::SourceCommitted;
        Ok(())
    }

    pub fn begin_build(&mut self) -> Result<(), StateError> {
        if self.phase != Phase::SourceCommitted {
            return Err(StateError::StateViolation {
                operation: "begin_build",
                expected: Phase::SourceCommitted,
                actual: self.phase,
            });
        }
        self.phase = Phase::Building;
        Ok(())
    }

    pub fn report_artifact(&mut self, a: Digest) -> Result<(), StateError> {
        if self.phase != Phase::Building {
            return Err(StateError::StateViolation {
                operation: "report_artifact",
                expected: Phase::Building,
                actual: self.phase,
            });
        }
        self.reported_a = Some(a);
        self.phase = Phase::ArtifactReported;
        Ok(())
    }

    pub fn mark_attested(&mut self) -> Result<(), StateError> {
        if self.phase != Phase::ArtifactReported {
            return Err(StateError::StateViolation {
                operation: "mark_attested",
                expected: Phase::ArtifactReported,
                actual: self.phase,
            });
        }
        self.phase = Phase::Attested;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Build instructions
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum BuildFileError {
    #[error("unparseable {BUILD_FILE}: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("artifact path {0:?} is not a safe relative path")]
    BadArtifactPath(String),
    #[error("{BUILD_FILE} declares no build steps")]
    NoSteps,
}

/// Parsed contents of the snapshot's build file: the declared artifact path
/// and the ordered command strings.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildInstructions {
    pub artifact: String,
    pub steps: Vec<String>,
}

pub fn parse_build_file(text: &str) -> Result<BuildInstructions, BuildFileError> {
    let parsed: BuildInstructions = toml::from_str(text)?;
    if check_path(&parsed.artifact).is_err() {
        return Err(BuildFileError::BadArtifactPath(parsed.artifact));
    }
    if parsed.steps.is_empty() {
        return Err(BuildFileError::NoSteps);
    }
    Ok(parsed)
}

// ---------------------------------------------------------------------------
// Sandbox
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("cannot spawn {command:?}: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("build step {command:?} exceeded the {timeout:?} budget")]
    Timeout { command: String, timeout: Duration },
    #[error("io error while driving the sandbox: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub command: String,
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Captured results of the executed instruction sequence.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub steps: Vec<StepRecord>,
}

impl Transcript {
    pub fn success(&self) -> bool {
        self.steps.iter().all(|s| s.exit_code == 0)
    }

    pub fn first_failure(&self) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.exit_code != 0)
    }
}

/// Executes untrusted build instructions in an isolated workspace with a
/// scrubbed environment. Implementations may provide stronger isolation;
/// the contract is that the workspace starts with exactly the snapshot
/// files and the environment contains only the passed variables.
pub trait SandboxDriver {
    fn execute(
        &self,
        workspace: &Path,
        instructions: &[String],
        env: &BTreeMap<String, String>,
    ) -> Result<Transcript, SandboxError>;
}

/// Subprocess-based sandbox: each instruction runs as `sh -c <step>` in the
/// workspace with a cleared environment and a shared wall-clock budget.
#[derive(Debug, Clone)]
pub struct ProcessSandbox {
    pub timeout: Duration,
}

impl Default for ProcessSandbox {
    fn default() -> Self {
        ProcessSandbox {
            timeout: DEFAULT_BUILD_TIMEOUT,
        }
    }
}

impl ProcessSandbox {
    pub fn with_timeout(timeout: Duration) -> Self {
        ProcessSandbox { timeout }
    }

    fn run_step(
        &self,
        workspace: &Path,
        command: &str,
        env: &BTreeMap<String, String>,
        deadline: Instant,
    ) -> Result<StepRecord, SandboxError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .current_dir(workspace)
            .env_clear()
            .envs(env)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| SandboxError::Spawn {
                command: command.to_string(),
                source,
            })?;

        let mut stdout_pipe = child.stdout.take().expect("stdout piped");
        let mut stderr_pipe = child.stderr.take().expect("stderr piped");
        let out_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout_pipe.read_to_end(&mut buf);
            buf
        });
        let err_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr_pipe.read_to_end(&mut buf);
            buf
        });

        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(SandboxError::Timeout {
                    command: command.to_string(),
                    timeout: self.timeout,
                });
            }
            std::thread::sleep(Duration::from_millis(5));
        };

        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        Ok(StepRecord {
            command: command.to_string(),
            exit_code: status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&stdout).into_owned(),
            stderr: String::from_utf8_lossy(&stderr).into_owned(),
        })
    }
}

impl SandboxDriver for ProcessSandbox {
    fn execute(
        &self,
        workspace: &Path,
        instructions: &[String],
        env: &BTreeMap<String, String>,
    ) -> Result<Transcript, SandboxError> {
        let deadline = Instant::now() + self.timeout;
        let mut transcript = Transcript::default();
        for command in instructions {
            let record = self.run_step(workspace, command, env, deadline)?;
            let failed = record.exit_code != 0;
            transcript.steps.push(record);
            if failed {
                break;
            }
        }
        Ok(transcript)
    }
}

// ---------------------------------------------------------------------------
// Build request and certificate
// ---------------------------------------------------------------------------

/// Everything one build run consumes. Instructions and the declared
/// artifact path are read out of the snapshot itself so the build stays
/// hermetic.
#[derive(Debug, Clone)]
pub struct BuildRequest {
    pub snapshot: RepoSnapshot,
    pub instructions: Vec<String>,
    pub declared_artifact_path: String,
    pub vendor: VendorIdentity,
    pub image: EnclaveImage,
    pub nonce: [u8; NONCE_LEN],
}

impl BuildRequest {
    pub fn from_snapshot(
        snapshot: RepoSnapshot,
        vendor: VendorIdentity,
        image: EnclaveImage,
        nonce: [u8; NONCE_LEN],
    ) -> Result<Self, PipelineError> {
        let build_file = snapshot
            .file(BUILD_FILE)
            .ok_or(PipelineError::MissingBuildFile)?;
        let text = String::from_utf8_lossy(&build_file.content).into_owned();
        let parsed = parse_build_file(&text)?;
        Ok(BuildRequest {
            snapshot,
            instructions: parsed.steps,
            declared_artifact_path: parsed.artifact,
            vendor,
            image,
            nonce,
        })
    }

    fn check_hermetic(&self) -> Result<(), PipelineError> {
        let build_file = self
            .snapshot
            .file(BUILD_FILE)
            .ok_or(PipelineError::MissingBuildFile)?;
        let text = String::from_utf8_lossy(&build_file.content).into_owned();
        let parsed = parse_build_file(&text)?;
        if parsed.steps != self.instructions || parsed.artifact != self.declared_artifact_path {
            return Err(PipelineError::HermeticityViolation);
        }
        Ok(())
    }
}

/// The shippable verification bundle written next to the artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub attestation: AttestationDocument,
    pub log_index: u64,
    pub inclusion: InclusionProof,
    pub tree_head: SignedTreeHead,
    pub artifact_name: String,
}

impl Certificate {
    /// The log entry this certificate claims is included.
    pub fn log_entry(&self) -> LogEntry {
        LogEntry::build_attestation(&self.attestation)
    }

    pub fn leaf_hash(&self) -> Digest {
        crate::merkle::entry_leaf_hash(&self.log_entry())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Result of a successful pipeline run.
#[derive(Debug)]
pub struct BuildOutput {
    pub certificate: Certificate,
    pub artifact: Vec<u8>,
    pub transcript: Transcript,
}

// ---------------------------------------------------------------------------
// The pipeline
// ---------------------------------------------------------------------------

fn materialize_snapshot(workspace: &Path, snapshot: &RepoSnapshot) -> Result<(), PipelineError> {
    for file in snapshot.files() {
        check_path(&file.path)?;
        let target = workspace.join(&file.path);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&target, &file.content)?;
    }
    Ok(())
}

/// Run one build end to end and return the certificate plus artifact bytes.
/// The enclave handle is created fresh and dropped here; nothing survives
/// the run except the log entry and the returned output.
pub fn run_build(
    request: &BuildRequest,
    driver: &dyn SandboxDriver,
    log: &dyn LogApi,
) -> Result<BuildOutput, PipelineError> {
    request.check_hermetic()?;

    let mut handle = enclave::boot(&request.vendor, &request.image)?;

    let workspace = tempfile::tempdir()?;
    materialize_snapshot(workspace.path(), &request.snapshot)?;

    for (index, commit) in request.snapshot.commits.iter().enumerate() {
        if commit.author_sig_valid() == Some(false) {
            return Err(PipelineError::CommitSignatureInvalid { index });
        }
    }

    let ct = snapshot_hash(&request.snapshot)?;
    handle.commit_snapshot(ct)?;
    handle.begin_build()?;

    let mut env = BTreeMap::new();
    env.insert("PATH".to_string(), SANDBOX_PATH.to_string());
    env.insert(
        ENV_AUTH_TOKEN.to_string(),
        handle.state().auth_token().to_string(),
    );
    env.insert(
        ENV_ARTIFACT.to_string(),
        request.declared_artifact_path.clone(),
    );

    let transcript = driver.execute(workspace.path(), &request.instructions, &env)?;
    if let Some(failed) = transcript.first_failure() {
        return Err(PipelineError::SandboxFailure {
            step: failed.command.clone(),
            exit_code: failed.exit_code,
        });
    }

    let artifact_path: PathBuf = workspace.path().join(&request.declared_artifact_path);
    let artifact = fs::read(&artifact_path)
        .map_err(|_| PipelineError::ArtifactMissing(request.declared_artifact_path.clone()))?;

    let a = artifact_hash(&artifact);
    handle.report_artifact(a)?;
    let attestation = handle.attest(request.nonce)?;

    let entry = LogEntry::build_attestation(&attestation);
    let (log_index, tree_head) = log.append(entry)?;
    let inclusion = log.inclusion_proof(log_index, tree_head.size)?;

    let artifact_name = request
        .declared_artifact_path
        .rsplit('/')
        .next()
        .unwrap_or(&request.declared_artifact_path)
        .to_string();

    Ok(BuildOutput {
        certificate: Certificate {
            attestation,
            log_index,
            inclusion,
            tree_head,
            artifact_name,
        },
        artifact,
        transcript,
    })
}
