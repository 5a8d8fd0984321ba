//! Command-line entry point: batch subcommands with stable exit codes.
//!
//! Exit codes: 0 success/accept, 1 verification reject, 2 operational
//! error, 3 attack-scenario outcome mismatch.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use abuild::crypto::{keygen, KeyPair};
use abuild::harness::{run_and_report, Protection, Scenario, ScenarioKind};
use abuild::log_service::{serve, LogClient, LogServiceConfig};
use abuild::measurement::{load_image, load_snapshot, measure_image, snapshot_hash};
use abuild::pipeline::{
    run_build, BuildRequest, Certificate, ProcessSandbox, DEFAULT_BUILD_TIMEOUT,
};
use abuild::verifier::{
    checks, compose_verify, verify_certificate, verify_repository_claim, verify_source_binding,
    CertificateRef, CheckFailure, TrustPolicy, Verdict,
};

const EXIT_OK: u8 = 0;
const EXIT_REJECT: u8 = 1;
const EXIT_OPERATIONAL: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser)]
#[command(
    name = "abuild",
    version,
    about = "Attested builds: build in a simulated enclave, log the attestation, verify artifacts"
)]
struct Cli {
    /// Print results as a single JSON document
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an Ed25519 key pair
    Keygen {
        /// 64 hex chars of seed for a deterministic pair
        #[arg(long)]
        seed: Option<String>,
        /// Write the seed (hex) to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure an enclave image directory into its PCR set
    Measure { image_dir: PathBuf },
    /// Compute the snapshot hash of a repository directory
    SnapshotHash { repo_dir: PathBuf },
    /// Run the transparency log service until interrupted
    ServeLog {
        /// host:port to listen on (port 0 picks a free port)
        #[arg(long, default_value = "127.0.0.1:8484")]
        listen: String,
        /// Append-only storage file
        #[arg(long)]
        storage: PathBuf,
        /// File holding the log key seed (64 hex chars)
        #[arg(long)]
        key_seed: PathBuf,
    },
    /// Build a repository in a fresh simulated enclave
    Build {
        repo_dir: PathBuf,
        /// Where to write the built artifact; the certificate lands next to
        /// it as <out>.cert.json
        #[arg(long)]
        out: PathBuf,
        /// Enclave image directory
        #[arg(long)]
        image: PathBuf,
        /// Log service address (host:port)
        #[arg(long)]
        log: String,
        #[arg(long, default_value = "vendor-a")]
        vendor_name: String,
        /// File holding the vendor root key seed (64 hex chars)
        #[arg(long)]
        vendor_key: PathBuf,
        #[arg(long, default_value = "1.0")]
        firmware: String,
        /// Build timeout in seconds
        #[arg(long)]
        timeout_secs: Option<u64>,
    },
    /// Verify an artifact against its certificate, a policy, and the live log
    Verify {
        artifact: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        log: String,
        /// Repository directory for the source-binding check
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// JSON file with the author's published log coordinates
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Verify several certificates for one artifact under an anytrust policy
    ComposeVerify {
        artifact: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        certs: Vec<PathBuf>,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        log: String,
    },
    /// Run one adversary scenario and compare with the predicted outcome
    Attack {
        #[arg(long)]
        kind: String,
        /// Comma-separated: commit-verify,log-verify,at-verify,repository-verify
        /// (or "all" / "none")
        #[arg(long, default_value = "all")]
        protections: String,
    },
}

struct OpError(String);

impl<E: std::fmt::Display> From<E> for OpError {
    fn from(e: E) -> Self {
        OpError(e.to_string())
    }
}

fn read_to_string(path: &Path) -> Result<String, OpError> {
    fs::read_to_string(path).map_err(|e| OpError(format!("cannot read {}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, OpError> {
    fs::read(path).map_err(|e| OpError(format!("cannot read {}: {e}", path.display())))
}

fn read_key_seed(path: &Path) -> Result<KeyPair, OpError> {
    let text = read_to_string(path)?;
    KeyPair::from_seed_hex(text.trim())
        .map_err(|e| OpError(format!("bad key seed in {}: {e}", path.display())))
}

fn load_certificate(path: &Path) -> Result<Certificate, OpError> {
    Certificate::from_json(&read_to_string(path)?)
        .map_err(|e| OpError(format!("bad certificate {}: {e}", path.display())))
}

fn print_verdict(verdict: &Verdict, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(verdict).expect("verdict serializes"));
    } else if verdict.accepted {
        println!("accepted");
    } else {
        println!("rejected");
        for f in &verdict.failures {
            println!("  {}: {}", f.check, f.detail);
        }
    }
}

fn parse_protections(spec: &str) -> Result<BTreeSet<Protection>, OpError> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "none" {
        return Ok(BTreeSet::new());
    }
    if spec == "all" {
        return Ok(Protection::ALL.into_iter().collect());
    }
    spec.split(',')
        .map(|p| p.trim().parse::<Protection>().map_err(OpError))
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(OpError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_OPERATIONAL)
        }
    }
}

fn run(cli: Cli) -> Result<u8, OpError> {
    match cli.command {
        Command::Keygen { seed, out } => {
            let key = match seed {
                Some(hex) => KeyPair::from_seed_hex(&hex)?,
                None => keygen(None)?,
            };
            let vk = key.verifying_key().to_hex();
            match out {
                Some(path) => {
                    fs::write(&path, key.seed_hex())
                        .map_err(|e| OpError(format!("cannot write {}: {e}", path.display())))?;
                    if cli.json {
                        println!(
                            "{}",
                            json!({ "verifying_key": vk, "seed_file": path.display().to_string() })
                        );
                    } else {
                        println!("verifying_key: {vk}");
                        println!("seed written to {}", path.display());
                    }
                }
                None => {
                    if cli.json {
                        println!("{}", json!({ "verifying_key": vk, "seed": key.seed_hex() }));
                    } else {
                        println!("verifying_key: {vk}");
                        println!("seed: {}", key.seed_hex());
                    }
                }
            }
            Ok(EXIT_OK)
        }

        Command::Measure { image_dir } => {
            let image = load_image(&image_dir)?;
            let pcrs = measure_image(&image)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&pcrs).expect("pcrs serialize"));
            } else {
                println!("pcr0: {}", pcrs.pcr0);
                println!("pcr1: {}", pcrs.pcr1);
                println!("pcr2: {}", pcrs.pcr2);
            }
            Ok(EXIT_OK)
        }

        Command::SnapshotHash { repo_dir } => {
            let snapshot = load_snapshot(&repo_dir)?;
            let ct = snapshot_hash(&snapshot)?;
            if cli.json {
                println!("{}", json!({ "commit_hash": ct.to_hex() }));
            } else {
                println!("commit_hash: {ct}");
            }
            Ok(EXIT_OK)
        }

        Command::ServeLog {
            listen,
            storage,
            key_seed,
        } => {
            let key = read_key_seed(&key_seed)?;
            let service = serve(LogServiceConfig {
                listen_address: listen,
                storage_path: storage,
                log_key: key,
            })?;
            let addr = service.addr();
            let log_key = service.shared().lock().log_key().to_hex();
            if cli.json {
                println!("{}", json!({ "listening": addr.to_string(), "log_key": log_key }));
            } else {
                println!("log_key: {log_key}");
                println!("listening on {addr}");
            }
            // Flush so callers watching stdout see the address immediately.
            use std::io::Write as _;
            std::io::stdout().flush().ok();
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }

        Command::Build {
            repo_dir,
            out,
            image,
            log,
            vendor_name,
            vendor_key,
            firmware,
            timeout_secs,
        } => {
            let snapshot = load_snapshot(&repo_dir)?;
            let image = load_image(&image)?;
            let vendor = abuild::enclave::VendorIdentity::new(
                vendor_name,
                read_key_seed(&vendor_key)?,
                firmware,
            )?;
            let mut nonce = [0u8; 16];
            use rand::RngCore as _;
            rand::thread_rng().fill_bytes(&mut nonce);
            let request = BuildRequest::from_snapshot(snapshot, vendor, image, nonce)?;
            let sandbox = match timeout_secs {
                Some(secs) => ProcessSandbox::with_timeout(std::time::Duration::from_secs(secs)),
                None => ProcessSandbox::with_timeout(DEFAULT_BUILD_TIMEOUT),
            };
            let client = LogClient::new(log);
            let output = run_build(&request, &sandbox, &client)?;

            fs::write(&out, &output.artifact)
                .map_err(|e| OpError(format!("cannot write {}: {e}", out.display())))?;
            let cert_path = PathBuf::from(format!("{}.cert.json", out.display()));
            fs::write(&cert_path, output.certificate.to_json())
                .map_err(|e| OpError(format!("cannot write {}: {e}", cert_path.display())))?;

            let at = &output.certificate.attestation;
            if cli.json {
                println!(
                    "{}",
                    json!({
                        "artifact": out.display().to_string(),
                        "certificate": cert_path.display().to_string(),
                        "commit_hash": at.commit_hash.to_hex(),
                        "artifact_hash": at.artifact_hash.to_hex(),
                        "pcr0": at.pcrs.pcr0.to_hex(),
                        "log_index": output.certificate.log_index,
                    })
                );
            } else {
                println!("artifact: {}", out.display());
                println!("certificate: {}", cert_path.display());
                println!("commit_hash: {}", at.commit_hash);
                println!("artifact_hash: {}", at.artifact_hash);
                println!("log_index: {}", output.certificate.log_index);
            }
            Ok(EXIT_OK)
        }

        Command::Verify {
            artifact,
            cert,
            policy,
            log,
            snapshot,
            reference,
        } => {
            let artifact_bytes = read_bytes(&artifact)?;
            let cert = load_certificate(&cert)?;
            let policy = TrustPolicy::from_json(&read_to_string(&policy)?)?;
            let client = LogClient::new(log);
            // Connectivity problems are operational, not a verdict.
            use abuild::log_service::LogApi as _;
            client
                .latest_sth()
                .map_err(|e| OpError(format!("log unreachable: {e}")))?;

            let mut verdict = verify_certificate(&cert, &artifact_bytes, &policy, &client);
            if let Some(dir) = snapshot {
                let snap = load_snapshot(&dir)?;
                if !verify_source_binding(&cert, &snap) {
                    verdict.failures.push(CheckFailure {
                        check: checks::SOURCE_BINDING.to_string(),
                        detail: "snapshot hash does not match the attested commit hash".into(),
                    });
                    verdict.accepted = false;
                }
            }
            if let Some(path) = reference {
                let reference: CertificateRef = serde_json::from_str(&read_to_string(&path)?)
                    .map_err(|e| OpError(format!("bad reference {}: {e}", path.display())))?;
                if !verify_repository_claim(&reference, &cert) {
                    verdict.failures.push(CheckFailure {
                        check: checks::REPOSITORY_CLAIM.to_string(),
                        detail: "certificate does not match the published reference".into(),
                    });
                    verdict.accepted = false;
                }
            }
            print_verdict(&verdict, cli.json);
            Ok(if verdict.accepted { EXIT_OK } else { EXIT_REJECT })
        }

        Command::ComposeVerify {
            artifact,
            certs,
            policy,
            log,
        } => {
            let artifact_bytes = read_bytes(&artifact)?;
            let certs = certs
                .iter()
                .map(|p| load_certificate(p))
                .collect::<Result<Vec<_>, _>>()?;
            let policy = TrustPolicy::from_json(&read_to_string(&policy)?)?;
            let client = LogClient::new(log);
            use abuild::log_service::LogApi as _;
            client
                .latest_sth()
                .map_err(|e| OpError(format!("log unreachable: {e}")))?;

            let verdict = compose_verify(&certs, &artifact_bytes, &policy, &client);
            print_verdict(&verdict, cli.json);
            Ok(if verdict.accepted { EXIT_OK } else { EXIT_REJECT })
        }

        Command::Attack { kind, protections } => {
            let kind: ScenarioKind = kind.parse().map_err(OpError)?;
            let protections = parse_protections(&protections)?;
            let scenario = Scenario::new(kind, protections);
            let report = run_and_report(&scenario)?;
            // Always JSON: the outcome is the machine-checkable result.
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(if report.matches_prediction {
                EXIT_OK
            } else {
                EXIT_MISMATCH
            })
        }
    }
}
