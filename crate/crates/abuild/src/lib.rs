//! Attested builds at desk scale: a simulated TEE build pipeline that binds
//! a source snapshot hash and a built-artifact hash inside a vendor-signed
//! attestation document, records it in an append-only transparency log, and
//! lets third parties verify source-to-binary correspondence.
//!
//! The crate is organized around the protocol's moving parts:
//!
//! - [`crypto`]: hashing, domain separation, Ed25519, canonical encoding
//! - [`measurement`]: image measurements (PCR0-2) and snapshot hashes
//! - [`merkle`]: the append-only tree, inclusion and consistency proofs
//! - [`enclave`]: the simulated vendor issuing attestation documents
//! - [`pipeline`]: build orchestration with the ratcheting client state
//! - [`log_service`]: persistent log service, wire protocol, witnesses
//! - [`verifier`]: certificate checks, revocation, anytrust composition
//! - [`harness`]: executable attack scenarios with switchable protections

pub mod codec;
pub mod crypto;
pub mod enclave;
pub mod harness;
pub mod log_service;
pub mod measurement;
pub mod merkle;
pub mod pipeline;
pub mod verifier;
