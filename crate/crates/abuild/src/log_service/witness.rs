//! Witness client: tracks signed tree heads for one log and flags
//! equivocation. A witness that has seen any earlier honest head will catch
//! a log that retroactively mutates a logged entry.

use thiserror::Error;

use crate::crypto::VerifyingKey;
use crate::merkle::{verify_consistency, ConsistencyProof, SignedTreeHead};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WitnessError {
    #[error("tree head signature invalid under the pinned log key")]
    BadSignature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// The new head extends the last one; the witness advanced.
    Consistent,
    /// The new head contradicts history: same or larger size but the
    /// consistency proof does not connect the roots.
    SplitView,
    /// The new head moved backwards in size.
    Regression,
}

/// Per-log witness state. Stored heads only ever advance in size.
#[derive(Debug, Clone)]
pub struct WitnessState {
    log_key: VerifyingKey,
    last: Option<SignedTreeHead>,
}

impl WitnessState {
    pub fn new(log_key: VerifyingKey) -> Self {
        WitnessState {
            log_key,
            last: None,
        }
    }

    pub fn last(&self) -> Option<&SignedTreeHead> {
        self.last.as_ref()
    }

    /// Feed one observed head plus a consistency proof from the last stored
    /// head. The state advances only on a consistent observation.
    pub fn observe(
        &mut self,
        sth: &SignedTreeHead,
        consistency: &ConsistencyProof,
    ) -> Result<Observation, WitnessError> {
        if !sth.verify_under(&self.log_key) {
            return Err(WitnessError::BadSignature);
        }
        let Some(prev) = &self.last else {
            self.last = Some(sth.clone());
            return Ok(Observation::Consistent);
        };
        if sth.size < prev.size {
            return Ok(Observation::Regression);
        }
        if consistency.old_size != prev.size || consistency.new_size != sth.size {
            return Ok(Observation::SplitView);
        }
        if !verify_consistency(&prev.root, &sth.root, consistency) {
            return Ok(Observation::SplitView);
        }
        self.last = Some(sth.clone());
        Ok(Observation::Consistent)
    }
}
