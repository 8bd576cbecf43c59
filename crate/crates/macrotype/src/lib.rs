//! Simulation of coarse-grained collective ("macroscopic") measurements on
//! finite ensembles of N identically prepared d-level systems.
//!
//! A macroscopic observable is a sum of one single-system observable over all
//! N systems; its spectral projectors are the *type projectors* `Q_L`, one per
//! empirical frequency vector L. A finite-accuracy detector is modelled by a
//! smoothing kernel `q_L(ℓ)`: the POVM element for record ℓ is
//! `Q̃_ℓ = Σ_L √q_L(ℓ) Q_L`, and the ideal (single-Kraus) update applies
//! `Q̃_ℓ` directly. Everything in this crate lives in the permutation-symmetric
//! subspace, which is `binom(N+d-1, d-1)`-dimensional, so ensembles of
//! thousands of systems are tractable; a dense full-Hilbert-space oracle
//! (`oracle`) covers small N for verification.
//!
//! Modules:
//! - [`combinatorics`]: type enumeration, multinomial weights, typical-set bounds
//! - [`smoothing`]: detector kernels, decoherence factors, record binning
//! - [`symmetric`]: the symmetric-subspace engine (states, measurements, updates)
//! - [`oracle`]: dense small-N reference implementation
//! - [`tradeoff`]: measurement-coarseness vs state-disturbance tradeoff curves
//! - [`histories`]: sequences of coarse measurements and consistency checks
//! - [`tomography`]: Bayesian bulk tomography on exchangeable priors
//! - [`nmr`]: a coil-readout model with separate accuracy and disturbance widths
//! - [`runner`]: config-driven experiment runner backing the CLI

pub mod combinatorics;
pub mod histories;
pub mod nmr;
pub mod oracle;
pub mod runner;
pub mod smoothing;
pub mod symmetric;
pub mod tomography;
pub mod tradeoff;

use thiserror::Error;

/// Crate-wide error type. The runner maps these onto process exit codes:
/// I/O failures exit 1, validation failures exit 2, resource-cap breaches 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),
    #[error("resource cap exceeded: {0}")]
    CapExceeded(String),
    #[error("zero outcome density at record {0}")]
    ZeroDensity(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 for I/O and serialization failures,
    /// 2 for validation failures (zero-density records included), 3 for
    /// resource-cap breaches.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::ZeroDensity(_) => 2,
            Error::CapExceeded(_) => 3,
            Error::Io(_) | Error::Serde(_) | Error::Csv(_) => 1,
        }
    }
}

pub(crate) fn validate(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Validation(msg.into()))
    }
}
