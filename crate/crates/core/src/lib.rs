//! Privacy-preserving smart-meter aggregation.
//!
//! Meter readings are Paillier-encrypted and additionally masked with a
//! per-meter factor `h^{s_i}` derived from a Shamir polynomial whose secret
//! is the Paillier prime `p`. Within a group of `d` meters the mask
//! exponents telescope to a multiple of `p`, turning the aggregate mask
//! into an n-th residue that vanishes under decryption: the aggregator can
//! decrypt group sums but no strict subset of a group.
//!
//! A meter that fails to report is substituted by the same-share-index
//! meter of another group, adjusted by the previous round's per-meter
//! average, which bounds the aggregation error. The [`simnet`] and
//! [`experiments`] modules provide a deterministic round simulator and the
//! analytic/empirical error-rate harness around that protocol.

pub mod cli;
pub mod entities;
pub mod experiments;
pub mod masking;
pub mod numtheory;
pub mod paillier;
pub mod simnet;

/// Errors shared across the protocol stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value is not invertible modulo m")]
    NotInvertible,
    #[error("argument outside the domain of L: n does not divide u - 1")]
    NotLDomain,
    #[error("plaintext out of range [0, n)")]
    PlaintextRange,
    #[error("randomizer shares a factor with n")]
    BadRandomizer,
    #[error("meter reading exceeds the per-meter cap")]
    ReadingRange,
    #[error("no complete group available as a tag reference")]
    NoReferenceGroup,
    #[error("no complete group holds the missing share position")]
    NoDonor,
    #[error("group covers fewer than d share positions")]
    IncompleteGroup,
    #[error("two reports carry the same share position")]
    DuplicatePosition,
    #[error("malformed encoding: {0}")]
    Encoding(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
