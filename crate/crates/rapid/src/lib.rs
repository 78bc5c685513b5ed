//! Actor-learner runtime: experience stores speaking a small framed TCP
//! protocol, rollout workers, and a sharded optimizer.
//!
//! Everything also works in-process through [`store::LocalStore`], which is
//! what the determinism tests compare the TCP path against.

pub mod blob;
pub mod optimizer;
pub mod store;
pub mod throughput;
pub mod wire;
pub mod worker;

pub use blob::ParameterBlob;
pub use store::{LocalStore, Store, StoreClient, StoreHandle, StoreServer};

#[derive(Debug, thiserror::Error)]
pub enum RapidError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("store rejected request: {0}")]
    Rejected(String),
    #[error("no store reachable after {0} attempts")]
    Unreachable(usize),
    #[error("optimizer starved: {got} of {want} chunks after {secs:.1} s")]
    Starved { got: usize, want: usize, secs: f64 },
    #[error(transparent)]
    Core(#[from] reorient_core::Error),
}

pub type Result<T, E = RapidError> = std::result::Result<T, E>;
