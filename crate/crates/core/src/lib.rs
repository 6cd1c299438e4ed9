//! Learning stochastic reward machines from noisy, non-Markovian reward
//! traces, and using them to drive tabular Q-learning.

pub mod driver;
pub mod envs;
pub mod error;
pub mod estimates;
pub mod harness;
pub mod infer;
pub mod io;
pub mod label;
pub mod machine;
pub mod qrm;
pub mod trace;

pub use error::{Result, SrmError};
pub use label::{Label, PropositionSet};
pub use machine::{DispersionBound, OutputDist, Srm, StateId};
pub use trace::Trace;
