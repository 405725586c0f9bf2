//! Minimum dwell times for discrete-time switched linear systems, computed
//! directly from recorded subsystem trajectories with no identification step.
//!
//! The data path is [`psi`] → [`lmi`] → [`dwell`]; [`sim`] is the
//! ground-truth side used to produce data and validate results.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dwell;
pub mod linalg;
pub mod lmi;
pub mod psi;
pub mod sim;

pub use data::{
    parse_certificate_set, parse_dataset, parse_result, serialize_result, CertificateRecord, CertificateSet, DataError,
    DwellTimeResult, SubsystemDataset, Trace,
};
pub use dwell::{compute_min_dwell, dwell_time, mu_max, mu_pairwise, AlgorithmConfig, DwellError};
pub use linalg::{LinalgError, Matrix};
pub use lmi::{Feasibility, LmiProblem, LyapunovCertificate, SolverMethod, SolverOptions};
pub use psi::{find_psi, PsiMatrix};
pub use sim::{MonteCarloReport, SimError, SubsystemModel, SwitchingSignal};
