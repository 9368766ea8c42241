//! System identification and model predictive control toolkit.
//!
//! The pipeline runs PRBS excitation ([`signals`]) through N4SID subspace
//! identification ([`subspace`]) into constrained receding-horizon control
//! ([`mpc`]) and the multi-model variant that picks, at every sampling
//! instant, the bank member with the smallest optimal objective
//! ([`multimodel`]). [`plant`] provides the 2x2 FCC-unit surrogate used as
//! the truth system and [`experiment`] wires everything into reproducible
//! runs.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod multimodel;
pub mod plant;
pub mod qp;
pub mod signals;
pub mod subspace;

pub use error::{Error, Result};
pub use model::{fit_percent, solve_dare, DareSolution, KalmanState, OperatingPoint, StateSpaceModel};
pub use mpc::{MpcConfig, MpcController, StepDiagnostics};
pub use multimodel::{BankEntry, ModelBank, SyncMode};
pub use plant::{make_default_fccu, FccuPlant, PlantConfig, PlantState};
pub use qp::{solve_qp, QpProblem, QpSolution};
pub use signals::{Dataset, PrbsSpec};
pub use subspace::{estimate_n4sid, IdentificationReport, N4sidConfig};
