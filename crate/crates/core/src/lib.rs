//! Gradient-flow integration, exact Hessians and fixed-point search for
//! small multi-layer perceptrons, plus the infinite-data loss of bias-free
//! two-layer teacher-student networks.

pub mod activation;
pub mod analysis;
pub mod config;
pub mod derivatives;
pub mod error;
pub mod io;
pub mod linalg;
pub mod net;
pub mod neti;
pub mod objective;
pub mod ode;
pub mod optim;
pub mod runner;
pub mod synthetic;

pub use activation::{activation_eval, ActivationKind};
pub use error::{Error, Result};
pub use net::{Dataset, LayerSpec, LossConfig, Net, ParamVector, Reduction};
pub use objective::{EvalWork, Objective};
