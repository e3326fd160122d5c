//! Worst-case (minimax) regression toolkit: fit surrogate models to known
//! nonlinear functions by minimizing the largest approximation error over a
//! box, actively learn worst-case points through global optimization, and
//! certify constant or input-dependent error bounds afterwards.
//!
//! The pieces compose as follows: [`models`] provides parametric families
//! with exact gradients, [`loss`] the smooth minimax training objectives,
//! [`lbfgs`] the quasi-Newton trainer, [`direct`] the derivative-free global
//! maximizer used for certification and acquisition, and [`active`] the
//! train / find-worst-point / acquire loop. On top of those, [`bounds`]
//! certifies error envelopes, [`constraints`] builds conservative constraint
//! surrogates, [`dynamics`] learns uncertain discrete-time models, and
//! [`qp`] covers the approximate explicit-MPC pipeline. [`problems`] holds
//! the benchmark registry used by the command-line tool.

pub mod active;
pub mod bounds;
pub mod constraints;
pub mod direct;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod lbfgs;
pub mod loss;
pub mod math;
pub mod models;
pub mod problems;
pub mod qp;

pub use active::{fit_worst_case, ActiveConfig, FitReport, SamplerKind, StopReason};
pub use bounds::{bound_at, compute_bounds, BoundForm, BoundsConfig, BoundsReport};
pub use direct::{DirectConfig, GlobalResult};
pub use domain::{Dataset, Hyperbox};
pub use error::{Error, Result};
pub use lbfgs::{LbfgsConfig, LbfgsStatus};
pub use loss::{Mu, TrainConfig};
pub use models::{Activation, Family, ModelSpec, ParamVec, Surrogate};
