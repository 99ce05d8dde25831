//! Echo state networks treated as nonlinear state-space models.
//!
//! The reservoir update `x⁺ = (1−λ)x + λσ(Wx + Uu + b)` with readout
//! `y = Cx + d` is simulated, certified for fading memory, linearized or
//! lifted to LTI surrogates, analysed in the frequency domain and identified
//! from data with Kalman smoothing, EM and subspace methods.

pub mod activation;
pub mod design;
pub mod discretize;
pub mod error;
pub mod freq;
pub mod identify;
pub mod io;
pub mod lift;
pub mod linalg;
pub mod linearize;
pub mod predict;
pub mod reservoir;
pub mod rng;
pub mod stability;

pub use nalgebra::{DMatrix, DVector};
pub use linalg::Complex64;

pub use activation::{activation_eval, Activation};
pub use error::{Error, Result};
pub use linearize::{jacobians_at, linearize_trajectory, remainder_bound, LtiModel, LtvModel};
pub use reservoir::{reservoir_step, simulate, Readout, ReservoirParams, SimulationNoise, Trajectory};
pub use stability::{certify_lipschitz, certify_spectral, certify_weighted, CertMethod, Certificate, Verdict};
