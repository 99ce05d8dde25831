//! State estimation and parameter learning for the linear-Gaussian view
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + w_t,   w_t ~ N(0, Q)
//! y_t     = C x_t + v_t,           v_t ~ N(0, R)
//! ```
//!
//! with a Gaussian prior on `x_0`, inputs `u_0..u_{T−1}` and observations
//! `y_1..y_T`. Sequences of means and covariances are indexed by time, so
//! entry `0` of the filtered and predicted sequences is the prior.

mod em;
mod kalman;
mod readout;
mod subspace;

pub use em::{
    em_run, em_step, project_structured, EmOptions, EmParams, EmRun, EmStep, StructuredBasis, StructuredProjection,
    StructuredTheta,
};
pub use kalman::{ekf_filter, kalman_filter, kalman_smoother, rts_smoother, SmoothedPosterior};
pub use readout::{readout_bayes, readout_ml, BayesReadout, ReadoutOptions, StateEstimates};
pub use subspace::{
    estimate_markov, excitation_margin, ho_kalman, subspace_shape, HoKalman, SubspaceData, SubspaceOptions,
    SubspaceResult,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_len, check_psd, floor_eigenvalues};

/// Process and measurement covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_psd("Q", &q)?;
        check_psd("R", &r)?;
        Ok(Self { q, r })
    }

    /// Copies with every eigenvalue lifted to at least `1e-12`.
    pub fn repaired(&self) -> Self {
        Self {
            q: floor_eigenvalues(&self.q, COV_FLOOR).0,
            r: floor_eigenvalues(&self.r, COV_FLOOR).0,
        }
    }
}

pub(crate) const COV_FLOOR: f64 = 1e-12;

/// Gaussian belief `N(μ, P)` over the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Prior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_len("prior mean", &mean, cov.nrows())?;
        check_psd("prior covariance", &cov)?;
        Ok(Self { mean, cov })
    }
}

/// Inputs `u_0..u_{T−1}` paired with observations `y_1..y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdData {
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl IdData {
    pub fn new(inputs: Vec<DVector<f64>>, outputs: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::Dimension(format!(
                "{} inputs for {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        Ok(Self { inputs, outputs })
    }

    /// Re-aligns rows recorded as `(u_t, y_t)` with `y_t = Cx_t`, as produced
    /// by [`crate::simulate`]: drops `y_0` and the last input.
    pub fn from_readout_rows(inputs: &[DVector<f64>], outputs: &[DVector<f64>]) -> Result<Self> {
        if inputs.len() != outputs.len() || inputs.is_empty() {
            return Err(Error::Dimension(format!(
                "need equally many (>= 1) inputs and outputs, got {} and {}",
                inputs.len(),
                outputs.len()
            )));
        }
        let t = inputs.len();
        Self::new(inputs[..t - 1].to_vec(), outputs[1..].to_vec())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub(crate) fn check_dims(&self, m: usize, p: usize) -> Result<()> {
        for (t, u) in self.inputs.iter().enumerate() {
            check_len(&format!("input {t}"), u, m)?;
        }
        for (t, y) in self.outputs.iter().enumerate() {
            check_len(&format!("output {}", t + 1), y, p)?;
        }
        Ok(())
    }
}
