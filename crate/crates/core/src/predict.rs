//! Multi-step Gaussian prediction from a filtered state belief.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::identify::NoiseModel;
use crate::io::{rows, vector};
use crate::linalg::{check_len, check_psd, check_shape, symmetrize};
use crate::linearize::LtiModel;

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// `y_{t+h} | y_{1:t} ~ N(mean, CΣ_hCᵀ + R)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveDistribution {
    pub horizon: usize,
    #[serde(with = "vector")]
    pub mean: DVector<f64>,
    #[serde(with = "rows")]
    pub covariance: DMatrix<f64>,
    #[serde(with = "vector")]
    pub state_mean: DVector<f64>,
    #[serde(with = "rows")]
    pub state_cov: DMatrix<f64>,
    #[serde(with = "vector")]
    pub half_width_95: DVector<f64>,
}

/// Propagates `(μ_{t|t}, P_{t|t})` through `h = future_inputs.len()` steps:
/// `μ ← Aμ + Bu`, `Σ ← AΣAᵀ + Q`.
pub fn predictive(
    lti: &LtiModel,
    noise: &NoiseModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    future_inputs: &[DVector<f64>],
) -> Result<PredictiveDistribution> {
    lti.validate()?;
    if lti.has_feedthrough() {
        return Err(Error::InvalidParameter("prediction expects D = 0".into()));
    }
    if future_inputs.is_empty() {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let n = lti.n();
    let p = lti.p();
    check_len("state mean", mean, n)?;
    check_shape("state covariance", cov, n, n)?;
    check_psd("state covariance", cov)?;
    check_shape("Q", &noise.q, n, n)?;
    check_shape("R", &noise.r, p, p)?;
    let mut mu = mean.clone();
    let mut sigma = symmetrize(cov);
    for (k, u) in future_inputs.iter().enumerate() {
        check_len(&format!("future input {k}"), u, lti.m())?;
        mu = &lti.a * mu + &lti.b * u;
        sigma = symmetrize(&(&lti.a * sigma * lti.a.transpose() + &noise.q));
    }
    let covariance = symmetrize(&(&lti.c * &sigma * lti.c.transpose() + &noise.r));
    let half_width_95 = covariance.diagonal().map(|v| Z95 * v.max(0.0).sqrt());
    Ok(PredictiveDistribution {
        horizon: future_inputs.len(),
        mean: &lti.c * &mu,
        covariance,
        state_mean: mu,
        state_cov: sigma,
        half_width_95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64) -> LtiModel {
        LtiModel::strictly_proper(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn noise(q: f64, r: f64) -> NoiseModel {
        NoiseModel::new(DMatrix::from_element(1, 1, q), DMatrix::from_element(1, 1, r)).unwrap()
    }

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn one_step_without_uncertainty() {
        let d = predictive(&scalar(0.5, 2.0), &noise(0.0, 0.3), &v(1.0), &DMatrix::zeros(1, 1), &[v(1.5)]).unwrap();
        assert_eq!(d.mean[0], 0.5 + 3.0);
        assert_eq!(d.covariance[(0, 0)], 0.3);
    }

    #[test]
    fn zero_dynamics_forget_the_state() {
        let d = predictive(
            &scalar(0.0, 2.0),
            &noise(0.4, 0.0),
            &v(9.0),
            &DMatrix::from_element(1, 1, 5.0),
            &[v(1.0), v(2.0), v(-1.0)],
        )
        .unwrap();
        assert_eq!(d.state_cov[(0, 0)], 0.4);
        assert_eq!(d.mean[0], -2.0);
    }

    #[test]
    fn two_step_scalar_variance() {
        let d = predictive(
            &scalar(0.5, 0.0),
            &noise(0.1, 0.0),
            &v(0.0),
            &DMatrix::from_element(1, 1, 0.2),
            &[v(0.0), v(0.0)],
        )
        .unwrap();
        assert!((d.state_cov[(0, 0)] - 0.1375).abs() < 1e-15);
        assert!((d.half_width_95[0] - Z95 * 0.1375f64.sqrt()).abs() < 1e-15);
    }
}
