use nalgebra::{DMatrix, DVector};

use super::{IdData, NoiseModel, Prior};
use crate::error::{Error, Result};
use crate::linalg::{check_finite_vec, check_shape, cholesky_jittered, symmetrize};
use crate::linearize::{jacobians_at, LtiModel};
use crate::reservoir::{Readout, ReservoirParams};

/// Kalman filter and Rauch-Tung-Striebel smoother outputs. Index `t` runs
/// over `0..=T`; index 0 of the filtered and predicted sequences holds the
/// prior. The smoothed sequences are empty until [`rts_smoother`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedPosterior {
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub smoothed_means: Vec<DVector<f64>>,
    pub smoothed_covs: Vec<DMatrix<f64>>,
    /// `P_{t,t+1|T} = Cov(x_t, x_{t+1} | y_{1:T})` for `t = 0..T−1`.
    pub cross_covs: Vec<DMatrix<f64>>,
    /// Transition matrix used to predict `x_{t+1}` from `x_t`.
    pub transitions: Vec<DMatrix<f64>>,
    /// Set for EKF output; the smoother then applies the LTI cross-covariance
    /// formula step by step, which is an approximation.
    pub time_varying: bool,
    pub loglik: f64,
}

impl SmoothedPosterior {
    pub fn horizon(&self) -> usize {
        self.filtered_means.len().saturating_sub(1)
    }

    pub fn is_smoothed(&self) -> bool {
        !self.smoothed_means.is_empty()
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

struct Measurement<'a> {
    c: &'a DMatrix<f64>,
    offset: Option<&'a DVector<f64>>,
}

/// Shared forward recursion. `predict` maps `(μ_{t|t}, u_t)` to
/// `(μ_{t+1|t}, A_t)`.
fn forward<F>(
    n: usize,
    noise: &NoiseModel,
    meas: Measurement<'_>,
    data: &IdData,
    prior: &Prior,
    time_varying: bool,
    mut predict: F,
) -> Result<SmoothedPosterior>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let p = meas.c.nrows();
    check_shape("C", meas.c, p, n)?;
    check_shape("Q", &noise.q, n, n)?;
    check_shape("R", &noise.r, p, p)?;
    if prior.mean.len() != n {
        return Err(Error::Dimension(format!("prior mean must have length {n}, got {}", prior.mean.len())));
    }
    check_shape("prior covariance", &prior.cov, n, n)?;
    let t_len = data.len();
    for (t, y) in data.outputs.iter().enumerate() {
        check_finite_vec(&format!("output {}", t + 1), y)?;
    }

    let mut post = SmoothedPosterior {
        filtered_means: Vec::with_capacity(t_len + 1),
        filtered_covs: Vec::with_capacity(t_len + 1),
        predicted_means: Vec::with_capacity(t_len + 1),
        predicted_covs: Vec::with_capacity(t_len + 1),
        smoothed_means: Vec::new(),
        smoothed_covs: Vec::new(),
        cross_covs: Vec::new(),
        transitions: Vec::with_capacity(t_len),
        time_varying,
        loglik: 0.0,
    };
    post.filtered_means.push(prior.mean.clone());
    post.filtered_covs.push(symmetrize(&prior.cov));
    post.predicted_means.push(prior.mean.clone());
    post.predicted_covs.push(symmetrize(&prior.cov));

    let eye = DMatrix::<f64>::identity(n, n);
    let ct = meas.c.transpose();
    for t in 1..=t_len {
        let mu = &post.filtered_means[t - 1];
        let pc = &post.filtered_covs[t - 1];
        let (mu_pred, a_t) = predict(mu, &data.inputs[t - 1])?;
        let p_pred = symmetrize(&(&a_t * pc * a_t.transpose() + &noise.q));

        let mut y_hat = meas.c * &mu_pred;
        if let Some(d) = meas.offset {
            y_hat += d;
        }
        let innov = &data.outputs[t - 1] - y_hat;
        let s = symmetrize(&(meas.c * &p_pred * &ct + &noise.r));
        let (chol, _) = cholesky_jittered(&s).ok_or(Error::InnovationNotPd(t))?;
        // K = P⁻Cᵀ S⁻¹ via Kᵀ = S⁻¹ C P⁻.
        let gain = chol.solve(&(meas.c * &p_pred)).transpose();
        let mu_upd = &mu_pred + &gain * &innov;
        let ikc = &eye - &gain * meas.c;
        let p_upd = symmetrize(&(&ikc * &p_pred * ikc.transpose() + &gain * &noise.r * gain.transpose()));

        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let maha = innov.dot(&chol.solve(&innov));
        post.loglik += -0.5 * (p as f64 * LN_2PI + log_det + maha);

        post.transitions.push(a_t);
        post.predicted_means.push(mu_pred);
        post.predicted_covs.push(p_pred);
        post.filtered_means.push(mu_upd);
        post.filtered_covs.push(p_upd);
    }
    if !post.loglik.is_finite() {
        return Err(Error::NonFinite {
            what: "log-likelihood".into(),
            index: t_len,
        });
    }
    Ok(post)
}

/// Forward Kalman filter with Joseph-form covariance updates. The
/// log-likelihood `log p(y_{1:T} | u)` is accumulated from the innovations.
/// Requires `D = 0`.
pub fn kalman_filter(lti: &LtiModel, noise: &NoiseModel, data: &IdData, prior: &Prior) -> Result<SmoothedPosterior> {
    lti.validate()?;
    if lti.has_feedthrough() {
        return Err(Error::InvalidParameter("Kalman filter expects D = 0".into()));
    }
    data.check_dims(lti.m(), lti.p())?;
    let a = &lti.a;
    let b = &lti.b;
    forward(
        lti.n(),
        noise,
        Measurement { c: &lti.c, offset: None },
        data,
        prior,
        false,
        |mu, u| Ok((a * mu + b * u, a.clone())),
    )
}

/// Extended Kalman filter for the reservoir: the mean is propagated through
/// the nonlinear update, the covariance through its Jacobian at `μ_{t|t}`.
/// Outputs are `y = Cx + d`.
pub fn ekf_filter(
    p: &ReservoirParams,
    readout: &Readout,
    noise: &NoiseModel,
    data: &IdData,
    prior: &Prior,
) -> Result<SmoothedPosterior> {
    p.validate()?;
    data.check_dims(p.m(), readout.p())?;
    forward(
        p.n(),
        noise,
        Measurement {
            c: &readout.c,
            offset: Some(&readout.d),
        },
        data,
        prior,
        true,
        |mu, u| {
            let lin = jacobians_at(p, mu, u, readout)?;
            Ok((p.step_unchecked(mu, u), lin.a))
        },
    )
}

/// Backward RTS pass over a filter result.
///
/// `J_t = P_{t|t}A_tᵀP_{t+1|t}⁻¹`, `P_{t,t+1|T} = J_t P_{t+1|T}`. A singular
/// predicted covariance gets diagonal jitter before the solve.
pub fn rts_smoother(filtered: &SmoothedPosterior) -> Result<SmoothedPosterior> {
    let t_len = filtered.horizon();
    let mut post = filtered.clone();
    let mut means = vec![DVector::zeros(0); t_len + 1];
    let mut covs = vec![DMatrix::zeros(0, 0); t_len + 1];
    let mut cross = vec![DMatrix::zeros(0, 0); t_len];
    means[t_len] = filtered.filtered_means[t_len].clone();
    covs[t_len] = filtered.filtered_covs[t_len].clone();
    for t in (0..t_len).rev() {
        let p_filt = &filtered.filtered_covs[t];
        let p_pred = &filtered.predicted_covs[t + 1];
        let a_t = &filtered.transitions[t];
        let (chol, _) = cholesky_jittered(p_pred)
            .ok_or_else(|| Error::Singular(format!("predicted covariance at step {}", t + 1)))?;
        // Jᵀ = P_{t+1|t}⁻¹ A_t P_{t|t}.
        let j = chol.solve(&(a_t * p_filt)).transpose();
        let dm = &means[t + 1] - &filtered.predicted_means[t + 1];
        means[t] = &filtered.filtered_means[t] + &j * dm;
        let dp = &covs[t + 1] - p_pred;
        covs[t] = symmetrize(&(p_filt + &j * dp * j.transpose()));
        cross[t] = &j * &covs[t + 1];
    }
    post.smoothed_means = means;
    post.smoothed_covs = covs;
    post.cross_covs = cross;
    Ok(post)
}

/// Filter then smooth.
pub fn kalman_smoother(lti: &LtiModel, noise: &NoiseModel, data: &IdData, prior: &Prior) -> Result<SmoothedPosterior> {
    rts_smoother(&kalman_filter(lti, noise, data, prior)?)
}
