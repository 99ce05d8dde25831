use nalgebra::DMatrix;
use serde::Serialize;

use super::{kalman_filter, kalman_smoother, IdData, NoiseModel, Prior, SmoothedPosterior, COV_FLOOR};
use crate::error::{Error, Result};
use crate::io::rows;
use crate::linalg::{check_finite_mat, check_square, floor_eigenvalues, spectral_norm, symmetrize};
use crate::linearize::LtiModel;
use crate::stability::{CertMethod, Certificate};

const LEAK_FLOOR: f64 = 1e-6;
const ALPHA_FLOOR: f64 = 1e-9;
const GAIN_CEILING: f64 = 1.0 - 1e-6;

/// Span `{I, W̄}` that structured M-steps project onto, with the activation
/// slope bound used by the feasibility constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredBasis {
    pub w_bar: DMatrix<f64>,
    pub l_sigma: f64,
}

impl StructuredBasis {
    pub fn new(w_bar: DMatrix<f64>, l_sigma: f64) -> Result<Self> {
        check_square("W_bar", &w_bar)?;
        check_finite_mat("W_bar", &w_bar)?;
        if !(l_sigma > 0.0) || !l_sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("L_sigma must be finite and > 0, got {l_sigma}")));
        }
        Ok(Self { w_bar, l_sigma })
    }

    pub fn n(&self) -> usize {
        self.w_bar.nrows()
    }
}

/// Coordinates `A = θ₁I + θ₂W̄` with `θ₁ = 1−λ`, `θ₂ = λα`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructuredTheta {
    pub theta1: f64,
    pub theta2: f64,
    pub leak: f64,
    pub alpha: f64,
}

impl StructuredTheta {
    pub fn from_leak_alpha(leak: f64, alpha: f64) -> Self {
        Self {
            theta1: 1.0 - leak,
            theta2: leak * alpha,
            leak,
            alpha,
        }
    }

    pub fn matrix(&self, w_bar: &DMatrix<f64>) -> DMatrix<f64> {
        let n = w_bar.nrows();
        DMatrix::identity(n, n) * self.theta1 + w_bar * self.theta2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuredProjection {
    /// Raw least-squares coordinates before clamping.
    pub raw_theta: (f64, f64),
    pub theta: StructuredTheta,
    #[serde(with = "rows")]
    pub a: DMatrix<f64>,
    pub leak_clamped: bool,
    pub alpha_floored: bool,
    /// `α` was scaled down to meet the small-gain constraint.
    pub alpha_scaled: bool,
    /// `(1−λ) + λL_σα‖W̄‖₂`.
    pub certificate: Certificate,
}

/// Frobenius projection of `A` onto `span{I, W̄}`, then the nearest point
/// with `λ ∈ [1e-6, 1]`, `α > 0` and `(1−λ) + λL_σα‖W̄‖₂ ≤ 1 − 1e-6`.
pub fn project_structured(a: &DMatrix<f64>, basis: &StructuredBasis) -> Result<StructuredProjection> {
    let n = basis.n();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension(format!(
            "A is {}x{}, basis is {n}x{n}",
            a.nrows(),
            a.ncols()
        )));
    }
    let w = &basis.w_bar;
    let g11 = n as f64;
    let g12 = w.trace();
    let g22 = w.norm_squared();
    let det = g11 * g22 - g12 * g12;
    if !(det > 1e-12 * g11 * g22) {
        return Err(Error::RankDeficient("W_bar is proportional to the identity".into()));
    }
    let r1 = a.trace();
    let r2 = w.dot(a);
    let t1 = (g22 * r1 - g12 * r2) / det;
    let t2 = (g11 * r2 - g12 * r1) / det;

    let raw_leak = 1.0 - t1;
    let leak = raw_leak.clamp(LEAK_FLOOR, 1.0);
    let leak_clamped = leak != raw_leak;
    let mut alpha = t2 / leak;
    let alpha_floored = !(alpha >= ALPHA_FLOOR);
    if alpha_floored {
        alpha = ALPHA_FLOOR;
    }
    let w_norm = spectral_norm(w);
    let gain = |alpha: f64| (1.0 - leak) + leak * basis.l_sigma * alpha * w_norm;
    let mut alpha_scaled = false;
    if gain(alpha) > GAIN_CEILING {
        alpha = ((GAIN_CEILING - (1.0 - leak)) / (leak * basis.l_sigma * w_norm)).max(0.0);
        alpha_scaled = true;
    }
    let theta = StructuredTheta::from_leak_alpha(leak, alpha);
    Ok(StructuredProjection {
        raw_theta: (t1, t2),
        theta,
        a: theta.matrix(w),
        leak_clamped,
        alpha_floored,
        alpha_scaled,
        certificate: Certificate::from_kappa(CertMethod::LipschitzC1, gain(alpha)),
    })
}

/// Parameters estimated by EM. `C` and the prior stay fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmParams {
    pub lti: LtiModel,
    pub noise: NoiseModel,
    pub prior: Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub structure: Option<StructuredBasis>,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-8,
            structure: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmStep {
    pub params: EmParams,
    /// Log-likelihood of the parameters the E-step ran under.
    pub loglik: f64,
    pub projection: Option<StructuredProjection>,
    pub constrained_step: bool,
    pub gram_ridge: bool,
    /// Number of covariance updates (`Q`, `R`) that needed eigenvalue flooring.
    pub jitter_events: usize,
}

#[derive(Debug, Clone)]
pub struct EmRun {
    pub params: EmParams,
    /// E-step log-likelihood per iteration followed by that of the final
    /// parameters.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub constrained_steps: usize,
    pub jitter_events: usize,
    pub projection: Option<StructuredProjection>,
}

/// Expected sufficient statistics over `T` transitions.
struct Moments {
    s_xx: DMatrix<f64>,
    s_nx: DMatrix<f64>,
    s_nn: DMatrix<f64>,
    s_xu: DMatrix<f64>,
    s_nu: DMatrix<f64>,
    s_uu: DMatrix<f64>,
}

fn second_moment(post: &SmoothedPosterior, t: usize) -> DMatrix<f64> {
    let mu = &post.smoothed_means[t];
    &post.smoothed_covs[t] + mu * mu.transpose()
}

fn moments(post: &SmoothedPosterior, data: &IdData) -> Moments {
    let n = post.smoothed_means[0].len();
    let m = data.inputs.first().map_or(0, |u| u.len());
    let mut mo = Moments {
        s_xx: DMatrix::zeros(n, n),
        s_nx: DMatrix::zeros(n, n),
        s_nn: DMatrix::zeros(n, n),
        s_xu: DMatrix::zeros(n, m),
        s_nu: DMatrix::zeros(n, m),
        s_uu: DMatrix::zeros(m, m),
    };
    for (t, u) in data.inputs.iter().enumerate() {
        let mu = &post.smoothed_means[t];
        let mu_next = &post.smoothed_means[t + 1];
        mo.s_xx += second_moment(post, t);
        mo.s_nn += second_moment(post, t + 1);
        mo.s_nx += post.cross_covs[t].transpose() + mu_next * mu.transpose();
        mo.s_xu += mu * u.transpose();
        mo.s_nu += mu_next * u.transpose();
        mo.s_uu += u * u.transpose();
    }
    mo
}

/// Solves `X·G = H` for symmetric PSD `G`; a singular `G` gets ridge
/// `1e-10·tr(G)/dim`. Returns whether the ridge was needed.
fn solve_right(h: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let dim = g.nrows();
    if dim == 0 {
        return Ok((DMatrix::zeros(h.nrows(), 0), false));
    }
    let sym = symmetrize(g);
    let well_posed = sym.clone().cholesky().filter(|ch| {
        let d = ch.l_dirty().diagonal();
        d.min() > 1e-7 * d.max()
    });
    if let Some(ch) = well_posed {
        return Ok((ch.solve(&h.transpose()).transpose(), false));
    }
    let ridge = (1e-10 * sym.trace() / dim as f64).max(f64::MIN_POSITIVE);
    log::warn!("singular state Gram in the M-step; adding ridge {ridge:e}");
    let ch = (sym + DMatrix::identity(dim, dim) * ridge)
        .cholesky()
        .ok_or_else(|| Error::Singular("state Gram in the M-step".into()))?;
    Ok((ch.solve(&h.transpose()).transpose(), true))
}

/// One EM iteration: smoother under the current parameters, then closed-form
/// updates of `[A B]`, `Q` and `R` with `C` held fixed.
pub fn em_step(params: &EmParams, data: &IdData, structure: Option<&StructuredBasis>) -> Result<EmStep> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("EM needs at least one observation".into()));
    }
    let post = kalman_smoother(&params.lti, &params.noise, data, &params.prior)?;
    let n = params.lti.n();
    let m = params.lti.m();
    let t_len = data.len() as f64;
    let mo = moments(&post, data);

    let mut g = DMatrix::zeros(n + m, n + m);
    g.view_mut((0, 0), (n, n)).copy_from(&mo.s_xx);
    g.view_mut((0, n), (n, m)).copy_from(&mo.s_xu);
    g.view_mut((n, 0), (m, n)).copy_from(&mo.s_xu.transpose());
    g.view_mut((n, n), (m, m)).copy_from(&mo.s_uu);
    let mut h = DMatrix::zeros(n, n + m);
    h.view_mut((0, 0), (n, n)).copy_from(&mo.s_nx);
    h.view_mut((0, n), (n, m)).copy_from(&mo.s_nu);
    let (mut f, mut gram_ridge) = solve_right(&h, &g)?;

    let mut projection = None;
    if let Some(basis) = structure {
        let proj = project_structured(&f.columns(0, n).into_owned(), basis)?;
        let a = proj.a.clone();
        let (b, ridge_b) = solve_right(&(&mo.s_nu - &a * &mo.s_xu), &mo.s_uu)?;
        gram_ridge |= ridge_b;
        f.view_mut((0, 0), (n, n)).copy_from(&a);
        f.view_mut((0, n), (n, m)).copy_from(&b);
        projection = Some(proj);
    }

    let fh = &f * h.transpose();
    let q_raw = (&mo.s_nn - &fh - fh.transpose() + &f * &g * f.transpose()) / t_len;
    let (q, q_floored) = floor_eigenvalues(&q_raw, COV_FLOOR);

    let c = &params.lti.c;
    let p = c.nrows();
    let mut r_acc = DMatrix::zeros(p, p);
    for (t, y) in data.outputs.iter().enumerate() {
        let e = y - c * &post.smoothed_means[t + 1];
        r_acc += &e * e.transpose() + c * &post.smoothed_covs[t + 1] * c.transpose();
    }
    let (r, r_floored) = floor_eigenvalues(&(r_acc / t_len), COV_FLOOR);

    let mut lti = params.lti.clone();
    lti.a = f.columns(0, n).into_owned();
    lti.b = f.columns(n, m).into_owned();
    Ok(EmStep {
        params: EmParams {
            lti,
            noise: NoiseModel { q, r },
            prior: params.prior.clone(),
        },
        loglik: post.loglik,
        constrained_step: projection.is_some(),
        projection,
        gram_ridge,
        jitter_events: q_floored as usize + r_floored as usize,
    })
}

/// Iterates [`em_step`] until the relative log-likelihood change drops below
/// `rel_tol` or `max_iters` is reached. A decrease larger than `1e-9` after
/// an unconstrained step aborts the run.
pub fn em_run(init: EmParams, data: &IdData, opts: &EmOptions) -> Result<EmRun> {
    if opts.max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
    }
    if !(opts.rel_tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("rel_tol must be >= 0, got {}", opts.rel_tol)));
    }
    let mut params = init;
    let mut trace = Vec::with_capacity(opts.max_iters + 1);
    let mut last_constrained = false;
    let mut constrained_steps = 0;
    let mut jitter_events = 0;
    let mut projection = None;
    let mut converged = false;
    let mut iterations = 0;

    let check = |trace: &[f64], ll: f64, constrained: bool| -> Result<()> {
        if let Some(&prev) = trace.last() {
            if !constrained && prev - ll > 1e-9 {
                return Err(Error::LikelihoodDecrease {
                    iteration: trace.len(),
                    delta: ll - prev,
                });
            }
        }
        Ok(())
    };

    for _ in 0..opts.max_iters {
        let step = em_step(&params, data, opts.structure.as_ref())?;
        check(&trace, step.loglik, last_constrained)?;
        let done = trace
            .last()
            .is_some_and(|&prev| (step.loglik - prev).abs() < opts.rel_tol * step.loglik.abs());
        trace.push(step.loglik);
        iterations += 1;
        last_constrained = step.constrained_step;
        constrained_steps += step.constrained_step as usize;
        jitter_events += step.jitter_events;
        projection = step.projection;
        params = step.params;
        if done {
            converged = true;
            break;
        }
    }
    let final_ll = kalman_filter(&params.lti, &params.noise, data, &params.prior)?.loglik;
    check(&trace, final_ll, last_constrained)?;
    trace.push(final_ll);
    Ok(EmRun {
        params,
        trace,
        iterations,
        converged,
        constrained_steps,
        jitter_events,
        projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use crate::rng::{seeded, standard_normal_vec};

    fn trace_free_basis() -> StructuredBasis {
        StructuredBasis::new(DMatrix::from_row_slice(3, 3, &[0.0, 0.5, -0.2, 0.3, 0.1, 0.4, -0.1, 0.2, -0.1]), 1.0).unwrap()
    }

    #[test]
    fn projection_is_exact_on_the_span() {
        let basis = trace_free_basis();
        assert!(basis.w_bar.trace().abs() < 1e-15);
        let a = DMatrix::identity(3, 3) * 0.3 + &basis.w_bar * 0.4;
        let proj = project_structured(&a, &basis).unwrap();
        assert!((proj.theta.theta1 - 0.3).abs() < 1e-14);
        assert!((proj.theta.theta2 - 0.4).abs() < 1e-14);
        assert!((proj.theta.leak - 0.7).abs() < 1e-14);
        assert!((proj.theta.alpha - 0.4 / 0.7).abs() < 1e-14);
        assert!(!proj.alpha_scaled);
        assert!((&proj.a - &a).amax() < 1e-14);
        assert!(proj.certificate.passed());
    }

    #[test]
    fn projection_scales_infeasible_alpha() {
        let basis = trace_free_basis();
        let a = DMatrix::identity(3, 3) * 0.3 + &basis.w_bar * 5.0;
        let proj = project_structured(&a, &basis).unwrap();
        assert!(proj.alpha_scaled);
        let w_norm = spectral_norm(&basis.w_bar);
        let gain = 0.3 + proj.theta.leak * proj.theta.alpha * w_norm;
        assert!((gain - (1.0 - 1e-6)).abs() < 1e-12);
        assert!((proj.certificate.kappa - gain).abs() < 1e-15);
    }

    #[test]
    fn identity_basis_is_rejected() {
        let basis = StructuredBasis::new(DMatrix::identity(2, 2) * 3.0, 1.0).unwrap();
        let err = project_structured(&DMatrix::identity(2, 2), &basis).unwrap_err();
        assert_eq!(err.code(), "rank_deficient");
    }

    fn exact_posterior(states: &[DVector<f64>]) -> SmoothedPosterior {
        let n = states[0].len();
        let t = states.len() - 1;
        SmoothedPosterior {
            filtered_means: states.to_vec(),
            filtered_covs: vec![DMatrix::zeros(n, n); t + 1],
            predicted_means: states.to_vec(),
            predicted_covs: vec![DMatrix::zeros(n, n); t + 1],
            smoothed_means: states.to_vec(),
            smoothed_covs: vec![DMatrix::zeros(n, n); t + 1],
            cross_covs: vec![DMatrix::zeros(n, n); t],
            transitions: Vec::new(),
            time_varying: false,
            loglik: 0.0,
        }
    }

    #[test]
    fn exact_states_recover_dynamics() {
        let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, -0.1, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, -0.5]);
        let mut rng = seeded(3);
        let mut x = DVector::from_vec(vec![0.5, 0.1]);
        let mut states = vec![x.clone()];
        let mut inputs = Vec::new();
        for _ in 0..50 {
            let u = standard_normal_vec(&mut rng, 1);
            x = &a * &x + &b * &u;
            inputs.push(u);
            states.push(x.clone());
        }
        let outputs = states[1..].to_vec();
        let data = IdData::new(inputs, outputs).unwrap();
        let mo = moments(&exact_posterior(&states), &data);
        let mut g = DMatrix::zeros(3, 3);
        g.view_mut((0, 0), (2, 2)).copy_from(&mo.s_xx);
        g.view_mut((0, 2), (2, 1)).copy_from(&mo.s_xu);
        g.view_mut((2, 0), (1, 2)).copy_from(&mo.s_xu.transpose());
        g.view_mut((2, 2), (1, 1)).copy_from(&mo.s_uu);
        let mut h = DMatrix::zeros(2, 3);
        h.view_mut((0, 0), (2, 2)).copy_from(&mo.s_nx);
        h.view_mut((0, 2), (2, 1)).copy_from(&mo.s_nu);
        let (f, ridge) = solve_right(&h, &g).unwrap();
        assert!(!ridge);
        assert!((f.columns(0, 2) - &a).amax() < 1e-8);
        assert!((f.columns(2, 1) - &b).amax() < 1e-8);
        let fh = &f * h.transpose();
        let q = (&mo.s_nn - &fh - fh.transpose() + &f * &g * f.transpose()) / 50.0;
        assert!(q.amax() < 1e-10);
    }

    #[test]
    fn r_update_with_zero_readout_is_output_second_moment() {
        let lti = LtiModel::strictly_proper(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let outputs: Vec<_> = (0..6).map(|t| DVector::from_vec(vec![t as f64 * 0.3, 1.0 - t as f64 * 0.1])).collect();
        let inputs: Vec<_> = (0..6).map(|t| DVector::from_element(1, (t as f64).cos())).collect();
        let data = IdData::new(inputs, outputs.clone()).unwrap();
        let params = EmParams {
            lti,
            noise: NoiseModel::new(DMatrix::from_element(1, 1, 0.1), DMatrix::identity(2, 2)).unwrap(),
            prior: Prior::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap(),
        };
        let step = em_step(&params, &data, None).unwrap();
        let expect = outputs.iter().fold(DMatrix::zeros(2, 2), |acc, y| acc + y * y.transpose()) / 6.0;
        assert!((&step.params.noise.r - expect).amax() < 1e-14);
    }

    #[test]
    fn loglik_is_monotone_and_trace_complete() {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, -0.2, 0.6]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.3]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let mut rng = seeded(11);
        let mut x = DVector::zeros(2);
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for _ in 0..200 {
            let u = standard_normal_vec(&mut rng, 1);
            x = &a * &x + &b * &u + standard_normal_vec(&mut rng, 2) * 0.2;
            outputs.push(&c * &x + standard_normal_vec(&mut rng, 1) * 0.3);
            inputs.push(u);
        }
        let data = IdData::new(inputs, outputs).unwrap();
        let init = EmParams {
            lti: LtiModel::strictly_proper(DMatrix::identity(2, 2) * 0.3, DMatrix::from_element(2, 1, 0.1), c).unwrap(),
            noise: NoiseModel::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap(),
            prior: Prior::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap(),
        };
        let opts = EmOptions {
            max_iters: 30,
            rel_tol: 0.0,
            structure: None,
        };
        let run = em_run(init, &data, &opts).unwrap();
        assert_eq!(run.trace.len(), 31);
        assert_eq!(run.iterations, 30);
        for w in run.trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-9);
        }
        assert_eq!(run.jitter_events, 0);
    }
}
