//! Lifting to a linear model on dictionary features (extended DMD).

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite_vec, check_len, spectral_radius};
use crate::reservoir::{Readout, ReservoirParams, Trajectory};
use crate::rng::{seeded, standard_normal_mat};
use crate::stability::{CertMethod, Certificate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    IdentityPlusConstant,
    /// All monomials of total degree `2..=max_degree` after the identity block.
    Monomials { max_degree: usize },
    /// `√(2/count)·cos(ωᵢᵀx + bᵢ)` with `ωᵢ ~ N(0, bandwidth⁻²I)` and
    /// `bᵢ ~ U[0, 2π)`.
    RandomFourier { count: usize, bandwidth: f64, seed: u64 },
}

/// Feature map `φ(x) = (1, x, extra features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub kind: DictionaryKind,
    pub state_dim: usize,
    monomials: Vec<Vec<usize>>,
    freqs: DMatrix<f64>,
    phases: DVector<f64>,
}

fn multisets(n: usize, degree: usize, start: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == degree {
        out.push(prefix.clone());
        return;
    }
    for i in start..n {
        prefix.push(i);
        multisets(n, degree, i, prefix, out);
        prefix.pop();
    }
}

impl Dictionary {
    pub fn new(kind: DictionaryKind, state_dim: usize) -> Result<Self> {
        let mut monomials = Vec::new();
        let mut freqs = DMatrix::zeros(0, state_dim);
        let mut phases = DVector::zeros(0);
        match kind {
            DictionaryKind::IdentityPlusConstant => {}
            DictionaryKind::Monomials { max_degree } => {
                if max_degree == 0 {
                    return Err(Error::InvalidParameter("monomial degree must be >= 1".into()));
                }
                for d in 2..=max_degree {
                    multisets(state_dim, d, 0, &mut Vec::new(), &mut monomials);
                }
            }
            DictionaryKind::RandomFourier { count, bandwidth, seed } => {
                if !(bandwidth > 0.0) || !bandwidth.is_finite() {
                    return Err(Error::InvalidParameter(format!("bandwidth must be > 0, got {bandwidth}")));
                }
                let mut rng = seeded(seed);
                freqs = standard_normal_mat(&mut rng, count, state_dim) / bandwidth;
                let uni = Uniform::new(0.0, 2.0 * std::f64::consts::PI).expect("valid range");
                phases = DVector::from_fn(count, |_, _| uni.sample(&mut rng));
            }
        }
        Ok(Self {
            kind,
            state_dim,
            monomials,
            freqs,
            phases,
        })
    }

    pub fn output_dim(&self) -> usize {
        1 + self.state_dim + self.monomials.len() + self.phases.len()
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.state_dim;
        let mut z = DVector::zeros(self.output_dim());
        z[0] = 1.0;
        z.rows_mut(1, n).copy_from(x);
        let mut k = 1 + n;
        for mono in &self.monomials {
            z[k] = mono.iter().map(|&i| x[i]).product();
            k += 1;
        }
        if !self.phases.is_empty() {
            let scale = (2.0 / self.phases.len() as f64).sqrt();
            let arg = &self.freqs * x + &self.phases;
            for v in arg.iter() {
                z[k] = scale * v.cos();
                k += 1;
            }
        }
        z
    }
}

pub fn dictionary_eval(d: &Dictionary, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("x", x, d.state_dim)?;
    check_finite_vec("x", x)?;
    Ok(d.eval_unchecked(x))
}

/// `z⁺ = A_φz + B_φu + c_φ`, `y = C_φz`, with one-step residual bound `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel {
    pub dict: Dictionary,
    pub a_phi: DMatrix<f64>,
    pub b_phi: DMatrix<f64>,
    /// Always zero: the offset is carried by the constant feature.
    pub c_phi: DVector<f64>,
    pub c_out: DMatrix<f64>,
    /// Largest training residual `max_t ‖e_t‖`.
    pub epsilon: f64,
    pub rms_residual: f64,
    pub ridge: f64,
    pub snapshots: usize,
}

impl LiftedModel {
    /// Spectral radius of `A_φ` without the constant coordinate. The
    /// constant row of `A_φ` is `e₀ᵀ`, so this block alone governs how
    /// rollout errors propagate.
    pub fn decay_radius(&self) -> Result<f64> {
        let nn = self.a_phi.nrows();
        if nn <= 1 {
            return Ok(0.0);
        }
        spectral_radius(&self.a_phi.view((1, 1), (nn - 1, nn - 1)).into_owned())
    }

    pub fn step(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a_phi * z + &self.b_phi * u + &self.c_phi
    }
}

/// Ridge least squares of `φ(f(x_t, u_t))` on `[φ(x_t); u_t]` over every
/// snapshot of every trajectory.
pub fn edmd_fit(
    p: &ReservoirParams,
    data: &[Trajectory],
    dict: &Dictionary,
    ridge: f64,
    readout: Option<&Readout>,
) -> Result<LiftedModel> {
    p.validate()?;
    if dict.state_dim != p.n() {
        return Err(Error::Dimension(format!(
            "dictionary built for n = {}, reservoir has n = {}",
            dict.state_dim,
            p.n()
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidParameter(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let big_n = dict.output_dim();
    let m = p.m();
    let k = big_n + m;
    let mut regress = Vec::new();
    let mut target = Vec::new();
    for (j, traj) in data.iter().enumerate() {
        traj.validate()?;
        for (t, u) in traj.inputs.iter().enumerate() {
            let x = &traj.states[t];
            check_len(&format!("trajectory {j} state {t}"), x, p.n())?;
            check_len(&format!("trajectory {j} input {t}"), u, m)?;
            check_finite_vec(&format!("trajectory {j} state {t}"), x)?;
            let z = dict.eval_unchecked(x);
            let next = p.step_unchecked(x, u);
            let mut row = DVector::zeros(k);
            row.rows_mut(0, big_n).copy_from(&z);
            row.rows_mut(big_n, m).copy_from(u);
            regress.push(row);
            target.push(dict.eval_unchecked(&next));
        }
    }
    let snapshots = regress.len();
    if snapshots < k + 1 {
        return Err(Error::RankDeficient(format!(
            "{snapshots} snapshots for {k} regressors; need at least {}",
            k + 1
        )));
    }
    let extra = if ridge > 0.0 { k } else { 0 };
    let mut zmat = DMatrix::zeros(snapshots + extra, k);
    let mut ymat = DMatrix::zeros(snapshots + extra, big_n);
    for (i, (r, y)) in regress.iter().zip(&target).enumerate() {
        zmat.row_mut(i).copy_from(&r.transpose());
        ymat.row_mut(i).copy_from(&y.transpose());
    }
    if ridge > 0.0 {
        let s = ridge.sqrt();
        for i in 0..k {
            zmat[(snapshots + i, i)] = s;
        }
    }
    let svd = zmat.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * (snapshots + extra).max(k) as f64;
    if svd.singular_values.min() <= tol {
        return Err(Error::RankDeficient(
            "EDMD regressors are rank deficient; use ridge > 0".into(),
        ));
    }
    let theta_t = svd
        .solve(&ymat, tol)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let theta = theta_t.transpose();
    let a_phi = theta.columns(0, big_n).into_owned();
    let b_phi = theta.columns(big_n, m).into_owned();

    let c_phi = DVector::zeros(big_n);
    let mut eps = 0.0_f64;
    let mut sq = 0.0;
    for (r, y) in regress.iter().zip(&target) {
        let pred = &a_phi * r.rows(0, big_n) + &b_phi * r.rows(big_n, m) + &c_phi;
        let e = (y - pred).norm();
        eps = eps.max(e);
        sq += e * e;
    }
    let n = p.n();
    let c_out = match readout {
        Some(ro) => {
            if ro.c.ncols() != n {
                return Err(Error::Dimension(format!(
                    "readout C has {} columns, reservoir has n = {n}",
                    ro.c.ncols()
                )));
            }
            let mut c = DMatrix::zeros(ro.p(), big_n);
            c.column_mut(0).copy_from(&ro.d);
            c.columns_mut(1, n).copy_from(&ro.c);
            c
        }
        None => {
            let mut c = DMatrix::zeros(n, big_n);
            c.columns_mut(1, n).fill_with_identity();
            c
        }
    };
    Ok(LiftedModel {
        dict: dict.clone(),
        a_phi,
        b_phi,
        c_phi,
        c_out,
        epsilon: eps,
        rms_residual: (sq / snapshots as f64).sqrt(),
        ridge,
        snapshots,
    })
}

/// Per-step rollout discrepancy against the analytic accumulation bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutReport {
    /// `‖z_t − φ(x_t)‖` for `t = 1..=k`.
    pub discrepancy: Vec<f64>,
    /// `ε(1−ρᵗ)/(1−ρ)`; infinite when `ρ ≥ 1`.
    pub bound: Vec<f64>,
    pub rho: f64,
    pub violations: usize,
}

/// Rolls the lifted model forward from `φ(x_0)` with the trajectory's
/// inputs and compares against the lifted true states.
pub fn lifted_rollout_error(lm: &LiftedModel, p: &ReservoirParams, traj: &Trajectory, k: usize) -> Result<RolloutReport> {
    traj.validate()?;
    if k > traj.len() {
        return Err(Error::Dimension(format!(
            "horizon {k} exceeds trajectory length {}",
            traj.len()
        )));
    }
    if lm.dict.state_dim != p.n() {
        return Err(Error::Dimension("lifted model and reservoir disagree on n".into()));
    }
    let rho = lm.decay_radius()?;
    let mut z = dictionary_eval(&lm.dict, &traj.states[0])?;
    let mut discrepancy = Vec::with_capacity(k);
    let mut bound = Vec::with_capacity(k);
    let mut violations = 0;
    for t in 0..k {
        z = lm.step(&z, &traj.inputs[t]);
        let truth = dictionary_eval(&lm.dict, &traj.states[t + 1])?;
        let d = (&z - truth).norm();
        let steps = (t + 1) as i32;
        let b = if rho < 1.0 {
            lm.epsilon * (1.0 - rho.powi(steps)) / (1.0 - rho)
        } else {
            f64::INFINITY
        };
        if d > b {
            violations += 1;
        }
        discrepancy.push(d);
        bound.push(b);
    }
    Ok(RolloutReport {
        discrepancy,
        bound,
        rho,
        violations,
    })
}

/// Small-gain test for a random-feature reservoir in Lur'e form,
/// `κ = (1−λ) + λ‖V‖L_Φ‖W‖`.
pub fn rf_smallgain(leak: f64, v_norm: f64, l_phi: f64, w_norm: f64) -> Result<Certificate> {
    if !(leak > 0.0 && leak <= 1.0) {
        return Err(Error::LeakOutOfRange(leak));
    }
    for (name, v) in [("‖V‖", v_norm), ("L_Φ", l_phi), ("‖W‖", w_norm)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    Ok(Certificate::from_kappa(
        CertMethod::LipschitzC1,
        (1.0 - leak) + leak * v_norm * l_phi * w_norm,
    ))
}
