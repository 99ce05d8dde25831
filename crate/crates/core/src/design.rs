//! Recipes that turn a memory target into reservoir weights.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::io::rows;
use crate::linalg::{check_psd, spectral_norm, symmetrize};
use crate::reservoir::ReservoirParams;
use crate::rng::{seeded, standard_normal_mat};
use crate::stability::{certify_lipschitz, Certificate};

/// Pole radius whose modes decay by `e` in `H` steps, or by half in `H_half`.
pub fn target_radius(horizon: Option<f64>, half_life: Option<f64>) -> Result<f64> {
    let check = |what: &str, v: f64| {
        if !(v > 0.0) || v.is_nan() {
            return Err(Error::InvalidParameter(format!("{what} must be > 0, got {v}")));
        }
        Ok(v)
    };
    match (horizon, half_life) {
        (Some(h), None) => Ok((-1.0 / check("horizon", h)?).exp()),
        (None, Some(h)) => Ok(2f64.powf(-1.0 / check("half-life", h)?)),
        _ => Err(Error::InvalidParameter("give exactly one of horizon and half-life".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaChoice {
    pub gamma: f64,
    pub clipped: bool,
}

/// `γ = (r* − (1−λ))/(λs)`, clipped into `(1e-9, 1/L_σ − 1e-9)`.
pub fn gamma_for_radius(target: f64, leak: f64, slope: f64, l_sigma: f64) -> Result<GammaChoice> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidParameter(format!("target radius must lie in (0, 1), got {target}")));
    }
    if !(leak > 0.0 && leak <= 1.0) {
        return Err(Error::LeakOutOfRange(leak));
    }
    if !(slope > 0.0) || !slope.is_finite() {
        return Err(Error::InvalidParameter(format!("slope must be finite and > 0, got {slope}")));
    }
    if !(l_sigma > 0.0) || !l_sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("L_sigma must be finite and > 0, got {l_sigma}")));
    }
    if target <= 1.0 - leak {
        return Err(Error::Unreachable { target, leak });
    }
    let raw = (target - (1.0 - leak)) / (leak * slope);
    let gamma = raw.clamp(1e-9, 1.0 / l_sigma - 1e-9);
    Ok(GammaChoice {
        gamma,
        clipped: gamma != raw,
    })
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded(seed);
    let qr = standard_normal_mat(&mut rng, n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Normal matrix `QᵀΛQ` with eigenvalues `r_i e^{±jθ_i}`. A pole with
/// `θ = 0` or `θ = π` is real and takes one dimension; any other angle is a
/// conjugate pair realized as a 2×2 rotation-scaling block.
pub fn make_normal_reservoir(n: usize, radii: &[f64], angles: &[f64], seed: u64) -> Result<DMatrix<f64>> {
    if radii.len() != angles.len() {
        return Err(Error::Dimension(format!(
            "{} radii for {} angles",
            radii.len(),
            angles.len()
        )));
    }
    let mut block = DMatrix::zeros(n, n);
    let mut at = 0;
    for (&r, &theta) in radii.iter().zip(angles) {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidParameter(format!("pole radius must lie in (0, 1), got {r}")));
        }
        if !theta.is_finite() {
            return Err(Error::InvalidParameter(format!("pole angle must be finite, got {theta}")));
        }
        let real = theta == 0.0 || theta == PI;
        let size = if real { 1 } else { 2 };
        if at + size > n {
            return Err(Error::Dimension(format!("poles need more than n = {n} dimensions")));
        }
        if real {
            block[(at, at)] = if theta == 0.0 { r } else { -r };
        } else {
            let (s, c) = theta.sin_cos();
            block[(at, at)] = r * c;
            block[(at, at + 1)] = -r * s;
            block[(at + 1, at)] = r * s;
            block[(at + 1, at + 1)] = r * c;
        }
        at += size;
    }
    if at != n {
        return Err(Error::Dimension(format!("poles fill {at} of n = {n} dimensions")));
    }
    let q = random_orthogonal(n, seed);
    Ok(q.transpose() * block * q)
}

/// `k` Gaussian entries per row at seeded random columns, rescaled to
/// `‖W‖₂ = η/L_σ`.
pub fn make_sparse_reservoir(n: usize, nnz_per_row: usize, eta: f64, l_sigma: f64, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 || nnz_per_row == 0 || nnz_per_row > n {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= n, got k = {nnz_per_row}, n = {n}")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!("target norm must lie in (0, 1), got {eta}")));
    }
    if !(l_sigma > 0.0) || !l_sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("L_sigma must be finite and > 0, got {l_sigma}")));
    }
    let mut rng = seeded(seed);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut cols = sample(&mut rng, n, nnz_per_row).into_vec();
        cols.sort_unstable();
        for j in cols {
            w[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let norm = spectral_norm(&w);
    Ok(w * (eta / (l_sigma * norm)))
}

/// Gaussian input weights with every row satisfying `rᵢᵀΣ_u rᵢ = v²`, so each
/// preactivation receives input variance `v²`.
pub fn input_scaling(target_var: f64, input_cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if !(target_var >= 0.0) || !target_var.is_finite() {
        return Err(Error::InvalidParameter(format!("target variance must be finite and >= 0, got {target_var}")));
    }
    check_psd("input covariance", input_cov)?;
    let cov = symmetrize(input_cov);
    let m = cov.nrows();
    let mut rng = seeded(seed);
    let mut u = standard_normal_mat(&mut rng, n, m);
    for i in 0..n {
        let r = u.row(i).transpose();
        let var = r.dot(&(&cov * &r));
        if target_var == 0.0 {
            u.row_mut(i).fill(0.0);
        } else if !(var > 0.0) {
            return Err(Error::Singular(format!("input covariance gives row {i} zero variance")));
        } else {
            u.row_mut(i).scale_mut((target_var / var).sqrt());
        }
    }
    Ok(u)
}

fn default_slope() -> f64 {
    1.0
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_input_variance() -> f64 {
    1.0
}

/// Everything needed to build a reservoir from a memory target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub n: usize,
    pub m: usize,
    pub leak: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub half_life: Option<f64>,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Angles of the reservoir poles; defaults to a real pole at 0 followed
    /// by conjugate pairs spread over `(0, π)`.
    #[serde(default)]
    pub pole_angles: Option<Vec<f64>>,
    /// Spread of pole radii relative to the largest; all poles share the
    /// top radius when absent.
    #[serde(default)]
    pub radii_range: Option<(f64, f64)>,
    #[serde(default = "default_input_variance")]
    pub input_variance: f64,
    #[serde(default, with = "crate::io::opt_rows")]
    pub input_cov: Option<DMatrix<f64>>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignedReservoir {
    pub target_radius: f64,
    pub gamma: f64,
    pub clipped: bool,
    pub pole_radii: Vec<f64>,
    pub pole_angles: Vec<f64>,
    #[serde(rename = "W", with = "rows")]
    pub w: DMatrix<f64>,
    #[serde(rename = "U", with = "rows")]
    pub u: DMatrix<f64>,
    pub certificate: Certificate,
}

fn default_angles(n: usize) -> Vec<f64> {
    let pairs = (n - 1) / 2;
    let mut angles = vec![0.0];
    angles.extend((1..=pairs).map(|k| PI * k as f64 / (pairs + 1) as f64));
    if 1 + 2 * pairs < n {
        angles.push(PI);
    }
    angles
}

/// Log-uniform radii over `[r_min, r_max]`, largest first, scaled so the
/// first equals `gamma`.
fn spread_radii(count: usize, gamma: f64, range: Option<(f64, f64)>) -> Result<Vec<f64>> {
    let Some((lo, hi)) = range else {
        return Ok(vec![gamma; count]);
    };
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "radii range must satisfy 0 < r_min <= r_max < 1, got ({lo}, {hi})"
        )));
    }
    let denom = count.saturating_sub(1).max(1) as f64;
    Ok((0..count)
        .map(|i| {
            let r = hi * (lo / hi).powf(i as f64 / denom);
            gamma * r / hi
        })
        .collect())
}

/// Full pipeline: target radius, spectral scale, normal `W` with the
/// requested poles, scaled input weights and a contraction certificate.
pub fn design_reservoir(spec: &DesignSpec) -> Result<(ReservoirParams, DesignedReservoir)> {
    if spec.n == 0 {
        return Err(Error::Dimension("reservoir needs n >= 1".into()));
    }
    spec.activation.validate()?;
    let target = target_radius(spec.horizon, spec.half_life)?;
    let choice = gamma_for_radius(target, spec.leak, spec.slope, spec.activation.lipschitz())?;
    let angles = match &spec.pole_angles {
        Some(a) => a.clone(),
        None => default_angles(spec.n),
    };
    let radii = spread_radii(angles.len(), choice.gamma, spec.radii_range)?;
    let w = make_normal_reservoir(spec.n, &radii, &angles, spec.seed)?;
    let cov = match &spec.input_cov {
        Some(c) => c.clone(),
        None => DMatrix::identity(spec.m, spec.m),
    };
    if cov.nrows() != spec.m || cov.ncols() != spec.m {
        return Err(Error::Dimension(format!("input covariance must be {0}x{0}", spec.m)));
    }
    let u = input_scaling(spec.input_variance, &cov, spec.n, spec.seed.wrapping_add(1))?;
    let params = ReservoirParams::new(w.clone(), u.clone(), DVector::zeros(spec.n), spec.leak, spec.activation)?;
    let certificate = certify_lipschitz(&params)?;
    Ok((
        params,
        DesignedReservoir {
            target_radius: target,
            gamma: choice.gamma,
            clipped: choice.clipped,
            pole_radii: radii,
            pole_angles: angles,
            w,
            u,
            certificate,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigenvalues, spectral_radius};

    #[test]
    fn radius_from_horizon_or_half_life() {
        assert!((target_radius(Some(20.0), None).unwrap() - (-0.05f64).exp()).abs() < 1e-16);
        assert_eq!(target_radius(None, Some(1.0)).unwrap(), 0.5);
        assert!(1.0 - target_radius(Some(1e9), None).unwrap() < 1e-9);
        assert!(target_radius(Some(1.0), Some(1.0)).is_err());
        assert!(target_radius(None, None).is_err());
    }

    #[test]
    fn gamma_cases() {
        let g = gamma_for_radius(0.95, 0.5, 1.0, 1.0).unwrap();
        assert!((g.gamma - 0.9).abs() < 1e-15 && !g.clipped);
        let g = gamma_for_radius(0.95, 0.5, 1.0, 2.0).unwrap();
        assert!(g.clipped && g.gamma < 0.5 && g.gamma > 0.5 - 1e-8);
        assert_eq!(gamma_for_radius(0.4, 0.5, 1.0, 1.0).unwrap_err().code(), "target_unreachable");
    }

    #[test]
    fn normal_reservoir_spectrum() {
        let w = make_normal_reservoir(2, &[0.9], &[PI / 3.0], 4).unwrap();
        let mut eig = eigenvalues(&w).unwrap();
        eig.sort_by(|a, b| a.im.total_cmp(&b.im));
        let (s, c) = (PI / 3.0).sin_cos();
        assert!((eig[0].re - 0.9 * c).abs() < 1e-12 && (eig[0].im + 0.9 * s).abs() < 1e-12);
        assert!((eig[1].re - 0.9 * c).abs() < 1e-12 && (eig[1].im - 0.9 * s).abs() < 1e-12);
        let comm = w.transpose() * &w - &w * w.transpose();
        assert!(comm.norm() <= 1e-12);
        let one = make_normal_reservoir(1, &[0.9], &[0.0], 4).unwrap();
        assert!((one[(0, 0)] - 0.9).abs() < 1e-15);
        assert!(make_normal_reservoir(3, &[0.9], &[1.0], 4).is_err());
    }

    #[test]
    fn log_uniform_radii() {
        let radii: Vec<f64> = (0..8).map(|i| 0.5 * (0.99f64 / 0.5).powf(i as f64 / 8.0)).collect();
        let w = make_normal_reservoir(8, &radii, &[0.0; 8], 12).unwrap();
        let max = radii.iter().cloned().fold(0.0, f64::max);
        assert!((spectral_radius(&w).unwrap() - max).abs() < 1e-10);
    }

    #[test]
    fn sparse_reservoir_norm_and_pattern() {
        let w = make_sparse_reservoir(30, 4, 0.9, 1.0, 5).unwrap();
        assert!((spectral_norm(&w) - 0.9).abs() < 1e-10);
        for i in 0..30 {
            assert_eq!(w.row(i).iter().filter(|v| **v != 0.0).count(), 4);
        }
        assert_eq!(w, make_sparse_reservoir(30, 4, 0.9, 1.0, 5).unwrap());
        let dense = make_sparse_reservoir(6, 6, 0.5, 2.0, 1).unwrap();
        assert!(dense.iter().all(|v| *v != 0.0));
    }

    #[test]
    fn input_rows_hit_target_variance() {
        let u = input_scaling(1.0, &DMatrix::identity(3, 3), 10, 2).unwrap();
        for i in 0..10 {
            assert!((u.row(i).norm() - 1.0).abs() < 1e-12);
        }
        assert!((u.norm_squared() - 10.0).abs() < 1e-10);
        assert_eq!(input_scaling(0.0, &DMatrix::identity(2, 2), 4, 2).unwrap(), DMatrix::zeros(4, 2));
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let u = input_scaling(1.0, &cov, 6, 3).unwrap();
        for i in 0..6 {
            let r = u.row(i).transpose();
            assert!((r.dot(&(&cov * &r)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn designed_reservoir_meets_target() {
        let spec = DesignSpec {
            n: 7,
            m: 2,
            leak: 0.3,
            horizon: Some(25.0),
            half_life: None,
            slope: 1.0,
            activation: Activation::Tanh,
            pole_angles: None,
            radii_range: Some((0.5, 0.9)),
            input_variance: 1.0,
            input_cov: None,
            seed: 9,
        };
        let (p, out) = design_reservoir(&spec).unwrap();
        let a = DMatrix::identity(7, 7) * 0.7 + &p.w * 0.3;
        assert!((spectral_radius(&a).unwrap() - out.target_radius).abs() < 1e-10);
        assert!(out.certificate.passed());
    }
}
