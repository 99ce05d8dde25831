use nalgebra::{DMatrix, DVector};

use super::SmoothedPosterior;
use crate::error::{Error, Result};
use crate::linalg::{check_len, check_psd, symmetrize};
use crate::reservoir::Readout;

/// State estimates aligned one-to-one with the outputs they explain.
#[derive(Debug, Clone, PartialEq)]
pub enum StateEstimates {
    /// Point states with no uncertainty.
    Raw(Vec<DVector<f64>>),
    /// Means and covariances, e.g. from a smoother.
    Gaussian {
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
    },
}

impl StateEstimates {
    /// Smoothed marginals `x_{1..T}`, matching observations `y_1..y_T`.
    pub fn from_posterior(post: &SmoothedPosterior) -> Result<Self> {
        if !post.is_smoothed() {
            return Err(Error::InvalidParameter("posterior has not been smoothed".into()));
        }
        Ok(Self::Gaussian {
            means: post.smoothed_means[1..].to_vec(),
            covs: post.smoothed_covs[1..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Raw(x) => x.len(),
            Self::Gaussian { means, .. } => means.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn means(&self) -> &[DVector<f64>] {
        match self {
            Self::Raw(x) => x,
            Self::Gaussian { means, .. } => means,
        }
    }

    fn cov(&self, t: usize) -> Option<&DMatrix<f64>> {
        match self {
            Self::Raw(_) => None,
            Self::Gaussian { covs, .. } => Some(&covs[t]),
        }
    }

    fn check(&self, outputs: &[DVector<f64>]) -> Result<(usize, usize)> {
        if self.len() != outputs.len() || self.is_empty() {
            return Err(Error::Dimension(format!(
                "need equally many (>= 1) states and outputs, got {} and {}",
                self.len(),
                outputs.len()
            )));
        }
        let n = self.means()[0].len();
        let p = outputs[0].len();
        for (t, x) in self.means().iter().enumerate() {
            check_len(&format!("state {t}"), x, n)?;
            check_len(&format!("output {t}"), &outputs[t], p)?;
            if let Some(c) = self.cov(t) {
                if c.nrows() != n || c.ncols() != n {
                    return Err(Error::Dimension(format!("state covariance {t} must be {n}x{n}")));
                }
            }
        }
        Ok((n, p))
    }

    /// `Σ_t (P_t + x̂_t x̂_tᵀ)` around `center`, and `Σ_t (y_t − ȳ)(x̂_t − x̄)ᵀ`.
    fn moments(
        &self,
        outputs: &[DVector<f64>],
        x_center: &DVector<f64>,
        y_center: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = x_center.len();
        let p = y_center.len();
        let mut gram = DMatrix::zeros(n, n);
        let mut cross = DMatrix::zeros(p, n);
        for (t, x) in self.means().iter().enumerate() {
            let dx = x - x_center;
            gram += &dx * dx.transpose();
            if let Some(c) = self.cov(t) {
                gram += c;
            }
            cross += (&outputs[t] - y_center) * dx.transpose();
        }
        (symmetrize(&gram), cross)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutOptions {
    pub ridge: f64,
    /// Fit `d` by centering states and outputs; otherwise `d = 0`.
    pub fit_intercept: bool,
}

impl Default for ReadoutOptions {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            fit_intercept: true,
        }
    }
}

fn mean_of(v: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::zeros(v[0].len());
    for x in v {
        acc += x;
    }
    acc / v.len() as f64
}

/// `Ĉ = (Σ y_t x̂_tᵀ)(Σ X̂_t + λ_r I)⁻¹` with `X̂_t = P_t + x̂_t x̂_tᵀ`.
pub fn readout_ml(states: &StateEstimates, outputs: &[DVector<f64>], opts: ReadoutOptions) -> Result<Readout> {
    let (n, p) = states.check(outputs)?;
    if !(opts.ridge >= 0.0) || !opts.ridge.is_finite() {
        return Err(Error::InvalidParameter(format!("ridge must be finite and >= 0, got {}", opts.ridge)));
    }
    let (x_bar, y_bar) = if opts.fit_intercept {
        (mean_of(states.means()), mean_of(outputs))
    } else {
        (DVector::zeros(n), DVector::zeros(p))
    };
    let (gram, cross) = states.moments(outputs, &x_bar, &y_bar);
    let reg = gram + DMatrix::identity(n, n) * opts.ridge;
    let ch = reg
        .cholesky()
        .ok_or_else(|| Error::Singular("state Gram; use ridge > 0".into()))?;
    let c = ch.solve(&cross.transpose()).transpose();
    let d = &y_bar - &c * &x_bar;
    Readout::new(c, d)
}

/// Gaussian posterior over `vec(C)` (column-major) with prior `N(0, τ⁻¹I)`
/// and precision `Λ = τI + G ⊗ R⁻¹`, `G = Σ X̂_t`. The precision is kept in
/// factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesReadout {
    pub mean: Readout,
    pub gram: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
    pub tau: f64,
}

const DENSE_LIMIT: usize = 10_000;

impl BayesReadout {
    /// Dense `Λ`; refused when `p·n > 10⁴`.
    pub fn precision_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.gram.nrows();
        let p = self.r_inv.nrows();
        if p * n > DENSE_LIMIT {
            return Err(Error::InvalidParameter(format!(
                "dense precision of size {} exceeds the limit {DENSE_LIMIT}",
                p * n
            )));
        }
        Ok(self.gram.kronecker(&self.r_inv) + DMatrix::identity(p * n, p * n) * self.tau)
    }

    /// Posterior variance of each entry `C_ij`, shaped `p×n`.
    pub fn entry_variances(&self) -> DMatrix<f64> {
        let eg = symmetrize(&self.gram).symmetric_eigen();
        let er = symmetrize(&self.r_inv).symmetric_eigen();
        let k = DMatrix::from_fn(er.eigenvalues.len(), eg.eigenvalues.len(), |a, b| {
            1.0 / (self.tau + er.eigenvalues[a] * eg.eigenvalues[b])
        });
        let vr2 = er.eigenvectors.component_mul(&er.eigenvectors);
        let vg2 = eg.eigenvectors.component_mul(&eg.eigenvectors);
        vr2 * k * vg2.transpose()
    }
}

/// Posterior mean `C` solving `τC + R⁻¹CG = R⁻¹Σ y_t x̂_tᵀ`, computed in the
/// joint eigenbasis of `R⁻¹` and `G`. No intercept is fitted.
pub fn readout_bayes(states: &StateEstimates, outputs: &[DVector<f64>], tau: f64, r: &DMatrix<f64>) -> Result<BayesReadout> {
    let (n, p) = states.check(outputs)?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("prior precision must be finite and > 0, got {tau}")));
    }
    if r.nrows() != p || r.ncols() != p {
        return Err(Error::Dimension(format!("R must be {p}x{p}")));
    }
    check_psd("R", r)?;
    let r_chol = symmetrize(r)
        .cholesky()
        .ok_or_else(|| Error::Singular("R must be positive definite".into()))?;
    let r_inv = symmetrize(&r_chol.inverse());
    let (gram, cross) = states.moments(outputs, &DVector::zeros(n), &DVector::zeros(p));

    let eg = gram.clone().symmetric_eigen();
    let er = r_inv.clone().symmetric_eigen();
    let rhs = er.eigenvectors.transpose() * (&r_inv * cross) * &eg.eigenvectors;
    let scaled = DMatrix::from_fn(p, n, |i, j| rhs[(i, j)] / (tau + er.eigenvalues[i] * eg.eigenvalues[j]));
    let c = &er.eigenvectors * scaled * eg.eigenvectors.transpose();
    Ok(BayesReadout {
        mean: Readout::new(c, DVector::zeros(p))?,
        gram,
        r_inv,
        tau,
    })
}
