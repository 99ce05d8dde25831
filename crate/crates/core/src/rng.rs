//! Seeded Gaussian sampling. ChaCha is a counter-based stream cipher, so a
//! given seed produces the same stream on every platform.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::linalg::{check_psd, symmetrize};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal_vec(rng: &mut Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Row-major fill, so the first row consumes the first `cols` draws.
pub fn standard_normal_mat(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Draws from `N(0, Σ)` using a fixed square-root factor of Σ.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
    zero: bool,
}

impl GaussianSampler {
    /// `cov` must be symmetric PSD. The Cholesky factor is used when it
    /// exists; singular covariances fall back to the eigen square root
    /// `V·diag(√max(λ,0))` so that zero directions stay exactly noise-free.
    pub fn new(what: &str, cov: &DMatrix<f64>) -> Result<Self> {
        check_psd(what, cov)?;
        let n = cov.nrows();
        if cov.iter().all(|v| *v == 0.0) {
            return Ok(Self {
                factor: DMatrix::zeros(n, n),
                zero: true,
            });
        }
        let sym = symmetrize(cov);
        if let Some(ch) = sym.clone().cholesky() {
            return Ok(Self {
                factor: ch.unpack(),
                zero: false,
            });
        }
        let eig = sym.symmetric_eigen();
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        Ok(Self {
            factor: &eig.eigenvectors * DMatrix::from_diagonal(&roots),
            zero: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        let z = standard_normal_vec(rng, self.factor.ncols());
        if self.zero {
            return DVector::zeros(self.factor.nrows());
        }
        &self.factor * z
    }
}
